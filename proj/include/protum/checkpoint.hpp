#pragma once

// Trained head checkpoint. The binary file is the only artifact needed to run
// a head; a JSON sidecar (<path>.json) mirrors the metadata.
//
//   0  char[4] "PRCK"
//   4  u32 version (1)
//   8  u32 head kind (0 = base, 1 = res)
//  12  u32 N, u32 M, u32 C, u32 K, u32 S     (K = S = 0 for base)
//  32  i32 layer index                        (0 for res)
//  36  u32 selector kind (0 = single, 1 = cross), u32 cross last_k, u32 cross mode
//  48  u32 pooling mode over mask width (0 = max, 1 = avg)
//  52  u32 array count
//  56  per array: u64 length, f32[length]     (declaration order)

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include <json.hpp>

#include "protum/heads.hpp"

namespace protum {

enum class HeadKind : std::uint32_t { base = 0, res = 1 };

using Head = std::variant<BaseHead, ResStack>;

struct Checkpoint {
    Head head;
    PoolingMode pooling = PoolingMode::max;
};

HeadKind kind_of(const Head& head);
std::size_t head_layers(const Head& head);
std::size_t head_dim(const Head& head);
std::size_t head_classes(const Head& head);
std::size_t param_count(const Head& head);
std::vector<std::span<const float>> parameter_arrays(const Head& head);

std::vector<float> head_forward(const Head& head, const PooledStates& p);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_metadata(const Checkpoint& ckpt);

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

}  // namespace protum
