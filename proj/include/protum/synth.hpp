#pragma once

// Synthetic mask-position hidden states with a controllable class signal per
// layer: class c at layer l, mask position w is s_l * mu_c + noise, with the
// class means mu_c orthonormal.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "protum/tensor_store.hpp"

namespace protum {

struct SynthSpec {
    std::uint32_t n_layers = 12;
    std::uint32_t dim = 32;
    std::uint32_t width = 1;
    std::uint32_t classes = 2;
    std::size_t train_count = 400;
    std::size_t val_count = 200;
    std::vector<double> layer_signal;  // one entry per layer, in [0, 1]
    double noise_sigma = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthData {
    TensorFileHeader header;
    std::vector<HiddenTensor> train;
    std::vector<HiddenTensor> val;
    std::vector<std::vector<double>> class_means;  // classes x dim
};

SynthData generate(const SynthSpec& spec);

/// Streams both splits to PRTB files; output is bitwise-identical for a seed.
void generate_files(const SynthSpec& spec, const std::filesystem::path& train_path,
                    const std::filesystem::path& val_path);

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& spec);

}  // namespace protum
