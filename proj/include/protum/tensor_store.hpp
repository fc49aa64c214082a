#pragma once

// PRTB: per-example mask-position hidden states, N layers x W mask positions x
// M dims, little-endian f32.
//
//   header (32 bytes)
//     0  char[4] magic "PRTB"
//     4  u32     version (1)
//     8  u32     N  (transformer blocks; embedding output excluded)
//    12  u32     M  (hidden size)
//    16  u32     C  (class count)
//    20  u64     example count
//    28  u32     dtype (0 = f32)
//   record
//        u64     example id
//        i32     label, -1 when unknown
//        u32     W
//        f32[N*W*M] values, [layer][mask_pos][dim], layer 1 first

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace protum {

inline constexpr char kTensorMagic[4] = {'P', 'R', 'T', 'B'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::size_t kTensorHeaderSize = 32;
inline constexpr std::size_t kRecordPrefixSize = 16;

struct TensorFileHeader {
    std::uint32_t version = kTensorVersion;
    std::uint32_t n_layers = 0;
    std::uint32_t dim = 0;
    std::uint32_t classes = 0;
    std::uint64_t example_count = 0;
    std::uint32_t dtype = kDtypeF32;

    void validate() const;
    bool operator==(const TensorFileHeader&) const = default;
};

struct HiddenTensor {
    std::uint64_t example_id = 0;
    std::int32_t label = -1;
    std::uint32_t n_layers = 0;
    std::uint32_t width = 0;
    std::uint32_t dim = 0;
    std::vector<float> values;  // n_layers * width * dim

    HiddenTensor() = default;
    HiddenTensor(std::uint64_t id, std::int32_t label, std::uint32_t n_layers, std::uint32_t width,
                 std::uint32_t dim);

    /// `layer` is 0-based here (0 = first transformer block).
    float& at(std::size_t layer, std::size_t pos, std::size_t m) {
        return values[(layer * width + pos) * dim + m];
    }
    float at(std::size_t layer, std::size_t pos, std::size_t m) const {
        return values[(layer * width + pos) * dim + m];
    }
};

/// Streams records to disk. The header's example count is rewritten on
/// close() with the number of records actually written.
class TensorWriter {
public:
    TensorWriter(const std::filesystem::path& path, const TensorFileHeader& header);
    ~TensorWriter();
    TensorWriter(const TensorWriter&) = delete;
    TensorWriter& operator=(const TensorWriter&) = delete;

    void write(const HiddenTensor& tensor);
    void close();
    std::uint64_t written() const noexcept { return written_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    TensorFileHeader header_;
    std::uint64_t written_ = 0;
    std::vector<unsigned char> buffer_;
};

class TensorReader {
public:
    explicit TensorReader(const std::filesystem::path& path);

    const TensorFileHeader& header() const noexcept { return header_; }
    /// Next record, or nullopt once `example_count` records were read.
    std::optional<HiddenTensor> next();

private:
    std::filesystem::path path_;
    std::ifstream in_;
    TensorFileHeader header_;
    std::uint64_t file_size_ = 0;
    std::uint64_t offset_ = 0;
    std::uint64_t read_ = 0;
    std::vector<unsigned char> buffer_;
};

void write_tensors(const std::filesystem::path& path, const TensorFileHeader& header,
                   std::span<const HiddenTensor> tensors);

struct TensorFile {
    TensorFileHeader header;
    std::vector<HiddenTensor> tensors;
};

TensorFile read_tensors(const std::filesystem::path& path);

/// Header plus per-record shape summary.
nlohmann::json inspect_tensors(const std::filesystem::path& path);

/// Bytes a record with mask width `width` occupies.
std::uint64_t record_size(const TensorFileHeader& header, std::uint32_t width);

}  // namespace protum
