#include "protum/tensor_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>

#include "protum/error.hpp"

namespace protum {

namespace {

void put_u32(unsigned char* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

void put_u64(unsigned char* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void encode_floats(std::span<const float> values, unsigned char* out) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out, values.data(), values.size() * sizeof(float));
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            put_u32(out + 4 * i, std::bit_cast<std::uint32_t>(values[i]));
        }
    }
}

void decode_floats(const unsigned char* in, std::span<float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), in, values.size() * sizeof(float));
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = std::bit_cast<float>(get_u32(in + 4 * i));
        }
    }
}

std::array<unsigned char, kTensorHeaderSize> encode_header(const TensorFileHeader& h) {
    std::array<unsigned char, kTensorHeaderSize> b{};
    std::memcpy(b.data(), kTensorMagic, 4);
    put_u32(b.data() + 4, h.version);
    put_u32(b.data() + 8, h.n_layers);
    put_u32(b.data() + 12, h.dim);
    put_u32(b.data() + 16, h.classes);
    put_u64(b.data() + 20, h.example_count);
    put_u32(b.data() + 28, h.dtype);
    return b;
}

}  // namespace

void TensorFileHeader::validate() const {
    if (version != kTensorVersion) {
        fail(ErrorKind::FormatError, "unsupported PRTB version " + std::to_string(version));
    }
    if (dtype != kDtypeF32) fail(ErrorKind::FormatError, "unsupported dtype code " + std::to_string(dtype));
    if (n_layers == 0 || dim == 0 || classes == 0) {
        fail(ErrorKind::FormatError, "header counts N, M, C must be at least 1");
    }
}

HiddenTensor::HiddenTensor(std::uint64_t id, std::int32_t label_, std::uint32_t n, std::uint32_t w,
                           std::uint32_t m)
    : example_id(id), label(label_), n_layers(n), width(w), dim(m),
      values(static_cast<std::size_t>(n) * w * m, 0.0f) {}

std::uint64_t record_size(const TensorFileHeader& header, std::uint32_t width) {
    return kRecordPrefixSize +
           4ULL * static_cast<std::uint64_t>(header.n_layers) * header.dim * static_cast<std::uint64_t>(width);
}

TensorWriter::TensorWriter(const std::filesystem::path& path, const TensorFileHeader& header)
    : path_(path), header_(header) {
    header_.validate();
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    const auto bytes = encode_header(header_);
    out_.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

TensorWriter::~TensorWriter() {
    try {
        close();
    } catch (...) {
    }
}

void TensorWriter::write(const HiddenTensor& t) {
    if (!out_.is_open()) fail(ErrorKind::IoError, "writer for '" + path_.string() + "' is closed");
    if (t.n_layers != header_.n_layers || t.dim != header_.dim) {
        fail(ErrorKind::ShapeMismatch, "example " + std::to_string(t.example_id) + " has N=" +
                                           std::to_string(t.n_layers) + " M=" + std::to_string(t.dim) +
                                           ", header has N=" + std::to_string(header_.n_layers) +
                                           " M=" + std::to_string(header_.dim));
    }
    if (t.width == 0) fail(ErrorKind::ShapeMismatch, "example " + std::to_string(t.example_id) + " has W=0");
    if (t.values.size() != static_cast<std::size_t>(t.n_layers) * t.width * t.dim) {
        fail(ErrorKind::ShapeMismatch, "example " + std::to_string(t.example_id) + " value count mismatch");
    }
    if (t.label < -1 || t.label >= static_cast<std::int32_t>(header_.classes)) {
        fail(ErrorKind::ShapeMismatch, "example " + std::to_string(t.example_id) + " label " +
                                           std::to_string(t.label) + " outside [-1, C)");
    }
    for (float v : t.values) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::NonFiniteValue, "example " + std::to_string(t.example_id) + " has a non-finite value");
        }
    }
    buffer_.resize(kRecordPrefixSize + t.values.size() * 4);
    put_u64(buffer_.data(), t.example_id);
    put_u32(buffer_.data() + 8, static_cast<std::uint32_t>(t.label));
    put_u32(buffer_.data() + 12, t.width);
    encode_floats(t.values, buffer_.data() + kRecordPrefixSize);
    out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    if (!out_) fail(ErrorKind::IoError, "write to '" + path_.string() + "' failed");
    ++written_;
}

void TensorWriter::close() {
    if (!out_.is_open()) return;
    unsigned char count[8];
    put_u64(count, written_);
    out_.seekp(20);
    out_.write(reinterpret_cast<const char*>(count), 8);
    out_.close();
    if (!out_) fail(ErrorKind::IoError, "finalizing '" + path_.string() + "' failed");
    header_.example_count = written_;
}

TensorReader::TensorReader(const std::filesystem::path& path) : path_(path) {
    std::error_code ec;
    file_size_ = std::filesystem::file_size(path, ec);
    if (ec) fail(ErrorKind::IoError, "cannot stat '" + path.string() + "': " + ec.message());
    in_.open(path, std::ios::binary);
    if (!in_) fail(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    if (file_size_ < 4) fail(ErrorKind::FormatError, "'" + path.string() + "' is too short for a PRTB header");

    std::array<unsigned char, kTensorHeaderSize> b{};
    in_.read(reinterpret_cast<char*>(b.data()), 4);
    if (std::memcmp(b.data(), kTensorMagic, 4) != 0) {
        fail(ErrorKind::FormatError, "'" + path.string() + "' has bad magic");
    }
    if (file_size_ < kTensorHeaderSize) fail(ErrorKind::TruncatedFile, "'" + path.string() + "' header truncated");
    in_.read(reinterpret_cast<char*>(b.data() + 4), kTensorHeaderSize - 4);
    header_.version = get_u32(b.data() + 4);
    header_.n_layers = get_u32(b.data() + 8);
    header_.dim = get_u32(b.data() + 12);
    header_.classes = get_u32(b.data() + 16);
    header_.example_count = get_u64(b.data() + 20);
    header_.dtype = get_u32(b.data() + 28);
    header_.validate();
    offset_ = kTensorHeaderSize;
}

std::optional<HiddenTensor> TensorReader::next() {
    if (read_ == header_.example_count) {
        if (offset_ != file_size_) {
            fail(ErrorKind::FormatError, "'" + path_.string() + "' has " + std::to_string(file_size_ - offset_) +
                                             " trailing bytes after " + std::to_string(read_) + " records");
        }
        return std::nullopt;
    }
    const std::string where = "'" + path_.string() + "' record " + std::to_string(read_);
    if (file_size_ - offset_ < kRecordPrefixSize) fail(ErrorKind::TruncatedFile, where + " prefix truncated");

    unsigned char prefix[kRecordPrefixSize];
    in_.read(reinterpret_cast<char*>(prefix), kRecordPrefixSize);
    const std::uint64_t id = get_u64(prefix);
    const auto label = static_cast<std::int32_t>(get_u32(prefix + 8));
    const std::uint32_t width = get_u32(prefix + 12);
    if (width == 0) fail(ErrorKind::CorruptRecord, where + " has W=0");
    if (label < -1 || label >= static_cast<std::int32_t>(header_.classes)) {
        fail(ErrorKind::CorruptRecord, where + " label " + std::to_string(label) + " outside [-1, C)");
    }
    offset_ += kRecordPrefixSize;

    // Compare against what remains before multiplying so a corrupt W cannot
    // trigger a huge allocation.
    const std::uint64_t per_pos = 4ULL * header_.n_layers * header_.dim;
    const std::uint64_t remaining = file_size_ - offset_;
    if (width > remaining / per_pos) {
        fail(ErrorKind::TruncatedFile, where + " claims W=" + std::to_string(width) + " but only " +
                                           std::to_string(remaining) + " bytes remain");
    }
    const std::uint64_t payload = per_pos * width;

    HiddenTensor t(id, label, header_.n_layers, width, header_.dim);
    buffer_.resize(payload);
    in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(payload));
    if (!in_) fail(ErrorKind::IoError, where + " read failed");
    decode_floats(buffer_.data(), t.values);
    for (float v : t.values) {
        if (!std::isfinite(v)) fail(ErrorKind::CorruptRecord, where + " has a non-finite value");
    }
    offset_ += payload;
    ++read_;
    return t;
}

void write_tensors(const std::filesystem::path& path, const TensorFileHeader& header,
                   std::span<const HiddenTensor> tensors) {
    TensorWriter writer(path, header);
    for (const auto& t : tensors) writer.write(t);
    writer.close();
}

TensorFile read_tensors(const std::filesystem::path& path) {
    TensorReader reader(path);
    TensorFile file;
    file.header = reader.header();
    while (auto t = reader.next()) file.tensors.push_back(std::move(*t));
    return file;
}

nlohmann::json inspect_tensors(const std::filesystem::path& path) {
    TensorReader reader(path);
    const auto& h = reader.header();
    nlohmann::json records = nlohmann::json::array();
    std::map<std::uint32_t, std::uint64_t> widths;
    std::map<std::int32_t, std::uint64_t> labels;
    while (auto t = reader.next()) {
        records.push_back({{"id", t->example_id}, {"label", t->label}, {"W", t->width}});
        ++widths[t->width];
        ++labels[t->label];
    }
    nlohmann::json width_hist = nlohmann::json::object();
    for (auto [w, n] : widths) width_hist[std::to_string(w)] = n;
    nlohmann::json label_hist = nlohmann::json::object();
    for (auto [l, n] : labels) label_hist[std::to_string(l)] = n;
    return {{"header",
             {{"magic", "PRTB"},
              {"version", h.version},
              {"N", h.n_layers},
              {"M", h.dim},
              {"C", h.classes},
              {"example_count", h.example_count},
              {"dtype", "f32"}}},
            {"width_counts", width_hist},
            {"label_counts", label_hist},
            {"records", records}};
}

}  // namespace protum
