#include "protum/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "protum/error.hpp"

namespace protum {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 56;

template <typename... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <typename... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class ByteCursor {
public:
    ByteCursor(const std::vector<unsigned char>& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
    std::uint64_t u64() { return take(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::uint64_t take(std::size_t n) {
        if (remaining() < n) fail(ErrorKind::TruncatedFile, where_ + " is truncated");
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    const std::vector<unsigned char>& bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

}  // namespace

HeadKind kind_of(const Head& head) {
    return std::holds_alternative<BaseHead>(head) ? HeadKind::base : HeadKind::res;
}

std::size_t head_layers(const Head& head) {
    return std::visit([](const auto& h) { return h.n_layers(); }, head);
}

std::size_t head_dim(const Head& head) {
    return std::visit([](const auto& h) { return h.dim(); }, head);
}

std::size_t head_classes(const Head& head) {
    return std::visit([](const auto& h) { return h.classes(); }, head);
}

std::size_t param_count(const Head& head) {
    return std::visit([](const auto& h) { return param_count(h); }, head);
}

std::vector<std::span<const float>> parameter_arrays(const Head& head) {
    return std::visit([](const auto& h) { return h.parameter_arrays(); }, head);
}

std::vector<float> head_forward(const Head& head, const PooledStates& p) {
    return std::visit(overloaded{[&](const BaseHead& h) { return base_forward(p, h); },
                                 [&](const ResStack& s) { return res_forward(p, s).logits; }},
                      head);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::vector<unsigned char> bytes(kMagic, kMagic + 4);
    put_u32(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(kind_of(ckpt.head)));
    put_u32(bytes, static_cast<std::uint32_t>(head_layers(ckpt.head)));
    put_u32(bytes, static_cast<std::uint32_t>(head_dim(ckpt.head)));
    put_u32(bytes, static_cast<std::uint32_t>(head_classes(ckpt.head)));
    LayerSelector selector = LayerSelector::single(0);
    std::uint32_t stride = 0;
    std::uint32_t start = 0;
    if (const auto* base = std::get_if<BaseHead>(&ckpt.head)) {
        selector = base->selector();
    } else {
        const auto& stack = std::get<ResStack>(ckpt.head);
        stride = static_cast<std::uint32_t>(stack.stride());
        start = static_cast<std::uint32_t>(stack.start());
    }
    put_u32(bytes, stride);
    put_u32(bytes, start);
    put_u32(bytes, static_cast<std::uint32_t>(selector.layer_index));
    put_u32(bytes, selector.kind == LayerSelector::Kind::single ? 0U : 1U);
    put_u32(bytes, static_cast<std::uint32_t>(selector.last_k));
    put_u32(bytes, selector.cross_mode == PoolingMode::max ? 0U : 1U);
    put_u32(bytes, ckpt.pooling == PoolingMode::max ? 0U : 1U);
    const auto arrays = parameter_arrays(ckpt.head);
    put_u32(bytes, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        put_u64(bytes, a.size());
        for (float v : a) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::IoError, "write to '" + path.string() + "' failed");

    std::ofstream side(sidecar_path(path), std::ios::trunc);
    if (!side) fail(ErrorKind::IoError, "cannot write sidecar for '" + path.string() + "'");
    side << checkpoint_metadata(ckpt).dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint '" + path.string() + "'";
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::FormatError, where + " has bad magic");
    if (bytes.size() < kHeaderSize) fail(ErrorKind::TruncatedFile, where + " header is truncated");

    ByteCursor cur(bytes, where);
    cur.u32();  // magic
    if (cur.u32() != kVersion) fail(ErrorKind::FormatError, where + " has unsupported version");
    const std::uint32_t kind = cur.u32();
    const std::uint32_t n = cur.u32();
    const std::uint32_t m = cur.u32();
    const std::uint32_t c = cur.u32();
    const std::uint32_t stride = cur.u32();
    const std::uint32_t start = cur.u32();
    const auto layer_index = static_cast<std::int32_t>(cur.u32());
    const std::uint32_t selector_kind = cur.u32();
    const std::uint32_t last_k = cur.u32();
    const std::uint32_t cross_mode = cur.u32();
    const std::uint32_t pooling = cur.u32();
    const std::uint32_t array_count = cur.u32();
    if (kind > 1 || selector_kind > 1 || cross_mode > 1 || pooling > 1) {
        fail(ErrorKind::FormatError, where + " has an invalid enum field");
    }

    auto build = [&]() -> Head {
        try {
            if (kind == 0) {
                const auto selector = selector_kind == 0
                                          ? LayerSelector::single(layer_index)
                                          : LayerSelector::cross(last_k, cross_mode == 0 ? PoolingMode::max
                                                                                        : PoolingMode::avg);
                return BaseHead(n, m, c, selector);
            }
            return ResStack(n, m, c, stride, start);
        } catch (const Error& e) {
            fail(ErrorKind::FormatError, where + " metadata is inconsistent: " + e.what());
        }
    };
    Checkpoint ckpt{build(), pooling == 0 ? PoolingMode::max : PoolingMode::avg};

    auto fill = [&](std::vector<std::span<float>> arrays) {
        if (arrays.size() != array_count) {
            fail(ErrorKind::FormatError, where + " has " + std::to_string(array_count) + " arrays, expected " +
                                             std::to_string(arrays.size()));
        }
        for (auto& a : arrays) {
            const std::uint64_t length = cur.u64();
            if (length != a.size()) fail(ErrorKind::FormatError, where + " array length mismatch");
            if (cur.remaining() / 4 < length) fail(ErrorKind::TruncatedFile, where + " is truncated");
            for (float& v : a) {
                v = cur.f32();
                if (!std::isfinite(v)) fail(ErrorKind::CorruptRecord, where + " has a non-finite parameter");
            }
        }
    };
    std::visit([&](auto& h) { fill(h.parameter_arrays()); }, ckpt.head);
    if (cur.remaining() != 0) fail(ErrorKind::FormatError, where + " has trailing bytes");
    return ckpt;
}

nlohmann::json checkpoint_metadata(const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = "PRCK";
    j["version"] = kVersion;
    j["head"] = kind_of(ckpt.head) == HeadKind::base ? "base" : "res";
    j["N"] = head_layers(ckpt.head);
    j["M"] = head_dim(ckpt.head);
    j["C"] = head_classes(ckpt.head);
    j["pooling"] = to_string(ckpt.pooling);
    j["param_count"] = param_count(ckpt.head);
    if (const auto* base = std::get_if<BaseHead>(&ckpt.head)) {
        j["layer"] = base->selector().label();
    } else {
        const auto& stack = std::get<ResStack>(ckpt.head);
        j["K"] = stack.stride();
        j["S"] = stack.start();
        j["units"] = stack.unit_count();
    }
    return j;
}

}  // namespace protum
