#include "protum/heads.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>

#include "protum/error.hpp"

namespace protum {

namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() noexcept { return g_revision.fetch_add(1, std::memory_order_relaxed); }

void check_dims(const PooledStates& p, std::size_t n_layers, std::size_t dim) {
    if (p.n_layers != n_layers || p.dim != dim) {
        fail(ErrorKind::ShapeMismatch, "pooled states are " + std::to_string(p.n_layers) + "x" +
                                           std::to_string(p.dim) + ", head expects " + std::to_string(n_layers) +
                                           "x" + std::to_string(dim));
    }
}

void check_dlogits(std::span<const double> dlogits, std::size_t classes) {
    if (dlogits.size() != classes) {
        fail(ErrorKind::ShapeMismatch, "dlogits has " + std::to_string(dlogits.size()) + " entries, expected " +
                                           std::to_string(classes));
    }
}

// logits = W x + b, summed in double.
template <typename Vec>
std::vector<float> affine_apply(const Affine& a, const Vec& x) {
    std::vector<float> y(a.out);
    for (std::size_t i = 0; i < a.out; ++i) {
        double acc = a.bias[i];
        const float* row = a.weight.data() + i * a.in;
        for (std::size_t k = 0; k < a.in; ++k) acc += static_cast<double>(row[k]) * static_cast<double>(x[k]);
        y[i] = static_cast<float>(acc);
    }
    return y;
}

void add_outer(std::vector<double>& dw, std::vector<double>& db, std::span<const double> dy,
               std::span<const float> x) {
    const std::size_t in = x.size();
    for (std::size_t i = 0; i < dy.size(); ++i) {
        const double g = dy[i];
        db[i] += g;
        if (g == 0.0) continue;
        double* row = dw.data() + i * in;
        for (std::size_t k = 0; k < in; ++k) row[k] += g * static_cast<double>(x[k]);
    }
}

GradientBundle to_bundle(const GradientAccumulator& acc) {
    GradientBundle out;
    out.arrays.reserve(acc.arrays.size());
    for (const auto& a : acc.arrays) out.arrays.emplace_back(a.begin(), a.end());
    return out;
}

}  // namespace

PoolingMode parse_pooling_mode(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "max") return PoolingMode::max;
    if (lower == "avg" || lower == "mean") return PoolingMode::avg;
    fail(ErrorKind::InvalidConfig, "unknown pooling mode '" + name + "'");
}

std::string to_string(PoolingMode mode) { return mode == PoolingMode::max ? "max" : "avg"; }

PooledStates pool(const HiddenTensor& h, PoolingMode mode) {
    PooledStates out;
    out.n_layers = h.n_layers;
    out.dim = h.dim;
    out.mode = mode;
    out.values.resize(static_cast<std::size_t>(h.n_layers) * h.dim);
    for (std::size_t l = 0; l < h.n_layers; ++l) {
        for (std::size_t m = 0; m < h.dim; ++m) {
            float& dst = out.values[l * h.dim + m];
            if (mode == PoolingMode::max) {
                float best = h.at(l, 0, m);
                for (std::size_t w = 1; w < h.width; ++w) best = std::max(best, h.at(l, w, m));
                dst = best;
            } else {
                double sum = 0.0;
                for (std::size_t w = 0; w < h.width; ++w) sum += h.at(l, w, m);
                dst = static_cast<float>(sum / static_cast<double>(h.width));
            }
        }
    }
    return out;
}

std::size_t resolve_layer(int layer_index, std::size_t n_layers) {
    const auto n = static_cast<long long>(n_layers);
    const long long j = layer_index < 0 ? n + 1 + layer_index : layer_index;
    if (layer_index == 0 || j < 1 || j > n) {
        fail(ErrorKind::LayerOutOfRange,
             "layer index " + std::to_string(layer_index) + " does not resolve for N=" + std::to_string(n_layers));
    }
    return static_cast<std::size_t>(j);
}

std::vector<float> cross_layer_pool(const PooledStates& p, std::size_t last_k, PoolingMode mode) {
    if (last_k < 1 || last_k > p.n_layers) {
        fail(ErrorKind::LayerOutOfRange,
             "cross-layer pool over last " + std::to_string(last_k) + " of N=" + std::to_string(p.n_layers));
    }
    const std::size_t first = p.n_layers - last_k + 1;
    std::vector<float> out(p.dim);
    for (std::size_t m = 0; m < p.dim; ++m) {
        if (mode == PoolingMode::max) {
            float best = p.row(first)[m];
            for (std::size_t l = first + 1; l <= p.n_layers; ++l) best = std::max(best, p.row(l)[m]);
            out[m] = best;
        } else {
            double sum = 0.0;
            for (std::size_t l = first; l <= p.n_layers; ++l) sum += p.row(l)[m];
            out[m] = static_cast<float>(sum / static_cast<double>(last_k));
        }
    }
    return out;
}

LayerSelector LayerSelector::parse(const std::string& text) {
    std::string upper = text;
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    auto parse_int = [&](std::string_view digits, auto& value) {
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
        if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
            fail(ErrorKind::LayerOutOfRange, "cannot parse layer selector '" + text + "'");
        }
    };
    if (upper.rfind("MAX", 0) == 0 || upper.rfind("AVG", 0) == 0) {
        std::size_t k = 0;
        parse_int(std::string_view(upper).substr(3), k);
        return cross(k, upper[0] == 'M' ? PoolingMode::max : PoolingMode::avg);
    }
    int index = 0;
    parse_int(upper, index);
    return single(index);
}

std::string LayerSelector::label() const {
    if (kind == Kind::single) return std::to_string(layer_index);
    return (cross_mode == PoolingMode::max ? "MAX" : "AVG") + std::to_string(last_k);
}

void LayerSelector::validate(std::size_t n_layers) const {
    if (kind == Kind::single) {
        resolve_layer(layer_index, n_layers);
    } else if (last_k < 1 || last_k > n_layers) {
        fail(ErrorKind::LayerOutOfRange,
             "cross-layer pool over last " + std::to_string(last_k) + " of N=" + std::to_string(n_layers));
    }
}

std::vector<float> select_features(const PooledStates& p, const LayerSelector& selector) {
    if (selector.kind == LayerSelector::Kind::cross) return cross_layer_pool(p, selector.last_k, selector.cross_mode);
    const auto row = p.row(resolve_layer(selector.layer_index, p.n_layers));
    return {row.begin(), row.end()};
}

GradientAccumulator::GradientAccumulator(const std::vector<std::size_t>& sizes) {
    arrays.reserve(sizes.size());
    for (std::size_t n : sizes) arrays.emplace_back(n, 0.0);
}

void GradientAccumulator::clear() {
    for (auto& a : arrays) std::fill(a.begin(), a.end(), 0.0);
}

void GradientAccumulator::add(const GradientAccumulator& other) {
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        auto& dst = arrays[i];
        const auto& src = other.arrays[i];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

// --- BaseHead ---------------------------------------------------------------

BaseHead::BaseHead(std::size_t n_layers, std::size_t dim, std::size_t classes, LayerSelector selector)
    : n_layers_(n_layers), dim_(dim), classes_(classes), selector_(selector), classifier_(classes, dim) {
    if (n_layers == 0 || dim == 0 || classes < 2) {
        fail(ErrorKind::ShapeMismatch, "base head needs N >= 1, M >= 1, C >= 2");
    }
    selector_.validate(n_layers);
}

std::vector<std::span<float>> BaseHead::parameter_arrays() {
    return {classifier_.weight, classifier_.bias};
}

std::vector<std::span<const float>> BaseHead::parameter_arrays() const {
    return {classifier_.weight, classifier_.bias};
}

std::vector<std::size_t> BaseHead::parameter_sizes() const {
    return {classifier_.weight.size(), classifier_.bias.size()};
}

std::vector<float> base_forward(const PooledStates& p, const BaseHead& head) {
    check_dims(p, head.n_layers(), head.dim());
    return affine_apply(head.classifier(), select_features(p, head.selector()));
}

void base_backward_accumulate(const PooledStates& p, const BaseHead& head, std::span<const double> dlogits,
                              GradientAccumulator& acc) {
    check_dims(p, head.n_layers(), head.dim());
    check_dlogits(dlogits, head.classes());
    const auto x = select_features(p, head.selector());
    add_outer(acc.arrays[0], acc.arrays[1], dlogits, x);
}

GradientBundle base_backward(const PooledStates& p, const BaseHead& head, std::span<const double> dlogits) {
    GradientAccumulator acc(head.parameter_sizes());
    base_backward_accumulate(p, head, dlogits, acc);
    return to_bundle(acc);
}

std::size_t param_count(const BaseHead& head) { return head.classes() * head.dim() + head.classes(); }

// --- ResStack ---------------------------------------------------------------

void ResStack::check_topology(std::size_t n_layers, std::size_t stride, std::size_t start) {
    if (stride == 0 || n_layers % stride != 0) {
        fail(ErrorKind::InvalidTopology,
             "stride K=" + std::to_string(stride) + " does not divide N=" + std::to_string(n_layers));
    }
    const std::size_t max_start = n_layers / stride;
    if (start < 1 || start > max_start) {
        fail(ErrorKind::InvalidTopology, "start S=" + std::to_string(start) + " outside [1, " +
                                             std::to_string(max_start) + "] for N=" + std::to_string(n_layers) +
                                             ", K=" + std::to_string(stride));
    }
}

ResStack::ResStack(std::size_t n_layers, std::size_t dim, std::size_t classes, std::size_t stride,
                   std::size_t start)
    : n_layers_(n_layers), dim_(dim), classes_(classes), stride_(stride), start_(start),
      classifier_(classes, dim), revision_(next_revision()) {
    if (n_layers == 0 || dim == 0 || classes < 2) {
        fail(ErrorKind::ShapeMismatch, "residual stack needs N >= 1, M >= 1, C >= 2");
    }
    check_topology(n_layers, stride, start);
    units_.assign(n_layers / stride - start + 1, Affine(dim, dim));
}

ResStack::ResStack(const ResStack& other)
    : n_layers_(other.n_layers_), dim_(other.dim_), classes_(other.classes_), stride_(other.stride_),
      start_(other.start_), units_(other.units_), classifier_(other.classifier_), revision_(next_revision()) {}

ResStack& ResStack::operator=(const ResStack& other) {
    if (this != &other) {
        n_layers_ = other.n_layers_;
        dim_ = other.dim_;
        classes_ = other.classes_;
        stride_ = other.stride_;
        start_ = other.start_;
        units_ = other.units_;
        classifier_ = other.classifier_;
        touch();
    }
    return *this;
}

void ResStack::touch() noexcept { revision_ = next_revision(); }

Affine& ResStack::mutable_unit(std::size_t i) {
    touch();
    return units_.at(i);
}

Affine& ResStack::mutable_classifier() {
    touch();
    return classifier_;
}

std::vector<std::span<float>> ResStack::parameter_arrays() {
    touch();
    std::vector<std::span<float>> out;
    for (auto& u : units_) {
        out.emplace_back(u.weight);
        out.emplace_back(u.bias);
    }
    out.emplace_back(classifier_.weight);
    out.emplace_back(classifier_.bias);
    return out;
}

std::vector<std::span<const float>> ResStack::parameter_arrays() const {
    std::vector<std::span<const float>> out;
    for (const auto& u : units_) {
        out.emplace_back(u.weight);
        out.emplace_back(u.bias);
    }
    out.emplace_back(classifier_.weight);
    out.emplace_back(classifier_.bias);
    return out;
}

std::vector<std::size_t> ResStack::parameter_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& a : parameter_arrays()) out.push_back(a.size());
    return out;
}

ResForward res_forward(const PooledStates& p, const ResStack& stack) {
    check_dims(p, stack.n_layers(), stack.dim());
    const std::size_t dim = stack.dim();
    ResForward out;
    out.cache.revision = stack.revision();
    out.cache.inputs.reserve(stack.unit_count());
    out.cache.activations.reserve(stack.unit_count());

    std::vector<double> state(dim, 0.0);
    std::vector<double> input(dim);
    for (std::size_t u = 0; u < stack.unit_count(); ++u) {
        const Affine& unit = stack.unit(u);
        const auto layer = p.row(stack.unit_layer(u));
        for (std::size_t m = 0; m < dim; ++m) input[m] = state[m] + static_cast<double>(layer[m]);

        std::vector<float> pre(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            double acc = unit.bias[i];
            const float* row = unit.weight.data() + i * dim;
            for (std::size_t k = 0; k < dim; ++k) acc += static_cast<double>(row[k]) * input[k];
            pre[i] = static_cast<float>(acc);
            state[i] = acc > 0.0 ? acc : 0.0;
        }
        out.cache.inputs.emplace_back(input.begin(), input.end());
        out.cache.activations.push_back(std::move(pre));
    }
    out.cache.final_state.assign(state.begin(), state.end());
    out.logits = affine_apply(stack.classifier(), state);
    return out;
}

void res_backward_accumulate(const ResStack& stack, const ResCache& cache, std::span<const double> dlogits,
                             GradientAccumulator& acc) {
    if (cache.revision != stack.revision() || cache.inputs.size() != stack.unit_count() ||
        cache.final_state.size() != stack.dim()) {
        fail(ErrorKind::CacheMismatch, "forward cache does not belong to the current parameters");
    }
    check_dlogits(dlogits, stack.classes());
    const std::size_t dim = stack.dim();
    const std::size_t units = stack.unit_count();
    auto& dwc = acc.arrays[2 * units];
    auto& dbc = acc.arrays[2 * units + 1];
    add_outer(dwc, dbc, dlogits, cache.final_state);

    // dstate = W_c^T dlogits
    std::vector<double> dstate(dim, 0.0);
    const Affine& cls = stack.classifier();
    for (std::size_t c = 0; c < stack.classes(); ++c) {
        const float* row = cls.weight.data() + c * dim;
        for (std::size_t m = 0; m < dim; ++m) dstate[m] += static_cast<double>(row[m]) * dlogits[c];
    }

    std::vector<double> dpre(dim);
    for (std::size_t u = units; u-- > 0;) {
        const auto& pre = cache.activations[u];
        // relu'(0) = 0
        for (std::size_t i = 0; i < dim; ++i) dpre[i] = pre[i] > 0.0f ? dstate[i] : 0.0;
        add_outer(acc.arrays[2 * u], acc.arrays[2 * u + 1], dpre, cache.inputs[u]);
        if (u == 0) break;
        // The input is state_{u-1} + pooled, so d state_{u-1} = W_u^T dpre.
        const Affine& unit = stack.unit(u);
        std::fill(dstate.begin(), dstate.end(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) {
            if (dpre[i] == 0.0) continue;
            const float* row = unit.weight.data() + i * dim;
            for (std::size_t k = 0; k < dim; ++k) dstate[k] += static_cast<double>(row[k]) * dpre[i];
        }
    }
}

GradientBundle res_backward(const ResStack& stack, const ResCache& cache, std::span<const double> dlogits) {
    GradientAccumulator acc(stack.parameter_sizes());
    res_backward_accumulate(stack, cache, dlogits, acc);
    return to_bundle(acc);
}

std::size_t res_param_count(std::size_t n_layers, std::size_t dim, std::size_t classes, std::size_t stride,
                            std::size_t start) {
    ResStack::check_topology(n_layers, stride, start);
    return (n_layers / stride - start + 1) * (dim * dim + dim) + classes * dim + classes;
}

std::size_t param_count(const ResStack& stack) {
    return res_param_count(stack.n_layers(), stack.dim(), stack.classes(), stack.stride(), stack.start());
}

}  // namespace protum
