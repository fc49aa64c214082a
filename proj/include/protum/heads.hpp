#pragma once

// Classification heads over pooled mask-position hidden states.
//
// Layer indices follow the usual convention: positive 1..N count transformer
// blocks from the input, negative -1..-N count from the output, so -1 is the
// last block and j = N + 1 + index for negative indices.
//
// The residual stack with stride K and start S instantiates units
// u = S..N/K. Unit u reads pooled layer u*K:
//
//   state_{S-1} = 0
//   state_u     = relu(W_u (state_{u-1} + pooled[u*K]) + b_u)
//   logits      = W_c state_{N/K} + b_c
//
// Arithmetic is accumulated in double; parameters and cached activations are
// stored as float.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protum/tensor_store.hpp"

namespace protum {

enum class PoolingMode { max, avg };

PoolingMode parse_pooling_mode(const std::string& name);
std::string to_string(PoolingMode mode);

struct PooledStates {
    std::uint32_t n_layers = 0;
    std::uint32_t dim = 0;
    PoolingMode mode = PoolingMode::max;
    std::vector<float> values;  // n_layers x dim

    /// `layer` is 1-based.
    std::span<const float> row(std::size_t layer) const {
        return {values.data() + (layer - 1) * dim, dim};
    }
};

/// Pools over the mask-width axis.
PooledStates pool(const HiddenTensor& h, PoolingMode mode);

/// Resolves a signed layer index to 1..N; throws LayerOutOfRange.
std::size_t resolve_layer(int layer_index, std::size_t n_layers);

/// Element-wise max or mean over the last `last_k` pooled layers.
std::vector<float> cross_layer_pool(const PooledStates& p, std::size_t last_k, PoolingMode mode);

/// Which pooled row (or pooled group of rows) a base head reads.
struct LayerSelector {
    enum class Kind { single, cross };
    Kind kind = Kind::single;
    int layer_index = -1;
    std::size_t last_k = 0;
    PoolingMode cross_mode = PoolingMode::max;

    static LayerSelector single(int layer_index) { return {Kind::single, layer_index, 0, PoolingMode::max}; }
    static LayerSelector cross(std::size_t last_k, PoolingMode mode) { return {Kind::cross, 0, last_k, mode}; }
    /// "-3", "7", "MAX4", "AVG4".
    static LayerSelector parse(const std::string& text);
    std::string label() const;
    void validate(std::size_t n_layers) const;

    bool operator==(const LayerSelector&) const = default;
};

std::vector<float> select_features(const PooledStates& p, const LayerSelector& selector);

/// Dense map y = W x + b with W stored row-major as out x in.
struct Affine {
    std::size_t out = 0;
    std::size_t in = 0;
    std::vector<float> weight;
    std::vector<float> bias;

    Affine() = default;
    Affine(std::size_t out_, std::size_t in_) : out(out_), in(in_), weight(out_ * in_, 0.0f), bias(out_, 0.0f) {}
};

/// One array per parameter array, in declaration order.
struct GradientBundle {
    std::vector<std::vector<float>> arrays;
};

/// Double-precision running sum of gradients with the same layout.
struct GradientAccumulator {
    std::vector<std::vector<double>> arrays;

    explicit GradientAccumulator(const std::vector<std::size_t>& sizes);
    void clear();
    void add(const GradientAccumulator& other);
};

class BaseHead {
public:
    BaseHead(std::size_t n_layers, std::size_t dim, std::size_t classes, LayerSelector selector);

    std::size_t n_layers() const noexcept { return n_layers_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t classes() const noexcept { return classes_; }
    const LayerSelector& selector() const noexcept { return selector_; }

    const Affine& classifier() const noexcept { return classifier_; }
    Affine& classifier() noexcept { return classifier_; }

    std::vector<std::span<float>> parameter_arrays();
    std::vector<std::span<const float>> parameter_arrays() const;
    std::vector<std::size_t> parameter_sizes() const;

private:
    std::size_t n_layers_;
    std::size_t dim_;
    std::size_t classes_;
    LayerSelector selector_;
    Affine classifier_;
};

class ResStack {
public:
    ResStack(std::size_t n_layers, std::size_t dim, std::size_t classes, std::size_t stride, std::size_t start);
    ResStack(const ResStack& other);
    ResStack& operator=(const ResStack& other);
    ResStack(ResStack&&) noexcept = default;
    ResStack& operator=(ResStack&&) noexcept = default;

    std::size_t n_layers() const noexcept { return n_layers_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t stride() const noexcept { return stride_; }
    std::size_t start() const noexcept { return start_; }
    std::size_t unit_count() const noexcept { return units_.size(); }
    /// 1-based pooled layer read by the i-th instantiated unit (i from 0).
    std::size_t unit_layer(std::size_t i) const noexcept { return (start_ + i) * stride_; }

    const Affine& unit(std::size_t i) const { return units_.at(i); }
    const Affine& classifier() const noexcept { return classifier_; }
    // Mutable access invalidates forward caches taken before it.
    Affine& mutable_unit(std::size_t i);
    Affine& mutable_classifier();

    std::vector<std::span<float>> parameter_arrays();
    std::vector<std::span<const float>> parameter_arrays() const;
    std::vector<std::size_t> parameter_sizes() const;

    std::uint64_t revision() const noexcept { return revision_; }

    static void check_topology(std::size_t n_layers, std::size_t stride, std::size_t start);

private:
    void touch() noexcept;

    std::size_t n_layers_;
    std::size_t dim_;
    std::size_t classes_;
    std::size_t stride_;
    std::size_t start_;
    std::vector<Affine> units_;
    Affine classifier_;
    std::uint64_t revision_;
};

std::vector<float> base_forward(const PooledStates& p, const BaseHead& head);
GradientBundle base_backward(const PooledStates& p, const BaseHead& head, std::span<const double> dlogits);
void base_backward_accumulate(const PooledStates& p, const BaseHead& head, std::span<const double> dlogits,
                              GradientAccumulator& acc);

struct ResCache {
    std::uint64_t revision = 0;
    std::vector<std::vector<float>> inputs;       // per unit: state_{u-1} + pooled[u*K]
    std::vector<std::vector<float>> activations;  // per unit: W_u input + b_u
    std::vector<float> final_state;
};

struct ResForward {
    std::vector<float> logits;
    ResCache cache;
};

ResForward res_forward(const PooledStates& p, const ResStack& stack);
GradientBundle res_backward(const ResStack& stack, const ResCache& cache, std::span<const double> dlogits);
void res_backward_accumulate(const ResStack& stack, const ResCache& cache, std::span<const double> dlogits,
                             GradientAccumulator& acc);

std::size_t param_count(const BaseHead& head);
std::size_t param_count(const ResStack& stack);
/// (N/K - S + 1)(M^2 + M) + C M + C.
std::size_t res_param_count(std::size_t n_layers, std::size_t dim, std::size_t classes, std::size_t stride,
                            std::size_t start);

}  // namespace protum
