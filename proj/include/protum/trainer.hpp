#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "protum/checkpoint.hpp"
#include "protum/heads.hpp"
#include "protum/tensor_store.hpp"

namespace protum {

enum class OptimizerKind { adam, sgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Learning rates explored for both head types.
inline constexpr double kLearningRateGrid[] = {1e-4, 2e-4, 1e-3, 2e-3};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    PoolingMode pooling = PoolingMode::max;
    // Gradient fan-out; results do not depend on it.
    std::size_t workers = 1;

    void validate() const;
};

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const TrainConfig& config);

struct HeadSpec {
    HeadKind kind = HeadKind::base;
    LayerSelector selector = LayerSelector::single(-1);
    std::size_t stride = 3;
    std::size_t start = 1;

    static HeadSpec base(LayerSelector selector) { return {HeadKind::base, selector, 0, 0}; }
    static HeadSpec res(std::size_t stride, std::size_t start) {
        return {HeadKind::res, LayerSelector::single(-1), stride, start};
    }
};

/// Examples pooled over the mask width once, up front.
struct PooledDataset {
    std::uint32_t n_layers = 0;
    std::uint32_t dim = 0;
    std::uint32_t classes = 0;
    PoolingMode pooling = PoolingMode::max;
    std::vector<PooledStates> examples;
    std::vector<std::int32_t> labels;
    std::vector<std::uint64_t> ids;

    std::size_t size() const noexcept { return examples.size(); }
};

PooledDataset pool_dataset(const TensorFileHeader& header, std::span<const HiddenTensor> tensors,
                           PoolingMode pooling);
PooledDataset load_pooled(const std::filesystem::path& path, PoolingMode pooling);

Head make_head(const HeadSpec& spec, std::size_t n_layers, std::size_t dim, std::size_t classes);
/// Residual units ~ U(-1/sqrt(M), 1/sqrt(M)); the logits layer uses the same
/// range shrunk by kClassifierInitScale so initial logits sit near zero.
inline constexpr double kClassifierInitScale = 0.1;
void init_head(Head& head, std::uint64_t seed);

/// Lowest index wins ties.
std::size_t argmax(std::span<const float> logits);

/// Softmax cross-entropy of one example; writes d loss / d logits.
double softmax_cross_entropy(std::span<const float> logits, std::size_t label, std::span<double> dlogits);

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double initial_train_loss = 0.0;
    double best_val_accuracy = 0.0;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    Checkpoint best;
    double seconds = 0.0;
};

/// Mean cross-entropy of `head` over a dataset.
double mean_loss(const Head& head, const PooledDataset& data);

TrainReport train(const PooledDataset& train_set, const PooledDataset& val_set, const HeadSpec& spec,
                  const TrainConfig& config);
TrainReport train_files(const std::filesystem::path& train_path, const std::filesystem::path& val_path,
                        const HeadSpec& spec, const TrainConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

EvalResult evaluate(const PooledDataset& data, const Checkpoint& ckpt);
EvalResult evaluate_file(const std::filesystem::path& path, const Checkpoint& ckpt);

/// `include_timing` false writes seconds as 0 so reports are reproducible.
nlohmann::json to_json(const TrainReport& report, bool include_timing);
nlohmann::json to_json(const EvalResult& result);

}  // namespace protum
