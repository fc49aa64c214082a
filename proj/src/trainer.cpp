#include "protum/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "protum/error.hpp"
#include "protum/random.hpp"

namespace protum {

namespace {

// Examples per gradient chunk. Chunk sums are reduced in order, so the batch
// gradient is the same for any worker count.
constexpr std::size_t kChunk = 8;

template <typename... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <typename... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<std::size_t> parameter_sizes(const Head& head) {
    return std::visit([](const auto& h) { return h.parameter_sizes(); }, head);
}

std::vector<std::span<float>> mutable_arrays(Head& head) {
    return std::visit([](auto& h) { return h.parameter_arrays(); }, head);
}

double example_gradient(const Head& head, const PooledStates& x, std::size_t label, GradientAccumulator& acc) {
    std::vector<double> dlogits(head_classes(head));
    return std::visit(overloaded{[&](const BaseHead& h) {
                                     const auto logits = base_forward(x, h);
                                     const double loss = softmax_cross_entropy(logits, label, dlogits);
                                     base_backward_accumulate(x, h, dlogits, acc);
                                     return loss;
                                 },
                                 [&](const ResStack& s) {
                                     const auto fwd = res_forward(x, s);
                                     const double loss = softmax_cross_entropy(fwd.logits, label, dlogits);
                                     res_backward_accumulate(s, fwd.cache, dlogits, acc);
                                     return loss;
                                 }},
                      head);
}

class Optimizer {
public:
    Optimizer(const TrainConfig& config, const std::vector<std::size_t>& sizes) : config_(config) {
        if (config.optimizer == OptimizerKind::adam) {
            for (std::size_t n : sizes) {
                first_.emplace_back(n, 0.0);
                second_.emplace_back(n, 0.0);
            }
        }
    }

    void step(std::vector<std::span<float>> params, const GradientAccumulator& grad, double scale) {
        ++t_;
        const double lr = config_.learning_rate;
        if (config_.optimizer == OptimizerKind::sgd) {
            for (std::size_t a = 0; a < params.size(); ++a) {
                for (std::size_t i = 0; i < params[a].size(); ++i) {
                    params[a][i] = static_cast<float>(params[a][i] - lr * grad.arrays[a][i] * scale);
                }
            }
            return;
        }
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t a = 0; a < params.size(); ++a) {
            auto& m = first_[a];
            auto& v = second_[a];
            for (std::size_t i = 0; i < params[a].size(); ++i) {
                const double g = grad.arrays[a][i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                const double step = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
                params[a][i] = static_cast<float>(params[a][i] - step);
            }
        }
    }

private:
    TrainConfig config_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::uint64_t t_ = 0;
};

void check_compatible(const PooledDataset& a, const PooledDataset& b) {
    if (a.n_layers != b.n_layers || a.dim != b.dim || a.classes != b.classes) {
        fail(ErrorKind::ShapeMismatch, "train and val shapes differ: N/M/C " + std::to_string(a.n_layers) + "/" +
                                           std::to_string(a.dim) + "/" + std::to_string(a.classes) + " vs " +
                                           std::to_string(b.n_layers) + "/" + std::to_string(b.dim) + "/" +
                                           std::to_string(b.classes));
    }
}

void check_labeled(const PooledDataset& data, const char* what) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] < 0) {
            fail(ErrorKind::UnlabeledData, std::string(what) + " example " + std::to_string(data.ids[i]) +
                                               " has no label");
        }
    }
}

double accuracy_of(const Head& head, const PooledDataset& data) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto logits = head_forward(head, data.examples[i]);
        correct += argmax(logits) == static_cast<std::size_t>(data.labels[i]);
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    fail(ErrorKind::InvalidConfig, "unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        fail(ErrorKind::InvalidConfig, "learning_rate must be positive");
    }
    if (batch_size == 0) fail(ErrorKind::InvalidConfig, "batch_size must be positive");
    if (max_epochs == 0) fail(ErrorKind::InvalidConfig, "max_epochs must be positive");
    if (patience == 0 || patience > max_epochs) {
        fail(ErrorKind::InvalidConfig, "patience must lie in [1, max_epochs]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        fail(ErrorKind::InvalidConfig, "adam betas must lie in [0, 1) and epsilon must be positive");
    }
    if (workers == 0) fail(ErrorKind::InvalidConfig, "workers must be positive");
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
        if (j.contains("adam_betas")) {
            const auto betas = j.at("adam_betas").get<std::vector<double>>();
            if (betas.size() != 2) fail(ErrorKind::InvalidConfig, "adam_betas needs two values");
            c.beta1 = betas[0];
            c.beta2 = betas[1];
        }
        c.epsilon = j.value("epsilon", c.epsilon);
        if (j.contains("pooling")) c.pooling = parse_pooling_mode(j.at("pooling").get<std::string>());
        c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("train config: ") + e.what());
    }
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},       {"patience", c.patience},
            {"seed", c.seed},                   {"optimizer", to_string(c.optimizer)},
            {"adam_betas", {c.beta1, c.beta2}}, {"epsilon", c.epsilon},
            {"pooling", to_string(c.pooling)}};
}

PooledDataset pool_dataset(const TensorFileHeader& header, std::span<const HiddenTensor> tensors,
                           PoolingMode pooling) {
    PooledDataset out;
    out.n_layers = header.n_layers;
    out.dim = header.dim;
    out.classes = header.classes;
    out.pooling = pooling;
    out.examples.reserve(tensors.size());
    for (const auto& t : tensors) {
        if (t.n_layers != header.n_layers || t.dim != header.dim) {
            fail(ErrorKind::ShapeMismatch, "tensor " + std::to_string(t.example_id) + " disagrees with header");
        }
        out.examples.push_back(pool(t, pooling));
        out.labels.push_back(t.label);
        out.ids.push_back(t.example_id);
    }
    return out;
}

PooledDataset load_pooled(const std::filesystem::path& path, PoolingMode pooling) {
    TensorReader reader(path);
    const auto& header = reader.header();
    PooledDataset out;
    out.n_layers = header.n_layers;
    out.dim = header.dim;
    out.classes = header.classes;
    out.pooling = pooling;
    while (auto t = reader.next()) {
        out.examples.push_back(pool(*t, pooling));
        out.labels.push_back(t->label);
        out.ids.push_back(t->example_id);
    }
    return out;
}

Head make_head(const HeadSpec& spec, std::size_t n_layers, std::size_t dim, std::size_t classes) {
    if (spec.kind == HeadKind::base) return BaseHead(n_layers, dim, classes, spec.selector);
    return ResStack(n_layers, dim, classes, spec.stride, spec.start);
}

void init_head(Head& head, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(head_dim(head)));
    auto arrays = mutable_arrays(head);
    // The classifier weight and bias are the last two arrays for both kinds.
    const std::size_t first_classifier = arrays.size() - 2;
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        const double b = i >= first_classifier ? kClassifierInitScale * bound : bound;
        for (float& v : arrays[i]) v = static_cast<float>(rng.uniform(-b, b));
    }
}

std::size_t argmax(std::span<const float> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

double softmax_cross_entropy(std::span<const float> logits, std::size_t label, std::span<double> dlogits) {
    double top = logits[0];
    for (float z : logits) top = std::max(top, static_cast<double>(z));
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        dlogits[i] = std::exp(static_cast<double>(logits[i]) - top);
        sum += dlogits[i];
    }
    for (double& d : dlogits) d /= sum;
    const double loss = std::log(sum) + top - static_cast<double>(logits[label]);
    dlogits[label] -= 1.0;
    return loss;
}

double mean_loss(const Head& head, const PooledDataset& data) {
    std::vector<double> scratch(head_classes(head));
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto logits = head_forward(head, data.examples[i]);
        total += softmax_cross_entropy(logits, static_cast<std::size_t>(data.labels[i]), scratch);
    }
    return total / static_cast<double>(data.size());
}

TrainReport train(const PooledDataset& train_set, const PooledDataset& val_set, const HeadSpec& spec,
                  const TrainConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    config.validate();
    if (train_set.size() == 0) fail(ErrorKind::EmptyDataset, "training set is empty");
    if (val_set.size() == 0) fail(ErrorKind::EmptyDataset, "validation set is empty");
    check_compatible(train_set, val_set);
    check_labeled(train_set, "train");
    check_labeled(val_set, "val");
    if (train_set.pooling != config.pooling || val_set.pooling != config.pooling) {
        fail(ErrorKind::InvalidConfig, "datasets were pooled with a different mode than the config");
    }

    Head head = make_head(spec, train_set.n_layers, train_set.dim, train_set.classes);
    init_head(head, config.seed);
    const auto sizes = parameter_sizes(head);
    Optimizer optimizer(config, sizes);

    TrainReport report{.epochs = {}, .initial_train_loss = mean_loss(head, train_set), .best = Checkpoint{head, config.pooling}};

    std::vector<std::size_t> order(train_set.size());
    const std::size_t max_chunks = (std::min(config.batch_size, train_set.size()) + kChunk - 1) / kChunk;
    std::vector<GradientAccumulator> chunk_grads(max_chunks, GradientAccumulator(sizes));
    GradientAccumulator batch_grad(sizes);
    std::vector<double> losses(config.batch_size);

    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const std::size_t count = end - begin;
            const std::size_t chunks = (count + kChunk - 1) / kChunk;

            auto run_chunk = [&](std::size_t c) {
                auto& acc = chunk_grads[c];
                acc.clear();
                const std::size_t lo = begin + c * kChunk;
                const std::size_t hi = std::min(end, lo + kChunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    const std::size_t ex = order[i];
                    losses[i - begin] = example_gradient(head, train_set.examples[ex],
                                                         static_cast<std::size_t>(train_set.labels[ex]), acc);
                }
            };
            const std::size_t workers = std::min(config.workers, chunks);
            if (workers <= 1) {
                for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
            } else {
                std::vector<std::jthread> pool;
                for (std::size_t w = 0; w < workers; ++w) {
                    pool.emplace_back([&, w] {
                        for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
                    });
                }
            }

            batch_grad.clear();
            for (std::size_t c = 0; c < chunks; ++c) batch_grad.add(chunk_grads[c]);
            for (std::size_t i = 0; i < count; ++i) epoch_loss += losses[i];
            optimizer.step(mutable_arrays(head), batch_grad, 1.0 / static_cast<double>(count));
        }
        epoch_loss /= static_cast<double>(train_set.size());
        if (!std::isfinite(epoch_loss)) {
            fail(ErrorKind::TrainingDiverged, "training loss became non-finite at epoch " + std::to_string(epoch));
        }
        for (const auto& array : parameter_arrays(head)) {
            for (float v : array) {
                if (!std::isfinite(v)) {
                    fail(ErrorKind::TrainingDiverged, "parameters became non-finite at epoch " + std::to_string(epoch));
                }
            }
        }

        const double val_acc = accuracy_of(head, val_set);
        report.epochs.push_back({epoch, epoch_loss, val_acc});
        if (report.best_epoch == 0 || val_acc > report.best_val_accuracy) {
            report.best_val_accuracy = val_acc;
            report.best_epoch = epoch;
            report.best = Checkpoint{head, config.pooling};
            since_best = 0;
        } else if (++since_best >= config.patience) {
            report.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

TrainReport train_files(const std::filesystem::path& train_path, const std::filesystem::path& val_path,
                        const HeadSpec& spec, const TrainConfig& config) {
    const auto train_set = load_pooled(train_path, config.pooling);
    const auto val_set = load_pooled(val_path, config.pooling);
    return train(train_set, val_set, spec, config);
}

EvalResult evaluate(const PooledDataset& data, const Checkpoint& ckpt) {
    if (data.n_layers != head_layers(ckpt.head) || data.dim != head_dim(ckpt.head) ||
        data.classes != head_classes(ckpt.head)) {
        fail(ErrorKind::ShapeMismatch, "checkpoint head does not match data shape");
    }
    if (data.pooling != ckpt.pooling) {
        fail(ErrorKind::InvalidConfig, "data pooled with a different mode than the checkpoint");
    }
    if (data.size() == 0) fail(ErrorKind::EmptyDataset, "evaluation set is empty");
    check_labeled(data, "eval");
    EvalResult r;
    r.total = data.size();
    r.confusion.assign(data.classes, std::vector<std::size_t>(data.classes, 0));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto predicted = argmax(head_forward(ckpt.head, data.examples[i]));
        const auto truth = static_cast<std::size_t>(data.labels[i]);
        ++r.confusion[truth][predicted];
        r.correct += predicted == truth;
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

EvalResult evaluate_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
    return evaluate(load_pooled(path, ckpt.pooling), ckpt);
}

nlohmann::json to_json(const TrainReport& report, bool include_timing) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : report.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    }
    return {{"initial_train_loss", report.initial_train_loss},
            {"best_val_accuracy", report.best_val_accuracy},
            {"best_epoch", report.best_epoch},
            {"epochs_run", report.epochs.size()},
            {"stopped_early", report.stopped_early},
            {"seconds", include_timing ? report.seconds : 0.0},
            {"checkpoint", checkpoint_metadata(report.best)},
            {"epochs", epochs}};
}

nlohmann::json to_json(const EvalResult& r) {
    return {{"accuracy", r.accuracy}, {"correct", r.correct}, {"total", r.total}, {"confusion", r.confusion}};
}

}  // namespace protum
