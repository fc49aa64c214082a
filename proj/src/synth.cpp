#include "protum/synth.hpp"

#include <cmath>

#include "protum/error.hpp"
#include "protum/random.hpp"

namespace protum {

namespace {

std::vector<std::vector<double>> orthonormal_means(const SynthSpec& spec) {
    Rng rng(derive_seed(spec.seed, "class-means"));
    std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim));
    for (auto& mu : means) {
        for (double& x : mu) x = rng.normal();
    }
    // Gram-Schmidt, two passes for stability.
    for (std::size_t c = 0; c < means.size(); ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t prev = 0; prev < c; ++prev) {
                double dot = 0.0;
                for (std::size_t m = 0; m < spec.dim; ++m) dot += means[c][m] * means[prev][m];
                for (std::size_t m = 0; m < spec.dim; ++m) means[c][m] -= dot * means[prev][m];
            }
        }
        double norm = 0.0;
        for (double x : means[c]) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-12) fail(ErrorKind::InvalidSpec, "degenerate class mean draw");
        for (double& x : means[c]) x /= norm;
    }
    return means;
}

HiddenTensor make_example(const SynthSpec& spec, const std::vector<std::vector<double>>& means,
                          std::uint64_t id, std::int32_t label) {
    HiddenTensor t(id, label, spec.n_layers, spec.width, spec.dim);
    Rng rng(derive_seed(spec.seed, "example", id));
    const auto& mu = means[static_cast<std::size_t>(label)];
    for (std::size_t l = 0; l < spec.n_layers; ++l) {
        for (std::size_t w = 0; w < spec.width; ++w) {
            for (std::size_t m = 0; m < spec.dim; ++m) {
                t.at(l, w, m) = static_cast<float>(spec.layer_signal[l] * mu[m] + spec.noise_sigma * rng.normal());
            }
        }
    }
    return t;
}

TensorFileHeader header_for(const SynthSpec& spec) {
    TensorFileHeader h;
    h.n_layers = spec.n_layers;
    h.dim = spec.dim;
    h.classes = spec.classes;
    return h;
}

}  // namespace

void SynthSpec::validate() const {
    if (n_layers == 0 || dim == 0 || width == 0) fail(ErrorKind::InvalidSpec, "N, M and W must be positive");
    if (classes < 2) fail(ErrorKind::InvalidSpec, "need at least 2 classes");
    if (classes > dim) fail(ErrorKind::InvalidSpec, "orthogonal class means need C <= M");
    if (train_count == 0 || val_count == 0) fail(ErrorKind::InvalidSpec, "train and val counts must be positive");
    if (layer_signal.size() != n_layers) {
        fail(ErrorKind::InvalidSpec, "layer_signal has " + std::to_string(layer_signal.size()) +
                                         " entries for N=" + std::to_string(n_layers));
    }
    for (double s : layer_signal) {
        if (!(s >= 0.0 && s <= 1.0)) fail(ErrorKind::InvalidSpec, "layer_signal entries must lie in [0, 1]");
    }
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
        fail(ErrorKind::InvalidSpec, "noise_sigma must be positive");
    }
}

SynthData generate(const SynthSpec& spec) {
    spec.validate();
    SynthData data;
    data.header = header_for(spec);
    data.class_means = orthonormal_means(spec);
    data.train.reserve(spec.train_count);
    data.val.reserve(spec.val_count);
    // Labels are round-robin within each split; ids run across both splits.
    for (std::size_t i = 0; i < spec.train_count; ++i) {
        data.train.push_back(make_example(spec, data.class_means, i, static_cast<std::int32_t>(i % spec.classes)));
    }
    for (std::size_t i = 0; i < spec.val_count; ++i) {
        data.val.push_back(make_example(spec, data.class_means, spec.train_count + i,
                                        static_cast<std::int32_t>(i % spec.classes)));
    }
    return data;
}

void generate_files(const SynthSpec& spec, const std::filesystem::path& train_path,
                    const std::filesystem::path& val_path) {
    spec.validate();
    const auto means = orthonormal_means(spec);
    TensorWriter train(train_path, header_for(spec));
    TensorWriter val(val_path, header_for(spec));
    for (std::size_t i = 0; i < spec.train_count; ++i) {
        train.write(make_example(spec, means, i, static_cast<std::int32_t>(i % spec.classes)));
    }
    for (std::size_t i = 0; i < spec.val_count; ++i) {
        val.write(make_example(spec, means, spec.train_count + i, static_cast<std::int32_t>(i % spec.classes)));
    }
    train.close();
    val.close();
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec s;
        s.n_layers = j.at("N").get<std::uint32_t>();
        s.dim = j.at("M").get<std::uint32_t>();
        s.width = j.value("W", 1U);
        s.classes = j.at("C").get<std::uint32_t>();
        s.train_count = j.at("train_count").get<std::size_t>();
        s.val_count = j.at("val_count").get<std::size_t>();
        s.layer_signal = j.at("layer_signal").get<std::vector<double>>();
        s.noise_sigma = j.at("noise_sigma").get<double>();
        s.seed = j.value("seed", std::uint64_t{0});
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("synth spec: ") + e.what());
    }
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"N", s.n_layers},          {"M", s.dim},
            {"W", s.width},             {"C", s.classes},
            {"train_count", s.train_count}, {"val_count", s.val_count},
            {"layer_signal", s.layer_signal}, {"noise_sigma", s.noise_sigma},
            {"seed", s.seed}};
}

}  // namespace protum
