// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: protum_acceptance <path-to-protum-cli>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "protum/checkpoint.hpp"
#include "protum/error.hpp"
#include "protum/heads.hpp"
#include "protum/masking.hpp"
#include "protum/random.hpp"
#include "protum/sweep.hpp"
#include "protum/synth.hpp"
#include "protum/tensor_store.hpp"
#include "protum/trainer.hpp"

namespace fs = std::filesystem;
using namespace protum;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path scratch_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("protum_acceptance_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

std::vector<double> ce_grad(const std::vector<float>& logits, std::size_t label) {
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, double(v));
    double z = 0.0;
    for (float v : logits) z += std::exp(v - mx);
    std::vector<double> g(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) g[c] = std::exp(logits[c] - mx) / z - (c == label ? 1.0 : 0.0);
    return g;
}

PooledStates random_pooled(Rng& rng, std::uint32_t n, std::uint32_t w, std::uint32_t m, PoolingMode mode,
                           HiddenTensor* keep = nullptr) {
    HiddenTensor h(0, 0, n, w, m);
    for (auto& v : h.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    if (keep) *keep = h;
    return pool(h, mode);
}

template <typename H>
void randomize(H& head, Rng& rng, double scale) {
    for (auto a : head.parameter_arrays())
        for (auto& v : a) v = static_cast<float>(rng.uniform(-scale, scale));
}

// Finite-difference agreement for every legal (K, S) at N=12, M=8, C in {2,3}.
Outcome gradient_oracle() {
    Rng rng(101);
    std::size_t total = 0, agree = 0, configs = 0;
    for (std::size_t c : {2u, 3u}) {
        for (std::size_t k : divisors(12)) {
            for (std::size_t s = 1; s <= 12 / k; ++s) {
                for (int rep = 0; rep < 3; ++rep) {
                    ResStack st(12, 8, c, k, s);
                    randomize(st, rng, 0.4);
                    const auto p = random_pooled(rng, 12, 2, 8, PoolingMode::max);
                    const std::size_t label = rng.below(c);
                    const auto fwd = res_forward(p, st);
                    const auto g = res_backward(st, fwd.cache, ce_grad(fwd.logits, label));
                    const auto fd = oracle::finite_difference(oracle::Stack::from(st), oracle::rows_of(p), label, 1e-3);
                    std::size_t idx = 0;
                    for (const auto& arr : g.arrays)
                        for (float v : arr) agree += oracle::grad_agrees(v, fd[idx++], 1e-4);
                    total += idx;
                    ++configs;
                }
            }
        }
    }
    const double frac = double(agree) / double(total);
    return {frac >= 0.99, fmt("%.4f", frac) + " of " + std::to_string(total) + " coordinates within 1e-4 over " +
                              std::to_string(configs) + " stacks"};
}

// pool, base_forward and res_forward against scalar loops on 100 instances.
Outcome forward_oracle() {
    Rng rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = static_cast<std::uint32_t>(1 + rng.below(12));
        const auto w = static_cast<std::uint32_t>(1 + rng.below(4));
        const auto m = static_cast<std::uint32_t>(1 + rng.below(16));
        const std::size_t c = 2 + rng.below(3);
        const PoolingMode mode = trial % 2 ? PoolingMode::max : PoolingMode::avg;
        HiddenTensor h;
        const auto p = random_pooled(rng, n, w, m, mode, &h);
        const auto ref_pool = oracle::pool(h, mode == PoolingMode::max);
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, oracle::rel_err(p.row(l + 1)[j], ref_pool[l][j]));
        const auto rows = oracle::rows_of(p);

        LayerSelector sel = LayerSelector::single(-1 - static_cast<int>(rng.below(n)));
        if (trial % 5 == 0) sel = LayerSelector::cross(1 + rng.below(n), trial % 2 ? PoolingMode::max : PoolingMode::avg);
        BaseHead base(n, m, c, sel);
        randomize(base, rng, 1.0);
        const auto bl = base_forward(p, base);
        const auto bref = oracle::Dense::from(base.classifier()).apply(oracle::base_features(rows, sel));
        for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, oracle::rel_err(bl[k], bref[k]));

        const auto ks = divisors(n);
        const std::size_t k = ks[rng.below(ks.size())];
        ResStack st(n, m, c, k, 1 + rng.below(n / k));
        randomize(st, rng, 0.6);
        const auto rl = res_forward(p, st).logits;
        const auto rref = oracle::Stack::from(st).forward(rows);
        for (std::size_t j = 0; j < c; ++j) worst = std::max(worst, oracle::rel_err(rl[j], rref[j]));
    }
    return {worst <= 1e-6, "max relative error " + fmt("%.2e", worst) + " over 100 instances"};
}

SynthSpec profile(std::vector<double> signal, double sigma, std::uint32_t dim, std::size_t train_count,
                  std::uint64_t seed) {
    SynthSpec s;
    s.n_layers = static_cast<std::uint32_t>(signal.size());
    s.dim = dim;
    s.width = 2;
    s.classes = 2;
    s.train_count = train_count;
    s.val_count = 200;
    s.layer_signal = std::move(signal);
    s.noise_sigma = sigma;
    s.seed = seed;
    return s;
}

struct Split {
    PooledDataset train, val;
};

Split pooled(const SynthSpec& spec) {
    const auto d = generate(spec);
    return {pool_dataset(d.header, d.train, PoolingMode::max), pool_dataset(d.header, d.val, PoolingMode::max)};
}

Outcome learning_sanity() {
    std::vector<double> signal(12, 0.0);
    signal.back() = 1.0;
    const auto d = pooled(profile(signal, 0.1, 32, 400, 7));
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 200;
    cfg.patience = 20;
    cfg.seed = 7;
    const auto base = train(d.train, d.val, HeadSpec::base(LayerSelector::single(-1)), cfg);
    const auto res = train(d.train, d.val, HeadSpec::res(3, 1), cfg);
    const bool ok = base.best_val_accuracy >= 0.99 && res.best_val_accuracy >= base.best_val_accuracy;
    return {ok, "base@-1 " + fmt("%.3f", base.best_val_accuracy) + " at epoch " + std::to_string(base.best_epoch) +
                    ", res(K=3,S=1) " + fmt("%.3f", res.best_val_accuracy)};
}

// Sharp class signal at layer N-2 (index -3), faint elsewhere in the last four.
std::vector<double> peaked_profile() { return {0, 0, 0, 0, 0, 0, 0, 0, 0.1, 1.0, 0.1, 0.1}; }
// Pure noise below layer 7, strongest at layer 9, fading towards layer 12.
std::vector<double> graded_profile() { return {0, 0, 0, 0, 0, 0, 0.3, 0.6, 1.0, 0.8, 0.6, 0.3}; }

std::string summarize(const SweepResult& r) {
    std::string out;
    for (const auto& row : r.rows) {
        if (!out.empty()) out += ' ';
        out += row.value + "=" + (row.status == RowStatus::ok ? fmt("%.3f", row.accuracy) : std::string("-"));
    }
    return out;
}

Outcome layer_sweep_shape() {
    std::vector<SweepResult> runs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = pooled(profile(peaked_profile(), 0.55, 32, 400, 1000 + seed));
        SweepOptions o;
        o.config.seed = seed;
        runs.push_back(sweep_layer(d.train, d.val, o));
    }
    const auto med = median_over_runs(runs);
    const SweepRow* w = med.winner_row();
    double third = -1.0, mx = 2.0, avg = 2.0;
    for (const auto& row : med.rows) {
        if (row.value == "-3") third = row.accuracy;
        if (row.value == "MAX4") mx = row.accuracy;
        if (row.value == "AVG4") avg = row.accuracy;
    }
    const bool ok = w && w->value == "-3" && mx < third && avg < third;
    return {ok, "median winner " + (w ? w->value : std::string("none")) + "; " + summarize(med)};
}

Outcome stride_start_sweep_shape() {
    std::vector<SweepResult> k_runs, s_runs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = pooled(profile(graded_profile(), 0.6, 64, 200, 1000 + seed));
        SweepOptions o;
        o.config.seed = seed;
        o.jobs = 4;
        k_runs.push_back(sweep_k(d.train, d.val, o, 1));
        s_runs.push_back(sweep_s(d.train, d.val, o, 3));
    }
    const auto k_med = median_over_runs(k_runs);
    const auto s_med = median_over_runs(s_runs);
    const auto* kw = k_med.winner_row();
    const auto* sw = s_med.winner_row();
    const bool ok = kw && sw && kw->value != "12" && sw->value != "1" && sw->value != "4";
    return {ok, "K winner " + (kw ? kw->value : std::string("none")) + " [" + summarize(k_med) + "]; S winner (K=3) " +
                    (sw ? sw->value : std::string("none")) + " [" + summarize(s_med) + "]"};
}

Outcome masking_statistics() {
    std::string detail;
    bool ok = true;
    for (double p : {0.2, 0.25}) {
        MaskingOptions o;
        o.probability = p;
        o.duplicates = 1;
        o.seed = 77;
        std::size_t maskable = 0, masked = 0, wrong_id = 0;
        for (int i = 0; i < 1000; ++i) {
            TokenSequence seq;
            seq.id = "seq" + std::to_string(i);
            for (int t = 0; t < 102; ++t) seq.input_ids.push_back(2000 + t);
            seq.protected_positions = {0, 101};
            for (const auto& r : dynamic_mask(seq, o)) {
                maskable += seq.maskable_positions().size();
                for (auto pos : r.masked_positions()) {
                    ++masked;
                    wrong_id += r.input_ids[pos] != o.mask_token_id;
                }
            }
        }
        const double frac = double(masked) / double(maskable);

        TokenSequence one;
        one.id = "one";
        for (int t = 0; t < 50; ++t) one.input_ids.push_back(3000 + t);
        o.duplicates = 10;
        std::set<std::vector<std::size_t>> distinct;
        for (const auto& r : dynamic_mask(one, o)) distinct.insert(r.masked_positions());

        ok = ok && std::fabs(frac - p) <= 0.01 && wrong_id == 0 && maskable >= 100000 && distinct.size() >= 9;
        if (!detail.empty()) detail += "; ";
        detail += "p=" + fmt("%.2f", p) + " fraction " + fmt("%.4f", frac) + " over " + std::to_string(maskable) +
                  ", unmasked selections " + std::to_string(wrong_id) + ", distinct sets " +
                  std::to_string(distinct.size()) + "/10";
    }
    return {ok, detail};
}

float random_finite(Rng& rng) {
    for (;;) {
        auto bits = static_cast<std::uint32_t>(rng.next_u64());
        if (rng.below(4) == 0) bits &= 0x807fffffu;
        const float f = std::bit_cast<float>(bits);
        if (std::isfinite(f)) return f;
    }
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

template <typename F>
bool raises(F&& f, ErrorKind kind) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind() == kind;
    }
    return false;
}

Outcome format_fidelity() {
    const fs::path dir = scratch_dir("format");
    Rng rng(303);
    TensorFileHeader header;
    header.n_layers = 12;
    header.dim = 8;
    header.classes = 3;
    std::vector<HiddenTensor> tensors;
    std::size_t subnormals = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        HiddenTensor t(i, static_cast<std::int32_t>(rng.below(4)) - 1, 12, 1 + rng.below(3), 8);
        for (auto& v : t.values) {
            v = random_finite(rng);
            subnormals += std::fpclassify(v) == FP_SUBNORMAL;
        }
        tensors.push_back(std::move(t));
    }
    write_tensors(dir / "rt.prtb", header, tensors);
    const auto back = read_tensors(dir / "rt.prtb");
    std::size_t prtb_ok = 0;
    for (std::size_t i = 0; i < tensors.size() && i < back.tensors.size(); ++i) {
        prtb_ok += back.tensors[i].example_id == tensors[i].example_id && back.tensors[i].label == tensors[i].label &&
                   same_bits(back.tensors[i].values, tensors[i].values);
    }

    std::size_t ckpt_ok = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        Checkpoint ck{i % 2 ? Head(ResStack(12, 4, 2, divisors(12)[i % 6], 1)) : Head(BaseHead(12, 4, 3, LayerSelector::single(-1 - int(i % 12)))),
                      i % 3 ? PoolingMode::max : PoolingMode::avg};
        std::visit([&](auto& h) {
            for (auto a : h.parameter_arrays())
                for (auto& v : a) v = random_finite(rng);
        }, ck.head);
        save_checkpoint(dir / "c.bin", ck);
        const auto lb = load_checkpoint(dir / "c.bin");
        const auto pa = parameter_arrays(ck.head);
        const auto pb = parameter_arrays(lb.head);
        bool same = pa.size() == pb.size() && lb.pooling == ck.pooling;
        for (std::size_t a = 0; same && a < pa.size(); ++a) same = same_bits(pa[a], pb[a]);
        ckpt_ok += same;
    }

    const auto good = read_file(dir / "rt.prtb");
    std::string magic = good;
    magic.replace(0, 4, "XXXX");
    write_file(dir / "magic.prtb", magic);
    const bool bad_magic = raises([&] { read_tensors(dir / "magic.prtb"); }, ErrorKind::FormatError);

    HiddenTensor two(1, 0, 12, 2, 8);
    write_tensors(dir / "w2.prtb", header, std::span<const HiddenTensor>(&two, 1));
    std::string trunc = read_file(dir / "w2.prtb");
    trunc[32 + 12] = 3;  // claims W=3 with 2*N*M floats present
    write_file(dir / "trunc.prtb", trunc);
    const bool truncated = raises([&] { read_tensors(dir / "trunc.prtb"); }, ErrorKind::TruncatedFile);

    std::string w0 = good;
    std::memset(w0.data() + 32 + 12, 0, 4);
    write_file(dir / "w0.prtb", w0);
    const bool zero_width = raises([&] { read_tensors(dir / "w0.prtb"); }, ErrorKind::CorruptRecord);

    fs::remove_all(dir);
    const bool ok = prtb_ok == 1000 && ckpt_ok == 1000 && subnormals > 0 && bad_magic && truncated && zero_width;
    return {ok, "PRTB " + std::to_string(prtb_ok) + "/1000 and checkpoints " + std::to_string(ckpt_ok) +
                    "/1000 bit-exact (" + std::to_string(subnormals) + " subnormals); bad magic " +
                    (bad_magic ? "FormatError" : "MISSED") + ", truncation " + (truncated ? "TruncatedFile" : "MISSED") +
                    ", W=0 " + (zero_width ? "CorruptRecord" : "MISSED")};
}

// Runs every subcommand twice in separate directories and compares all output bytes.
Outcome cli_determinism(const std::string& cli) {
    const fs::path root = scratch_dir("cli");
    const std::vector<std::string> commands{
        "synth --spec spec.json --out-train tr.prtb --out-val va.prtb",
        "train --train tr.prtb --val va.prtb --layer -3 --epochs 30 --out base.ck --report base.json",
        "train --train tr.prtb --val va.prtb --head res --k 3 --s 2 --epochs 30 --workers 3 --out res.ck --report res.json",
        "eval --data va.prtb --checkpoint res.ck --out eval.json",
        "sweep-layer --train tr.prtb --val va.prtb --epochs 20 --format csv --out layer.csv --json layer.json",
        "sweep-k --train tr.prtb --val va.prtb --epochs 20 --jobs 4 --format markdown --out k.md",
        "sweep-s --train tr.prtb --val va.prtb --epochs 20 --k 3 --format csv --out s.csv",
        "template --task task.json --input raw.jsonl --mode tuning --mask-width 2 --out tmpl.jsonl",
        "mask --input seq.jsonl --prob 0.2 --out masked.jsonl",
        "inspect va.prtb",
    };
    const std::string spec =
        R"({"N":12,"M":16,"W":2,"C":2,"train_count":120,"val_count":60,)"
        R"("layer_signal":[0,0,0,0,0,0,0.3,0.6,1.0,0.8,0.6,0.3],"noise_sigma":0.6,"seed":11})";
    std::size_t compared = 0, differing = 0, failures = 0;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        fs::create_directories(dir);
        write_file(dir / "spec.json", spec);
        write_file(dir / "task.json", R"({"name":"rte","answer_strings":["Yes","No"],"template_kind":"rte"})");
        write_file(dir / "raw.jsonl", R"({"id":"a","fields":{"premise":"A","hypothesis":"B"},"label":0})"
                                      "\n");
        write_file(dir / "seq.jsonl", R"({"id":"s","input_ids":[101,5,6,7,8,9,10,11,12,13,14,15,102],"protected":[0,12]})"
                                      "\n");
        for (std::size_t i = 0; i < commands.size(); ++i) {
            const std::string line = "cd \"" + dir.string() + "\" && \"" + cli + "\" --seed 17 " + commands[i] +
                                     " > stdout" + std::to_string(i) + ".txt 2> stderr" + std::to_string(i) + ".txt";
            failures += std::system(line.c_str()) != 0;
        }
    }
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const auto other = root / "b" / entry.path().filename();
        ++compared;
        differing += !fs::exists(other) || read_file(entry.path()) != read_file(other);
    }
    fs::remove_all(root);
    const bool ok = failures == 0 && differing == 0 && compared > commands.size();
    return {ok, std::to_string(commands.size()) + " invocations x2, " + std::to_string(compared) + " files compared, " +
                    std::to_string(differing) + " differ, " + std::to_string(failures) + " nonzero exits"};
}

Outcome parameter_law() {
    std::vector<std::pair<std::size_t, std::size_t>> topologies;
    for (std::size_t k : divisors(12))
        for (std::size_t s = 1; s <= 12 / k; ++s) topologies.emplace_back(k, s);
    const std::size_t dims[] = {768, 1, 8, 32, 64};
    const std::size_t classes[] = {2, 3, 5};
    std::size_t points = 0, matches = 0;
    bool reference = false;
    for (std::size_t i = 0; i < 40; ++i) {
        const auto [k, s] = i == 0 ? std::pair<std::size_t, std::size_t>{3, 1} : topologies[(i * 7) % topologies.size()];
        const std::size_t m = i == 0 ? 768 : dims[i % 5];
        const std::size_t c = i == 0 ? 2 : classes[(i / 5) % 3];
        ResStack st(12, m, c, k, s);
        std::size_t stored = 0;
        for (auto a : std::as_const(st).parameter_arrays()) stored += a.size();
        const std::size_t formula = (12 / k - s + 1) * (m * m + m) + c * m + c;
        ++points;
        matches += stored == param_count(st) && stored == formula && st.unit_count() == 12 / k - s + 1;
        if (i == 0) reference = param_count(st) == 2363906;
    }
    const bool base = param_count(BaseHead(12, 768, 2, LayerSelector::single(-1))) == 1538;
    return {matches == points && reference && base,
            std::to_string(matches) + "/" + std::to_string(points) + " grid points match stored arrays; M=768,C=2,K=3,S=1 " +
                (reference ? "= 2363906" : "MISMATCH") + "; base M=768,C=2 " + (base ? "= 1538" : "MISMATCH")};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: protum_acceptance <path-to-protum-cli>\n";
        return 2;
    }
    const std::string cli = fs::absolute(argv[1]).string();
    const std::vector<Criterion> criteria{
        {"gradient_oracle", 60, gradient_oracle},
        {"forward_oracle", 10, forward_oracle},
        {"learning_sanity", 120, learning_sanity},
        {"layer_sweep_shape", 600, layer_sweep_shape},
        {"stride_start_sweep_shape", 900, stride_start_sweep_shape},
        {"masking_statistics", 60, masking_statistics},
        {"format_fidelity", 60, format_fidelity},
        {"cli_determinism", 120, [&] { return cli_determinism(cli); }},
        {"parameter_law", 30, parameter_law},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_budget = secs <= c.budget_seconds;
        const bool pass = out.pass && in_budget;
        failed += !pass;
        std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << out.detail << " ["
                  << fmt("%.1f", secs) << " s / " << fmt("%.0f", c.budget_seconds) << " s"
                  << (in_budget ? "" : ", over budget") << "]" << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - failed << "/" << criteria.size() << std::endl;
    return failed ? 1 : 0;
}
