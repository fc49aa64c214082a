#include "protum/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "protum/error.hpp"
#include "protum/masking.hpp"
#include "protum/sweep.hpp"
#include "protum/synth.hpp"
#include "protum/template_engine.hpp"
#include "protum/tensor_store.hpp"
#include "protum/trainer.hpp"

namespace protum::cli {

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::ParseError, "'" + path + "': " + e.what());
    }
}

template <typename F>
void for_each_jsonl(const std::string& path, F&& f) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot open '" + path + "'");
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorKind::ParseError, "'" + path + "' line " + std::to_string(number) + ": " + e.what());
        }
        f(j);
    }
}

class TextSink {
public:
    TextSink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) fail(ErrorKind::IoError, "cannot open '" + path + "' for writing");
            stream_ = &file_;
        }
    }
    std::ostream& stream() { return *stream_; }

private:
    std::ofstream file_;
    std::ostream* stream_;
};

void write_text(const std::string& path, const std::string& text, std::ostream& fallback) {
    TextSink sink(path, fallback);
    sink.stream() << text;
    if (!sink.stream()) fail(ErrorKind::IoError, "write to '" + path + "' failed");
}

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    bool timing = false;
    json config = json::object();

    void load() {
        if (!config_path.empty()) config = read_json_file(config_path);
    }
    std::string path(const std::string& flag_value, const char* key) const {
        if (!flag_value.empty()) return flag_value;
        if (config.contains(key)) return config.at(key).get<std::string>();
        return {};
    }
};

// Training flags; unset ones fall back to the config file, then defaults.
struct TrainFlags {
    std::optional<double> lr;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> patience;
    std::optional<std::string> optimizer;
    std::optional<std::string> pool;
    std::optional<std::size_t> workers;

    void attach(CLI::App* app) {
        app->add_option("--lr", lr, "learning rate");
        app->add_option("--batch-size", batch_size, "mini-batch size");
        app->add_option("--epochs", epochs, "maximum epochs");
        app->add_option("--patience", patience, "epochs without val improvement before stopping");
        app->add_option("--optimizer", optimizer, "adam or sgd");
        app->add_option("--pool", pool, "pooling over mask positions: max or avg");
        app->add_option("--workers", workers, "gradient worker threads");
    }

    TrainConfig resolve(const GlobalFlags& global) const {
        TrainConfig c = config_from_json(global.config);
        if (global.seed) c.seed = *global.seed;
        if (lr) c.learning_rate = *lr;
        if (batch_size) c.batch_size = *batch_size;
        if (epochs) {
            c.max_epochs = *epochs;
            if (!patience && c.patience > c.max_epochs) c.patience = c.max_epochs;
        }
        if (patience) c.patience = *patience;
        if (optimizer) c.optimizer = parse_optimizer(*optimizer);
        if (pool) c.pooling = parse_pooling_mode(*pool);
        if (workers) c.workers = *workers;
        c.validate();
        return c;
    }
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(text)) {
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(item)));
        } catch (const std::exception&) {
            fail(ErrorKind::InvalidConfig, "cannot parse '" + item + "' as a positive integer");
        }
    }
    return out;
}

std::string require(const std::string& value, const char* what) {
    if (value.empty()) fail(ErrorKind::InvalidConfig, std::string("missing required ") + what);
    return value;
}

int exit_code_for(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::validation: return kValidationError;
        case ErrorCategory::data_format: return kDataFormatError;
        case ErrorCategory::training: return kTrainingFailure;
    }
    return kTrainingFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mask-position prompt-tuning heads: templates, masking, tensors, training and sweeps", "protum"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags global;
    app.add_option("--seed", global.seed, "global seed");
    app.add_option("--config", global.config_path, "JSON file mirroring the training config plus paths");
    app.add_flag("--timing", global.timing, "record wall-clock seconds in reports and tables");

    // template
    auto* tmpl = app.add_subcommand("template", "render raw examples into prompt templates");
    std::string task_path, input_path, mode_name, out_path, token_counts_path;
    std::size_t mask_width = 0;
    tmpl->add_option("--task", task_path, "task JSON")->required();
    tmpl->add_option("--input", input_path, "raw examples, JSON lines")->required();
    tmpl->add_option("--mode", mode_name, "pretrain_train, pretrain_val or tuning")->required();
    tmpl->add_option("--mask-width", mask_width, "mask placeholders per example in tuning mode");
    tmpl->add_option("--token-counts", token_counts_path, "JSON map answer string -> token count");
    tmpl->add_option("--out", out_path, "output JSON lines ('-' for stdout)")->required();

    // mask
    auto* mask = app.add_subcommand("mask", "duplicate and dynamically mask token sequences");
    MaskingOptions mask_opts;
    std::string mask_in, mask_out;
    mask->add_option("--input", mask_in, "token sequences, JSON lines")->required();
    mask->add_option("--out", mask_out, "masked records, JSON lines")->required();
    mask->add_option("--prob", mask_opts.probability, "selection probability per position")->required();
    mask->add_option("--duplicates", mask_opts.duplicates, "copies per sequence")->capture_default_str();
    mask->add_option("--mask-id", mask_opts.mask_token_id, "mask token id")->capture_default_str();
    mask->add_option("--max-length", mask_opts.max_length, "maximum sequence length")->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic hidden-state datasets");
    std::string spec_path, out_train, out_val;
    synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    synth->add_option("--out-train", out_train, "train PRTB path")->required();
    synth->add_option("--out-val", out_val, "val PRTB path")->required();

    // train
    auto* trn = app.add_subcommand("train", "train a base or residual head");
    std::string train_path, val_path, head_name = "base", layer_text = "-3", ckpt_path, report_path;
    std::size_t k = 3, s = 1;
    TrainFlags train_flags;
    trn->add_option("--train", train_path, "train PRTB");
    trn->add_option("--val", val_path, "val PRTB");
    trn->add_option("--head", head_name, "base or res")->capture_default_str();
    trn->add_option("--layer", layer_text, "base head layer: -3, 7, MAX4, AVG4")->capture_default_str();
    trn->add_option("--k", k, "residual stride K")->capture_default_str();
    trn->add_option("--s", s, "residual start S")->capture_default_str();
    trn->add_option("--out", ckpt_path, "checkpoint path");
    trn->add_option("--report", report_path, "report JSON path");
    train_flags.attach(trn);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_data, eval_ckpt, eval_out;
    ev->add_option("--data", eval_data, "PRTB file")->required();
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    ev->add_option("--out", eval_out, "result JSON path (default stdout)");

    // sweeps
    struct SweepFlags {
        std::string train, val, format = "markdown", out, json_out, grid;
        std::size_t jobs = 1;
        std::size_t fixed = 0;
        TrainFlags train_flags;
    };
    SweepFlags sl, sk, ss;
    auto add_sweep = [&](const char* name, const char* help, SweepFlags& f) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--train", f.train, "train PRTB");
        sub->add_option("--val", f.val, "val PRTB");
        sub->add_option("--format", f.format, "csv or markdown")->capture_default_str();
        sub->add_option("--out", f.out, "table path (default stdout)");
        sub->add_option("--json", f.json_out, "sweep result JSON path");
        sub->add_option("--jobs", f.jobs, "rows trained concurrently")->capture_default_str();
        f.train_flags.attach(sub);
        return sub;
    };
    auto* sweep_layer_cmd = add_sweep("sweep-layer", "base head over layers -1..-4, MAX4, AVG4", sl);
    sweep_layer_cmd->add_option("--layers", sl.grid, "comma-separated layer selectors");
    auto* sweep_k_cmd = add_sweep("sweep-k", "residual head over stride K", sk);
    sk.fixed = 1;
    sweep_k_cmd->add_option("--s", sk.fixed, "fixed start S")->capture_default_str();
    sweep_k_cmd->add_option("--ks", sk.grid, "comma-separated K values (default: divisors of N)");
    auto* sweep_s_cmd = add_sweep("sweep-s", "residual head over start S", ss);
    ss.fixed = 3;
    sweep_s_cmd->add_option("--k", ss.fixed, "fixed stride K")->capture_default_str();
    sweep_s_cmd->add_option("--ss", ss.grid, "comma-separated S values (default: 1..N/K)");

    // inspect
    auto* insp = app.add_subcommand("inspect", "print a PRTB header and record shapes as JSON");
    std::string inspect_path;
    insp->add_option("file", inspect_path, "PRTB file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kValidationError;
    }

    try {
        global.load();

        if (tmpl->parsed()) {
            const TaskSpec task = task_from_json(read_json_file(task_path));
            const RenderMode mode = parse_render_mode(mode_name);
            std::size_t width = mask_width;
            if (!token_counts_path.empty()) {
                const auto counts = read_json_file(token_counts_path).get<std::map<std::string, std::size_t>>();
                width = task_mask_width(task, counts);
            }
            if (mode == RenderMode::tuning && width == 0) {
                fail(ErrorKind::InvalidTask, "tuning mode needs --mask-width or --token-counts");
            }
            std::vector<RawExample> raw;
            for_each_jsonl(input_path, [&](const json& j) { raw.push_back(raw_example_from_json(j)); });
            const auto rendered = render_dataset(raw, task, mode, width == 0 ? 1 : width);
            TextSink sink(out_path, out);
            for (const auto& ex : rendered.examples) sink.stream() << to_json(ex).dump() << '\n';
            const json stats{{"count", rendered.stats.count},
                             {"mean_length_chars", rendered.stats.mean_length_chars},
                             {"mean_length_words", rendered.stats.mean_length_words}};
            (out_path == "-" ? err : out) << stats.dump() << '\n';
        } else if (mask->parsed()) {
            if (global.seed) mask_opts.seed = *global.seed;
            TextSink sink(mask_out, out);
            std::size_t sequences = 0;
            std::size_t records = 0;
            std::size_t masked = 0;
            std::size_t maskable = 0;
            for_each_jsonl(mask_in, [&](const json& j) {
                const auto seq = token_sequence_from_json(j);
                const auto recs = dynamic_mask(seq, mask_opts);
                ++sequences;
                maskable += seq.maskable_positions().size() * recs.size();
                for (const auto& r : recs) {
                    masked += r.masked_positions().size();
                    sink.stream() << to_json(r).dump() << '\n';
                    ++records;
                }
            });
            const json summary{{"sequences", sequences},
                               {"records", records},
                               {"masked_fraction", maskable ? static_cast<double>(masked) / maskable : 0.0}};
            (mask_out == "-" ? err : out) << summary.dump() << '\n';
        } else if (synth->parsed()) {
            SynthSpec spec = synth_spec_from_json(read_json_file(spec_path));
            if (global.seed) spec.seed = *global.seed;
            generate_files(spec, out_train, out_val);
            out << json{{"train", out_train}, {"val", out_val}, {"spec", to_json(spec)}}.dump() << '\n';
        } else if (trn->parsed()) {
            const TrainConfig config = train_flags.resolve(global);
            HeadSpec spec;
            if (head_name == "base") {
                spec = HeadSpec::base(LayerSelector::parse(layer_text));
            } else if (head_name == "res") {
                spec = HeadSpec::res(k, s);
            } else {
                fail(ErrorKind::InvalidConfig, "unknown head '" + head_name + "'");
            }
            const auto report = train_files(require(global.path(train_path, "train"), "--train"),
                                            require(global.path(val_path, "val"), "--val"), spec, config);
            const std::string ckpt = global.path(ckpt_path, "checkpoint");
            if (!ckpt.empty()) save_checkpoint(ckpt, report.best);
            json report_json = to_json(report, global.timing);
            report_json["config"] = to_json(config);
            const std::string rp = global.path(report_path, "report");
            if (!rp.empty()) write_text(rp, report_json.dump(2) + "\n", out);
            out << json{{"best_val_accuracy", report.best_val_accuracy}, {"best_epoch", report.best_epoch}}.dump()
                << '\n';
        } else if (ev->parsed()) {
            const auto ckpt = load_checkpoint(eval_ckpt);
            const auto result = evaluate_file(eval_data, ckpt);
            write_text(eval_out, to_json(result).dump(2) + "\n", out);
        } else if (sweep_layer_cmd->parsed() || sweep_k_cmd->parsed() || sweep_s_cmd->parsed()) {
            SweepFlags& f = sweep_layer_cmd->parsed() ? sl : (sweep_k_cmd->parsed() ? sk : ss);
            SweepOptions options{f.train_flags.resolve(global), f.jobs};
            const auto format = parse_table_format(f.format);
            const auto train_set = load_pooled(require(global.path(f.train, "train"), "--train"), options.config.pooling);
            const auto val_set = load_pooled(require(global.path(f.val, "val"), "--val"), options.config.pooling);
            SweepResult result;
            if (&f == &sl) {
                std::vector<LayerSelector> layers = default_layer_grid();
                if (!f.grid.empty()) {
                    layers.clear();
                    for (const auto& item : split_list(f.grid)) layers.push_back(LayerSelector::parse(item));
                }
                result = sweep_layer(train_set, val_set, options, layers);
            } else if (&f == &sk) {
                result = sweep_k(train_set, val_set, options, f.fixed, parse_sizes(f.grid));
            } else {
                result = sweep_s(train_set, val_set, options, f.fixed, parse_sizes(f.grid));
            }
            write_text(f.out, emit_table(result, format, global.timing), out);
            if (!f.json_out.empty()) write_text(f.json_out, to_json(result, global.timing).dump(2) + "\n", out);
        } else if (insp->parsed()) {
            out << inspect_tensors(inspect_path).dump(2) << '\n';
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.category());
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataFormatError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kTrainingFailure;
    }
    return kSuccess;
}

}  // namespace protum::cli
