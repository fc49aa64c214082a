#include "protum/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "protum/error.hpp"
#include "protum/random.hpp"

namespace protum {

namespace {

struct PlannedRow {
    SweepRow row;
    std::optional<HeadSpec> spec;  // empty for skipped rows
};

// Trains every planned row, possibly in parallel; results land in plan order.
std::vector<SweepRow> run_rows(std::vector<PlannedRow> plan, const PooledDataset& train_set,
                               const PooledDataset& val_set, const SweepOptions& options) {
    auto run_one = [&](PlannedRow& p) {
        if (!p.spec) return;
        TrainConfig config = options.config;
        config.seed = p.row.seed;
        try {
            const auto report = train(train_set, val_set, *p.spec, config);
            p.row.accuracy = report.best_val_accuracy;
            p.row.seconds = report.seconds;
            p.row.best_epoch = report.best_epoch;
            p.row.params = param_count(report.best.head);
        } catch (const Error& e) {
            p.row.status = RowStatus::failed;
            p.row.note = e.what();
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, plan.size()));
    if (jobs == 1) {
        for (auto& p : plan) run_one(p);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < plan.size(); i = next++) run_one(plan[i]);
            });
        }
    }

    std::vector<SweepRow> rows;
    rows.reserve(plan.size());
    for (auto& p : plan) rows.push_back(std::move(p.row));
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SweepRow& a, const SweepRow& b) { return a.sort_key < b.sort_key; });
    return rows;
}

SweepResult finish(std::string parameter, std::vector<SweepRow> rows) {
    SweepResult result;
    result.parameter = std::move(parameter);
    result.rows = std::move(rows);
    result.winner = pick_winner(result.rows);
    return result;
}

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string md_field(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += (c == '\n' || c == '\r') ? ' ' : c;
    }
    return out;
}

std::string status_text(const SweepRow& row) {
    switch (row.status) {
        case RowStatus::ok: return "ok";
        case RowStatus::failed: return "failed: " + row.note;
        case RowStatus::skipped: return "skipped: " + row.note;
    }
    return "ok";
}

}  // namespace

std::optional<std::size_t> pick_winner(const std::vector<SweepRow>& rows) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].status != RowStatus::ok) continue;
        if (!best || rows[i].accuracy > rows[*best].accuracy ||
            (rows[i].accuracy == rows[*best].accuracy && rows[i].sort_key < rows[*best].sort_key)) {
            best = i;
        }
    }
    return best;
}

std::uint64_t row_seed(std::uint64_t global_seed, const std::string& parameter, const std::string& value) {
    return derive_seed(global_seed, parameter + "=" + value);
}

std::vector<LayerSelector> default_layer_grid() {
    return {LayerSelector::single(-1), LayerSelector::single(-2), LayerSelector::single(-3),
            LayerSelector::single(-4), LayerSelector::cross(4, PoolingMode::max),
            LayerSelector::cross(4, PoolingMode::avg)};
}

std::vector<std::size_t> divisors(std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t k = 1; k <= n; ++k) {
        if (n % k == 0) out.push_back(k);
    }
    return out;
}

SweepResult sweep_layer(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                        const std::vector<LayerSelector>& layers) {
    if (layers.empty()) fail(ErrorKind::InvalidConfig, "layer grid is empty");
    std::vector<PlannedRow> plan;
    for (const auto& sel : layers) {
        PlannedRow p;
        p.row.value = sel.label();
        p.row.seed = row_seed(options.config.seed, "layer", p.row.value);
        // Single layers sort numerically; cross-layer pools after them (MAX before AVG).
        if (sel.kind == LayerSelector::Kind::single) {
            p.row.sort_key = sel.layer_index;
        } else {
            p.row.sort_key = 1e6 + 2.0 * static_cast<double>(sel.last_k) + (sel.cross_mode == PoolingMode::max ? 0 : 1);
        }
        try {
            sel.validate(train_set.n_layers);
            p.spec = HeadSpec::base(sel);
        } catch (const Error& e) {
            p.row.status = RowStatus::failed;
            p.row.note = e.what();
        }
        plan.push_back(std::move(p));
    }
    return finish("layer", run_rows(std::move(plan), train_set, val_set, options));
}

SweepResult sweep_k(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                    std::size_t start, std::vector<std::size_t> ks) {
    if (ks.empty()) ks = divisors(train_set.n_layers);
    std::vector<PlannedRow> plan;
    for (std::size_t k : ks) {
        PlannedRow p;
        p.row.value = std::to_string(k);
        p.row.sort_key = static_cast<double>(k);
        p.row.seed = row_seed(options.config.seed, "K", p.row.value);
        if (k == 0 || train_set.n_layers % k != 0) {
            p.row.status = RowStatus::skipped;
            p.row.note = "K does not divide N";
        } else if (start < 1 || start > train_set.n_layers / k) {
            p.row.status = RowStatus::skipped;
            p.row.note = "S=" + std::to_string(start) + " exceeds N/K=" + std::to_string(train_set.n_layers / k);
        } else {
            p.spec = HeadSpec::res(k, start);
        }
        plan.push_back(std::move(p));
    }
    return finish("K", run_rows(std::move(plan), train_set, val_set, options));
}

SweepResult sweep_s(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                    std::size_t stride, std::vector<std::size_t> ss) {
    ResStack::check_topology(train_set.n_layers, stride, 1);
    const std::size_t max_start = train_set.n_layers / stride;
    if (ss.empty()) {
        for (std::size_t s = 1; s <= max_start; ++s) ss.push_back(s);
    }
    std::vector<PlannedRow> plan;
    for (std::size_t s : ss) {
        PlannedRow p;
        p.row.value = std::to_string(s);
        p.row.sort_key = static_cast<double>(s);
        p.row.seed = row_seed(options.config.seed, "S", p.row.value);
        if (s < 1 || s > max_start) {
            p.row.status = RowStatus::skipped;
            p.row.note = "S outside [1, N/K=" + std::to_string(max_start) + "]";
        } else {
            p.spec = HeadSpec::res(stride, s);
        }
        plan.push_back(std::move(p));
    }
    return finish("S", run_rows(std::move(plan), train_set, val_set, options));
}

SweepResult median_over_runs(const std::vector<SweepResult>& runs) {
    if (runs.empty()) fail(ErrorKind::InvalidConfig, "no sweep runs to combine");
    SweepResult out;
    out.parameter = runs.front().parameter;
    out.rows = runs.front().rows;
    for (const auto& run : runs) {
        if (run.parameter != out.parameter || run.rows.size() != out.rows.size()) {
            fail(ErrorKind::InvalidConfig, "sweep runs cover different grids");
        }
    }
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        SweepRow& row = out.rows[i];
        std::vector<double> acc;
        std::vector<double> secs;
        for (const auto& run : runs) {
            const SweepRow& r = run.rows[i];
            if (r.value != row.value) fail(ErrorKind::InvalidConfig, "sweep runs list rows in different orders");
            if (r.status != RowStatus::ok && row.status == RowStatus::ok) {
                row.status = r.status;
                row.note = r.note;
            }
            acc.push_back(r.accuracy);
            secs.push_back(r.seconds);
        }
        if (row.status != RowStatus::ok) continue;
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            const std::size_t n = v.size();
            return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        };
        row.accuracy = median(acc);
        row.seconds = median(secs);
    }
    out.winner = pick_winner(out.rows);
    return out;
}

TableFormat parse_table_format(const std::string& name) {
    if (name == "csv") return TableFormat::csv;
    if (name == "markdown" || name == "md") return TableFormat::markdown;
    fail(ErrorKind::InvalidConfig, "unknown table format '" + name + "'");
}

std::string emit_table(const SweepResult& result, TableFormat format, bool include_timing) {
    if (result.rows.empty()) fail(ErrorKind::InvalidConfig, "cannot emit an empty sweep");
    std::string out;
    auto cells = [&](std::size_t i) {
        const auto& row = result.rows[i];
        const bool ok = row.status == RowStatus::ok;
        return std::vector<std::string>{row.value,
                                        ok ? fixed3(row.accuracy) : "",
                                        ok ? std::to_string(row.params) : "",
                                        ok ? fixed3(include_timing ? row.seconds : 0.0) : "",
                                        std::to_string(row.seed),
                                        status_text(row)};
    };
    const std::vector<std::string> header{result.parameter, "acc", "params", "seconds", "seed", "status"};

    if (format == TableFormat::csv) {
        auto line = [&](const std::vector<std::string>& fields) {
            for (std::size_t c = 0; c < fields.size(); ++c) {
                if (c > 0) out += ',';
                out += csv_field(fields[c]);
            }
            out += '\n';
        };
        line(header);
        for (std::size_t i = 0; i < result.rows.size(); ++i) line(cells(i));
        return out;
    }

    auto line = [&](const std::vector<std::string>& fields) {
        out += '|';
        for (const auto& f : fields) out += ' ' + md_field(f) + " |";
        out += '\n';
    };
    line(header);
    out += "|---|---:|---:|---:|---:|---|\n";
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        auto fields = cells(i);
        if (result.winner && *result.winner == i) fields[0] += '*';
        line(fields);
    }
    return out;
}

nlohmann::json to_json(const SweepResult& result, bool include_timing) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : result.rows) {
        nlohmann::json j{{"value", row.value}, {"seed", row.seed}};
        switch (row.status) {
            case RowStatus::ok:
                j["status"] = "ok";
                j["accuracy"] = row.accuracy;
                j["params"] = row.params;
                j["best_epoch"] = row.best_epoch;
                j["seconds"] = include_timing ? row.seconds : 0.0;
                break;
            case RowStatus::failed:
                j["status"] = "failed";
                j["note"] = row.note;
                break;
            case RowStatus::skipped:
                j["status"] = "skipped";
                j["note"] = row.note;
                break;
        }
        rows.push_back(std::move(j));
    }
    return {{"parameter", result.parameter},
            {"winner", result.winner ? nlohmann::json(result.rows[*result.winner].value) : nlohmann::json(nullptr)},
            {"rows", rows}};
}

}  // namespace protum
