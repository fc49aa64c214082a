#pragma once

// Experiment grids over a fixed train/val pair: base-head layer choice,
// residual stride K and residual start S. Each row trains independently with
// seed hash(config.seed, row value), so a row's numbers do not depend on which
// other rows are in the grid.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "protum/trainer.hpp"

namespace protum {

enum class RowStatus { ok, failed, skipped };

struct SweepRow {
    std::string value;      // "-3", "MAX4", "3", ...
    double sort_key = 0.0;  // rows are ordered and ties broken by this
    RowStatus status = RowStatus::ok;
    std::string note;       // failure or skip reason
    double accuracy = 0.0;
    std::size_t params = 0;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
};

struct SweepResult {
    std::string parameter;  // "layer", "K" or "S"
    std::vector<SweepRow> rows;
    std::optional<std::size_t> winner;  // index into rows

    const SweepRow* winner_row() const { return winner ? &rows[*winner] : nullptr; }
};

struct SweepOptions {
    TrainConfig config;
    std::size_t jobs = 1;  // rows trained concurrently
};

/// Highest accuracy among ok rows; ties go to the smallest sort key.
std::optional<std::size_t> pick_winner(const std::vector<SweepRow>& rows);

std::uint64_t row_seed(std::uint64_t global_seed, const std::string& parameter, const std::string& value);

std::vector<LayerSelector> default_layer_grid();
std::vector<std::size_t> divisors(std::size_t n);

SweepResult sweep_layer(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                        const std::vector<LayerSelector>& layers = default_layer_grid());
/// `ks` empty means every divisor of N.
SweepResult sweep_k(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                    std::size_t start, std::vector<std::size_t> ks = {});
/// `ss` empty means 1..N/K.
SweepResult sweep_s(const PooledDataset& train_set, const PooledDataset& val_set, const SweepOptions& options,
                    std::size_t stride, std::vector<std::size_t> ss = {});

/// Combines repeated runs of one grid: each row's accuracy becomes the median
/// over runs, a row failing in any run is failed, and the winner is re-picked.
SweepResult median_over_runs(const std::vector<SweepResult>& runs);

enum class TableFormat { csv, markdown };
TableFormat parse_table_format(const std::string& name);

/// Columns: value, acc, params, seconds, seed, status.
std::string emit_table(const SweepResult& result, TableFormat format, bool include_timing = true);

nlohmann::json to_json(const SweepResult& result, bool include_timing = true);

}  // namespace protum
