#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "protum/sweep.hpp"
#include "protum/synth.hpp"
#include "test_util.hpp"

using namespace protum;

namespace {

struct Data {
    PooledDataset train, val;
};

Data small_data(std::vector<double> signal, std::uint64_t seed) {
    SynthSpec s;
    s.n_layers = static_cast<std::uint32_t>(signal.size());
    s.dim = 8;
    s.width = 2;
    s.classes = 2;
    s.train_count = 120;
    s.val_count = 60;
    s.layer_signal = std::move(signal);
    s.noise_sigma = 0.5;
    s.seed = seed;
    const auto d = generate(s);
    return {pool_dataset(d.header, d.train, PoolingMode::max), pool_dataset(d.header, d.val, PoolingMode::max)};
}

SweepOptions fast(std::uint64_t seed, std::size_t jobs = 1) {
    SweepOptions o;
    o.config.seed = seed;
    o.config.max_epochs = 15;
    o.config.patience = 5;
    o.jobs = jobs;
    return o;
}

SweepRow row(std::string value, double key, double acc, RowStatus status = RowStatus::ok) {
    SweepRow r;
    r.value = std::move(value);
    r.sort_key = key;
    r.accuracy = acc;
    r.status = status;
    return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("winner law") {
    std::vector<SweepRow> rows{row("1", 1, 0.7), row("2", 2, 0.9), row("3", 3, 0.9), row("4", 4, 0.95, RowStatus::failed)};
    CHECK(pick_winner(rows) == 1u);
    rows[0].accuracy = 0.9;
    CHECK(pick_winner(rows) == 0u);
    std::vector<SweepRow> none{row("1", 1, 0.0, RowStatus::skipped)};
    CHECK_FALSE(pick_winner(none).has_value());
    std::vector<SweepRow> layers{row("-4", -4, 0.8), row("-1", -1, 0.8), row("MAX4", 1e6 + 8, 0.8)};
    CHECK(pick_winner(layers) == 0u);
}

TEST_CASE("layer sweep covers the default grid in order") {
    const auto d = small_data({0, 0, 0, 0, 0, 0, 0, 0, 0.2, 1.0, 0.2, 0.2}, 1);
    const auto r = sweep_layer(d.train, d.val, fast(3));
    REQUIRE(r.rows.size() == 6);
    const std::vector<std::string> order{"-4", "-3", "-2", "-1", "MAX4", "AVG4"};
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(r.rows[i].value == order[i]);
        CHECK(r.rows[i].status == RowStatus::ok);
        CHECK(r.rows[i].params == 2 * 8 + 2);
    }
    REQUIRE(r.winner.has_value());
    double best = 0.0;
    for (const auto& x : r.rows) best = std::max(best, x.accuracy);
    CHECK(r.winner_row()->accuracy == best);
}

TEST_CASE("rows are isolated and jobs do not change numbers") {
    const auto d = small_data({0, 0, 0, 0, 0, 0, 0, 0.3, 0.5, 0.8, 0.5, 0.3}, 2);
    const auto full = sweep_layer(d.train, d.val, fast(9));
    const auto part = sweep_layer(d.train, d.val, fast(9), {LayerSelector::single(-2), LayerSelector::cross(4, PoolingMode::avg)});
    const auto par = sweep_layer(d.train, d.val, fast(9, 4));
    REQUIRE(part.rows.size() == 2);
    CHECK(part.rows[0].accuracy == full.rows[2].accuracy);
    CHECK(part.rows[0].seed == full.rows[2].seed);
    CHECK(part.rows[1].accuracy == full.rows[5].accuracy);
    CHECK(to_json(par, false) == to_json(full, false));
}

TEST_CASE("K sweep: six divisors, params decrease, illegal S skipped") {
    const auto d = small_data({0, 0, 0, 0, 0, 0, 0.2, 0.4, 0.6, 0.8, 0.6, 0.4}, 3);
    const auto r = sweep_k(d.train, d.val, fast(1), 1);
    REQUIRE(r.rows.size() == 6);
    const std::vector<std::string> ks{"1", "2", "3", "4", "6", "12"};
    for (std::size_t i = 0; i < 6; ++i) CHECK(r.rows[i].value == ks[i]);
    for (std::size_t i = 1; i < 6; ++i) CHECK(r.rows[i].params < r.rows[i - 1].params);
    CHECK(r.rows[0].params == res_param_count(12, 8, 2, 1, 1));

    const auto s3 = sweep_k(d.train, d.val, fast(1), 3);
    CHECK(s3.rows[5].status == RowStatus::skipped);  // K=12: N/K = 1 < 3
    CHECK(s3.rows[4].status == RowStatus::skipped);  // K=6: N/K = 2 < 3
    CHECK(s3.rows[3].status == RowStatus::ok);       // K=4: N/K = 3

    const auto bad = sweep_k(d.train, d.val, fast(1), 1, {5});
    CHECK(bad.rows[0].status == RowStatus::skipped);
    CHECK(divisors(12) == std::vector<std::size_t>{1, 2, 3, 4, 6, 12});
    CHECK(divisors(24).size() == 8);
}

TEST_CASE("S sweep rows and unit counts") {
    const auto d = small_data({0, 0, 0, 0, 0, 0, 0.2, 0.4, 0.6, 0.8, 0.6, 0.4}, 4);
    const auto r = sweep_s(d.train, d.val, fast(1), 3);
    REQUIRE(r.rows.size() == 4);
    for (std::size_t s = 1; s <= 4; ++s) CHECK(r.rows[s - 1].params == res_param_count(12, 8, 2, 3, s));
    const auto single = sweep_s(d.train, d.val, fast(1), 12);
    CHECK(single.rows.size() == 1);
    const auto outside = sweep_s(d.train, d.val, fast(1), 3, {6});
    CHECK(outside.rows[0].status == RowStatus::skipped);
    CHECK_FALSE(outside.winner.has_value());
}

TEST_CASE("failed rows do not abort the sweep") {
    const auto d = small_data({0, 0, 0, 0, 0, 0, 0.2, 0.4, 0.6, 0.8, 0.6, 0.4}, 5);
    auto o = fast(1);
    o.config.learning_rate = 1e30;
    o.config.optimizer = OptimizerKind::sgd;
    const auto r = sweep_k(d.train, d.val, o, 1);
    CHECK(r.rows.size() == 6);
    bool any_failed = false;
    for (const auto& x : r.rows) any_failed |= x.status == RowStatus::failed;
    CHECK(any_failed);
    CHECK(emit_table(r, TableFormat::csv, false).find("failed") != std::string::npos);
}

TEST_CASE("table emission") {
    SweepResult r;
    r.parameter = "layer";
    r.rows = {row("-4", -4, 0.5), row("-3", -3, 0.91234), row("-2", -2, 0.6), row("-1", -1, 0.7),
              row("MAX4", 1e6 + 8, 0.8), row("AVG4", 1e6 + 9, 0.8)};
    r.rows[1].params = 1538;
    r.rows[1].seed = 42;
    r.rows[1].seconds = 1.23456;
    r.winner = pick_winner(r.rows);

    const auto csv = emit_table(r, TableFormat::csv);
    CHECK(count_lines(csv) == 7);
    CHECK(csv.rfind("layer,acc,params,seconds,seed,status\n", 0) == 0);
    CHECK(csv.find("-3,0.912,1538,1.235,42,ok\n") != std::string::npos);
    CHECK(emit_table(r, TableFormat::csv, false).find("-3,0.912,1538,0.000,42,ok\n") != std::string::npos);

    const auto md = emit_table(r, TableFormat::markdown);
    CHECK(md.find("| -3* | 0.912 |") != std::string::npos);
    CHECK(md.find("| -4 | 0.500 |") != std::string::npos);
    CHECK(md == emit_table(r, TableFormat::markdown));
    CHECK(count_lines(md) == 8);

    r.rows[0].status = RowStatus::failed;
    r.rows[0].note = "bad, \"very\" bad";
    const auto quoted = emit_table(r, TableFormat::csv);
    CHECK(quoted.find("\"failed: bad, \"\"very\"\" bad\"") != std::string::npos);

    SweepResult empty;
    CHECK_ERROR_KIND(emit_table(empty, TableFormat::csv), ErrorKind::InvalidConfig);
    CHECK_ERROR_KIND(parse_table_format("html"), ErrorKind::InvalidConfig);
}

TEST_CASE("median over runs") {
    auto make = [](double a, double b) {
        SweepResult r;
        r.parameter = "S";
        r.rows = {row("1", 1, a), row("2", 2, b)};
        r.winner = pick_winner(r.rows);
        return r;
    };
    const auto m = median_over_runs({make(0.9, 0.5), make(0.4, 0.6), make(0.5, 0.7), make(0.5, 0.8), make(0.6, 0.6)});
    CHECK(m.rows[0].accuracy == 0.5);
    CHECK(m.rows[1].accuracy == 0.6);
    CHECK(m.winner == 1u);
    auto failing = make(0.9, 0.1);
    failing.rows[0].status = RowStatus::failed;
    const auto f = median_over_runs({make(0.9, 0.1), failing});
    CHECK(f.rows[0].status == RowStatus::failed);
    CHECK(f.winner == 1u);
}
