// Copyright 2026 The aqobench Authors.
//
//    Licensed under the Apache License, Version 2.0 (the "License");
//    you may not use this file except in compliance with the License.
//    You may obtain a copy of the License at
//
//        http://www.apache.org/licenses/LICENSE-2.0
//
//    Unless required by applicable law or agreed to in writing, software
//    distributed under the License is distributed on an "AS IS" BASIS,
//    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//    See the License for the specific language governing permissions and
//    limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "aqo/bench.hpp"
#include "json.hpp"

namespace aqo {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("aqo_bench_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Order-statistic interpolation written from the rank r = q (n - 1).
double reference_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double r = q * double(v.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(r)), above = static_cast<std::size_t>(std::ceil(r));
    const double w = r - std::floor(r);
    return (1 - w) * v[below] + w * v[above];
}

TEST(Percentile, SmallSample) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    EXPECT_DOUBLE_EQ(percentile(x, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(percentile(x, 0.4), 2.6);
    EXPECT_DOUBLE_EQ(percentile(x, 0.6), 3.4);
    EXPECT_DOUBLE_EQ(percentile(x, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(percentile(x, 1.0), 5.0);
    const std::vector<double> one{7.5};
    EXPECT_DOUBLE_EQ(percentile(one, 0.4), 7.5);
    EXPECT_THROW(percentile(std::vector<double>{}, 0.5), std::invalid_argument);
    EXPECT_THROW(percentile(x, 1.5), std::invalid_argument);
}

TEST(Percentile, MatchesReference) {
    std::mt19937_64 rng(4);
    std::lognormal_distribution<double> d(0.0, 2.0);
    for (int n : {2, 3, 10, 99, 100}) {
        std::vector<double> v(n);
        for (double& x : v) x = d(rng);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        for (double q : {0.4, 0.5, 0.6, 0.13}) {
            const double want = reference_percentile(v, q);
            EXPECT_NEAR(percentile(sorted, q), want, 1e-12 * std::abs(want)) << n << " " << q;
        }
    }
}

ResultRow row(int size, int index, Method m, double g) {
    ResultRow r;
    r.size = size;
    r.instance_index = index;
    r.instance_id = "i" + std::to_string(index);
    r.method = m;
    r.g_min = g;
    return r;
}

TEST(Aggregate, ExcludesFlaggedRows) {
    std::vector<ResultRow> rows;
    for (int i = 0; i < 5; ++i) rows.push_back(row(8, i, Method::exact, i + 1.0));
    rows.push_back(row(8, 5, Method::exact, 0.001));
    rows.back().flags.push_back("degenerate");
    rows.push_back(row(8, 6, Method::exact, ResultRow::kNaN));
    rows.push_back(row(16, 0, Method::qmc, 0.5));
    rows.back().error = true;
    const auto agg = aggregate(rows, "g_min");
    ASSERT_EQ(agg.size(), 2u);
    EXPECT_EQ(agg[0].count, 5);
    EXPECT_EQ(agg[0].excluded, 2);
    EXPECT_DOUBLE_EQ(agg[0].median, 3.0);
    EXPECT_DOUBLE_EQ(agg[0].p40, 2.6);
    EXPECT_DOUBLE_EQ(agg[0].p60, 3.4);
    EXPECT_EQ(agg[1].count, 0);
    EXPECT_TRUE(std::isnan(agg[1].median));
    EXPECT_THROW(aggregate(rows, "nope"), std::invalid_argument);
}

TEST(CycleTime, ReadoutDominates) {
    const CycleTime c = total_cycle_time(20e-6, 128, {});
    EXPECT_DOUBLE_EQ(c.readout_us, 4608.0);
    EXPECT_DOUBLE_EQ(c.thermalization_us, 1000.0);
    EXPECT_NEAR(c.total_us, 20.0 + 4608.0 + 1000.0, 1e-9);
    EXPECT_LT(c.anneal_fraction(), 0.01);
    const CycleTime bare = total_cycle_time(3e-3, 128, {0.0, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(bare.total_us, bare.anneal_us);
    EXPECT_DOUBLE_EQ(bare.anneal_fraction(), 1.0);
    EXPECT_THROW(total_cycle_time(1e-6, 8, {-1.0, 0.0, 0.0}), std::invalid_argument);
}

TEST(Rows, CsvRoundTrip) {
    std::vector<ResultRow> rows;
    rows.push_back(row(8, 0, Method::exact, 0.123456789012345678));
    rows.back().s_star = 0.4;
    rows.back().matel = 1.0 / 3;
    rows.back().t_a = 2.5e-9;
    rows.back().wall_time_s = 0.01;
    rows.back().flags = {"at s*: gap relative error above 5%", "quote \" and, comma"};
    rows.push_back(row(16, 1, Method::treedp, ResultRow::kNaN));
    rows.back().energy = "-31/3";
    rows.back().degeneracy = 1;
    rows.push_back(row(16, 2, Method::brute, ResultRow::kNaN));
    rows.back().error = true;
    rows.back().instance_id = "id,with,commas";
    std::string text = to_csv_header() + "\n";
    for (const auto& r : rows) text += to_csv(r) + "\n";
    const auto back = parse_results_csv(text);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        EXPECT_TRUE(same_result(rows[k], back[k])) << k;
        EXPECT_EQ(to_csv(back[k]), to_csv(rows[k]));
    }
    EXPECT_THROW(parse_results_csv("bad\n"), std::invalid_argument);
    EXPECT_THROW(parse_results_csv(to_csv_header() + "\n1,2\n"), std::invalid_argument);
}

TEST(Config, ParseAndSerialize) {
    const std::string text = R"({
        "tilings": [[1, 1], [2, 1]],
        "instances_per_size": 7,
        "methods": ["exact", "treedp"],
        "schedule": {"linear": [2.0, 3.0]},
        "qmc": {"n_slices": 64, "d_tau": 0.125},
        "temperature_lines": [{"label": "hot", "ghz": 0.5}],
        "overheads": {"programming_us": 3.0},
        "output_dir": "out",
        "seed": 9
    })";
    const ExperimentConfig c = parse_experiment_config(text);
    ASSERT_EQ(c.tilings.size(), 2u);
    EXPECT_EQ(c.tilings[1].num_vars, 16);
    EXPECT_EQ(c.tilings[1].default_s_count, 40);
    EXPECT_EQ(c.instances_per_size, 7);
    EXPECT_TRUE(c.uses(Method::treedp));
    EXPECT_FALSE(c.uses(Method::qmc));
    EXPECT_DOUBLE_EQ(c.linear_b1, 3.0);
    EXPECT_EQ(c.qmc.n_slices, 64);
    EXPECT_EQ(c.qmc.sweeps_measure, PimcConfig{}.sweeps_measure);
    EXPECT_EQ(c.temperature_lines.size(), 1u);
    EXPECT_DOUBLE_EQ(c.overheads.programming_us, 3.0);
    EXPECT_DOUBLE_EQ(c.overheads.readout_us_per_qubit, 36.0);
    const ExperimentConfig again = parse_experiment_config(serialize_experiment_config(c));
    EXPECT_EQ(serialize_experiment_config(again), serialize_experiment_config(c));
    EXPECT_EQ(again.output_dir, c.output_dir);

    EXPECT_THROW(parse_experiment_config(R"({"tilings": [[1, 1]], "colour": 1})"), std::invalid_argument);
    EXPECT_THROW(parse_experiment_config(R"({"tilings": [[5, 5]]})"), std::invalid_argument);
    EXPECT_THROW(parse_experiment_config("{"), std::invalid_argument);
    ExperimentConfig big;
    big.tilings = {standard_tilings().back()};
    big.methods = {Method::exact};
    EXPECT_THROW(big.validate(), std::invalid_argument);
    big.methods = {Method::treedp, Method::qmc};
    EXPECT_NO_THROW(big.validate());
}

ExperimentConfig tiny(const fs::path& dir) {
    ExperimentConfig c;
    c.tilings = {standard_tilings().front()};
    c.instances_per_size = 3;
    c.solver_repeats = 2;
    c.methods = {Method::exact, Method::treedp, Method::brute};
    c.output_dir = dir;
    c.seed = 5;
    return c;
}

TEST(Experiment, ResumeReproducesFullRun) {
    const ExperimentConfig full_cfg = tiny(scratch("full"));
    const ExperimentResult full = run_experiment(full_cfg, {.task_limit = std::nullopt, .workers = 1});
    ASSERT_TRUE(full.complete);
    EXPECT_EQ(full.tasks_total, 9u);
    EXPECT_FALSE(full.any_error);

    const ExperimentConfig part_cfg = tiny(scratch("parts"));
    const ExperimentResult first = run_experiment(part_cfg, {.task_limit = 4, .workers = 1});
    EXPECT_FALSE(first.complete);
    EXPECT_EQ(first.tasks_run, 4u);
    EXPECT_FALSE(fs::exists(part_cfg.output_dir / "raw.csv"));
    // A killed run may leave half a journal line behind.
    std::ofstream(part_cfg.output_dir / "journal.jsonl", std::ios::app) << "{\"size\": 8, \"inst";
    const ExperimentResult second = run_experiment(part_cfg, {.task_limit = std::nullopt, .workers = 1});
    EXPECT_TRUE(second.complete);
    EXPECT_EQ(second.tasks_resumed, 4u);
    EXPECT_EQ(second.tasks_run, 5u);
    ASSERT_EQ(second.rows.size(), full.rows.size());
    for (std::size_t k = 0; k < full.rows.size(); ++k) EXPECT_TRUE(same_result(full.rows[k], second.rows[k])) << k;

    const ExperimentResult third = run_experiment(part_cfg, {.task_limit = std::nullopt, .workers = 1});
    EXPECT_EQ(third.tasks_run, 0u);
    EXPECT_EQ(third.tasks_resumed, 9u);
    // Instances are reloaded, not regenerated.
    EXPECT_EQ(slurp(part_cfg.output_dir / "instances/1x1/000.txt"), slurp(full_cfg.output_dir / "instances/1x1/000.txt"));
}

TEST(Experiment, ManifestAndReport) {
    const ExperimentConfig cfg = tiny(scratch("report"));
    const ExperimentResult res = run_experiment(cfg, {.task_limit = std::nullopt, .workers = 1});
    ASSERT_TRUE(res.complete);
    const auto manifest = nlohmann::json::parse(slurp(cfg.output_dir / "manifest.json"));
    ASSERT_EQ(manifest["sizes"].size(), 1u);
    EXPECT_EQ(manifest["sizes"][0]["s_count"], 30);
    EXPECT_EQ(manifest["sizes"][0]["exact_grid"].size(), 30u);
    EXPECT_DOUBLE_EQ(manifest["temperature_ghz"].get<double>(), 0.015625);
    for (const auto& entry : manifest["cycle_time"]) {
        EXPECT_DOUBLE_EQ(entry["readout_us"].get<double>(), 8 * 36.0);
    }

    const std::string agg = slurp(cfg.output_dir / "aggregate.csv");
    const std::string gap = slurp(cfg.output_dir / "gap_vs_size.svg");
    const std::string time = slurp(cfg.output_dir / "time_vs_size.svg");
    render_report(cfg.output_dir);
    EXPECT_EQ(slurp(cfg.output_dir / "aggregate.csv"), agg);
    EXPECT_EQ(slurp(cfg.output_dir / "gap_vs_size.svg"), gap);
    EXPECT_EQ(slurp(cfg.output_dir / "time_vs_size.svg"), time);

    // The plotted median equals the aggregate row and the raw values.
    std::vector<double> g;
    for (const auto& r : parse_results_csv(slurp(cfg.output_dir / "raw.csv"))) {
        if (r.method == Method::exact && !r.flagged()) g.push_back(r.g_min);
    }
    ASSERT_FALSE(g.empty());
    const double median = reference_percentile(g, 0.5);
    char buf[64];
    std::snprintf(buf, sizeof buf, "data-median=\"%.17g\"", median);
    EXPECT_NE(gap.find(buf), std::string::npos) << buf;
    std::snprintf(buf, sizeof buf, "8,exact,g_min,%.17g,", median);
    EXPECT_NE(agg.find(buf), std::string::npos) << buf;
    EXPECT_NE(gap.find("data-ghz=\"0.44\""), std::string::npos);
    EXPECT_NE(gap.find("data-ghz=\"0.015625\""), std::string::npos);
}

TEST(Methods, Names) {
    for (Method m : {Method::exact, Method::qmc, Method::treedp, Method::brute}) EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_THROW(parse_method("anneal"), std::invalid_argument);
}

}  // namespace
}  // namespace aqo
