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

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aqo/qmc.hpp"
#include "aqo/schedule.hpp"
#include "aqo/topology.hpp"

namespace aqo {

enum class Method { exact, qmc, treedp, brute };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct TemperatureLine {
    std::string label;
    double ghz = 0.0;

    friend bool operator==(const TemperatureLine&, const TemperatureLine&) = default;
};

// 21 mK and 0.75 mK.
std::vector<TemperatureLine> default_temperature_lines();

struct OverheadModel {
    double readout_us_per_qubit = 36.0;
    double thermalization_us = 1000.0;
    double programming_us = 0.0;  // no published value

    void validate() const;
};

struct CycleTime {
    double anneal_us = 0.0;
    double readout_us = 0.0;
    double thermalization_us = 0.0;
    double programming_us = 0.0;
    double total_us = 0.0;

    double anneal_fraction() const { return total_us > 0 ? anneal_us / total_us : 0.0; }
};

CycleTime total_cycle_time(double t_a_seconds, int n_qubits, const OverheadModel& overheads = {});

struct ExperimentConfig {
    std::vector<Tiling> tilings;
    int instances_per_size = 100;
    int repeats_per_instance = 1;  // QMC restarts, combined by median
    int solver_repeats = 10;       // timing repeats for treedp and brute
    std::vector<Method> methods{Method::exact, Method::treedp, Method::brute};
    // Empty means the linear schedule with `linear_a0`, `linear_b1`.
    std::string schedule_path;
    double linear_a0 = 1.0;
    double linear_b1 = 1.0;
    PimcConfig qmc;
    std::vector<TemperatureLine> temperature_lines = default_temperature_lines();
    OverheadModel overheads;
    std::filesystem::path output_dir = "results";
    std::uint64_t seed = 1;

    bool uses(Method m) const;
    // Throws std::invalid_argument when a tiling is not in the size table or
    // exceeds the guard of a requested method.
    void validate() const;
};

// JSON object with the field names above; tilings are [rows, cols] pairs.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string serialize_experiment_config(const ExperimentConfig& config);

Schedule experiment_schedule(const ExperimentConfig& config);

struct ResultRow {
    int size = 0;  // variables
    int instance_index = 0;
    std::string instance_id;
    Method method = Method::exact;
    std::uint64_t seed = 0;  // instance seed, or the QMC seed
    double g_min = kNaN;     // GHz
    double s_star = kNaN;
    double matel = kNaN;     // GHz
    double t_a = kNaN;       // seconds
    double wall_time_s = kNaN;
    std::string energy;  // classical ground energy, solvers only
    std::uint64_t degeneracy = 0;
    std::vector<std::string> flags;
    bool error = false;  // the task threw

    static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

    std::string key() const;
    bool flagged() const { return error || !flags.empty(); }
};

// Field-wise equality ignoring wall time; NaNs compare equal.
bool same_result(const ResultRow& x, const ResultRow& y);

std::string to_csv_header();
std::string to_csv(const ResultRow& row);
std::vector<ResultRow> parse_results_csv(const std::string& text);

// Linear interpolation between order statistics: h = (n - 1) q,
// x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
double percentile(std::span<const double> sorted, double q);

struct Aggregate {
    int size = 0;
    Method method = Method::exact;
    std::string quantity;
    double median = 0.0;
    double p40 = 0.0;
    double p60 = 0.0;
    int count = 0;
    int excluded = 0;  // flagged rows or missing values
};

// Quantities: g_min, s_star, matel, t_a, wall_time_s.  One Aggregate per
// (size, method) with at least one usable row; groups with only flagged
// rows are reported with count 0 and NaN statistics.
std::vector<Aggregate> aggregate(std::span<const ResultRow> rows, const std::string& quantity);

struct RunOptions {
    // Stop after this many new tasks; the journal allows a later resume.
    std::optional<std::size_t> task_limit;
    int workers = 0;  // 0: AQO_WORKERS or hardware concurrency
};

struct ExperimentResult {
    std::vector<ResultRow> rows;  // sorted by (size, instance, method)
    std::size_t tasks_total = 0;
    std::size_t tasks_run = 0;      // this invocation
    std::size_t tasks_resumed = 0;  // read back from the journal
    bool complete = false;
    bool any_error = false;
};

// Generates or reloads the filtered instances of every tiling, runs each
// (instance, method) task once through the journal in
// `output_dir/journal.jsonl`, and writes raw.csv, the manifest and the
// report when all tasks are done.
ExperimentResult run_experiment(const ExperimentConfig& config, RunOptions options = {});

// Reads raw.csv (and config.json for temperature lines) in `dir` and writes
// aggregate.csv, gap_vs_size.svg and time_vs_size.svg.  Repeated calls on
// the same inputs produce byte-identical files.
void render_report(const std::filesystem::path& dir);

// Same, from rows already in memory.
void render_report(std::span<const ResultRow> rows, const ExperimentConfig& config,
                   const std::filesystem::path& dir);

}  // namespace aqo
