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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "aqo/bench.hpp"
#include "aqo/exact.hpp"
#include "aqo/instance.hpp"
#include "aqo/qmc.hpp"
#include "aqo/rng.hpp"
#include "aqo/schedule.hpp"
#include "aqo/topology.hpp"
#include "aqo/treesolver.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aqo;

namespace {

struct ScheduleArgs {
    std::string path;
    std::string linear = "1,1";

    void add(CLI::App* app) {
        auto* p = app->add_option("--schedule", path, "schedule CSV (s,A_GHz,B_GHz)");
        app->add_option("--linear", linear, "linear envelopes A0,B1 in GHz")->excludes(p);
    }

    Schedule load() const {
        if (!path.empty()) return load_schedule(path);
        const auto comma = linear.find(',');
        if (comma == std::string::npos) throw CLI::ValidationError("--linear", "expected A0,B1");
        return linear_schedule(std::stod(linear.substr(0, comma)), std::stod(linear.substr(comma + 1)));
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return percentile(v, 0.5);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adiabatic optimization benchmark tools"};
    app.require_subcommand(1);

    // generate
    int gen_rows = 1, gen_cols = 1, gen_count = 10;
    std::uint64_t gen_seed = 1;
    std::string gen_out = "instances";
    auto* gen = app.add_subcommand("generate", "filtered random instances with a unique ground state");
    gen->add_option("--rows", gen_rows)->check(CLI::PositiveNumber);
    gen->add_option("--cols", gen_cols)->check(CLI::PositiveNumber);
    gen->add_option("--count", gen_count)->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out, "output directory");

    // exact-scan
    std::string ex_instance, ex_out = ".";
    int ex_points = 30;
    bool ex_refine = false;
    ScheduleArgs ex_sched;
    auto* ex = app.add_subcommand("exact-scan", "exact lowest-two spectrum over s");
    ex->add_option("--instance", ex_instance)->required()->check(CLI::ExistingFile);
    ex_sched.add(ex);
    ex->add_option("--s-grid", ex_points, "number of uniform s points on [0, 1]")->check(CLI::Range(2, 100000));
    ex->add_flag("--refine", ex_refine, "refine the minimum by golden section");
    ex->add_option("--out", ex_out, "output directory");

    // qmc-scan
    std::string qmc_instance, qmc_out = ".";
    ScheduleArgs qmc_sched;
    PimcConfig pc;
    int qmc_points = 0, qmc_repeats = 1;
    auto* qmc = app.add_subcommand("qmc-scan", "path-integral Monte Carlo gap scan");
    qmc->add_option("--instance", qmc_instance)->required()->check(CLI::ExistingFile);
    qmc_sched.add(qmc);
    qmc->add_option("--slices", pc.n_slices);
    qmc->add_option("--dtau", pc.d_tau, "Trotter step in ns");
    qmc->add_option("--sweeps", pc.sweeps_measure, "measurement sweeps");
    qmc->add_option("--equil", pc.sweeps_equil, "equilibration sweeps");
    qmc->add_option("--pilot", pc.sweeps_pilot, "projection pilot sweeps");
    qmc->add_option("--feedback-rounds", pc.feedback_rounds);
    qmc->add_option("--feedback-sweeps", pc.feedback_sweeps);
    qmc->add_option("--bins", pc.bins);
    qmc->add_option("--seed", pc.seed);
    qmc->add_option("--points", qmc_points, "s points (default: the standard count for the size)");
    qmc->add_option("--repeats", qmc_repeats, "independent restarts, combined by median")->check(CLI::PositiveNumber);
    qmc->add_option("--workers", pc.workers, "threads for the replica sweeps")->check(CLI::PositiveNumber);
    qmc->add_option("--out", qmc_out, "output directory");

    // solve
    std::string solve_instance, solve_method = "treedp";
    int solve_repeats = 10;
    auto* sol = app.add_subcommand("solve", "exact classical ground state");
    sol->add_option("--instance", solve_instance)->required()->check(CLI::ExistingFile);
    sol->add_option("--method", solve_method)->check(CLI::IsMember({"brute", "treedp"}));
    sol->add_option("--repeats", solve_repeats)->check(CLI::PositiveNumber);

    // bench
    std::string bench_config;
    std::optional<std::size_t> bench_limit;
    auto* bench = app.add_subcommand("bench", "run an experiment (workers from AQO_WORKERS)");
    bench->add_option("--config", bench_config)->required()->check(CLI::ExistingFile);
    bench->add_option("--max-tasks", bench_limit, "stop after this many new tasks; rerun to resume");

    // report
    std::string report_dir;
    auto* rep = app.add_subcommand("report", "re-render aggregates and plots from raw.csv");
    rep->add_option("--results", report_dir)->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const FilteredBatch batch = generate_filtered_batch(build_chimera(gen_rows, gen_cols), gen_count, gen_seed);
            fs::create_directories(gen_out);
            for (const auto& inst : batch.instances) save_instance(inst, fs::path(gen_out) / (inst.id + ".txt"));
            std::cout << json{{"written", batch.instances.size()},
                              {"rejected", batch.rejected.size()},
                              {"acceptance_rate", batch.acceptance_rate()},
                              {"out", gen_out}}
                             .dump(2)
                      << "\n";
        } else if (*ex) {
            const ProblemInstance inst = load_instance(ex_instance);
            ScanOptions opt;
            opt.refine = ex_refine;
            const SpectrumScan scan = scan_and_refine(inst, ex_sched.load(), uniform_grid(ex_points), opt);
            std::string csv = "s,E0_GHz,E1_GHz,gap_GHz,matel_GHz\n";
            for (std::size_t i = 0; i < scan.s_grid.size(); ++i) {
                csv += number(scan.s_grid[i]) + "," + number(scan.e0[i]) + "," + number(scan.e1[i]) + "," +
                       number(scan.gaps[i]) + "," + number(scan.matrix_elems[i]) + "\n";
            }
            write_text(fs::path(ex_out) / "exact_scan.csv", csv);
            const json summary = {{"instance_id", inst.id},
                                  {"s_star", scan.s_star},
                                  {"g_min_GHz", scan.g_min},
                                  {"matel_GHz", scan.matel_at_star},
                                  {"t_a_seconds", scan.t_adiabatic},
                                  {"flags", scan.flags}};
            write_text(fs::path(ex_out) / "exact_summary.json", summary.dump(2) + "\n");
            std::cout << summary.dump(2) << "\n";
        } else if (*qmc) {
            const ProblemInstance inst = load_instance(qmc_instance);
            const Schedule schedule = qmc_sched.load();
            int points = qmc_points;
            if (points == 0) {
                for (const Tiling& t : standard_tilings()) {
                    if (t.num_vars == inst.num_vars()) points = t.default_s_count;
                }
                if (points == 0) points = 30;
            }
            std::vector<double> g, s, m, t;
            json runs = json::array();
            json flags = json::array();
            for (int r = 0; r < qmc_repeats; ++r) {
                PimcConfig c = pc;
                c.seed = qmc_repeats == 1 ? pc.seed : derive_seed(pc.seed, static_cast<std::uint64_t>(r));
                const QmcScanResult q = qmc_scan(inst, schedule, c, {}, points);
                std::string csv = "s,gap_GHz,gap_err,amp,amp_err,chi2\n";
                for (const GapEstimate& p : q.points) {
                    const auto it = p.amplitudes.count("V") ? p.amplitudes.find("V") : p.amplitudes.find("H_P");
                    csv += number(p.s) + "," + number(p.gap) + "," + number(p.gap_error) + "," +
                           number(it->second.first) + "," + number(it->second.second) + "," + number(p.chi2_dof) + "\n";
                }
                const std::string suffix = qmc_repeats == 1 ? "" : "_r" + std::to_string(r);
                write_text(fs::path(qmc_out) / ("qmc_scan" + suffix + ".csv"), csv);
                g.push_back(q.scan.g_min);
                s.push_back(q.scan.s_star);
                m.push_back(q.scan.matel_at_star);
                t.push_back(q.scan.t_adiabatic);
                for (const auto& f : q.scan.flags) flags.push_back(f);
                runs.push_back({{"seed", c.seed},
                                {"s_star", q.scan.s_star},
                                {"g_min", nullable(q.scan.g_min)},
                                {"grid_history", q.grid_history},
                                {"swap_acceptance", q.swap_acceptance},
                                {"flip_acceptance", q.flip_acceptance},
                                {"round_trips", q.round_trips},
                                {"simulated_variables", q.simulated_variables},
                                {"warnings", q.warnings}});
            }
            const json summary = {{"instance_id", inst.id},
                                  {"s_star", median(s)},
                                  {"g_min", nullable(median(g))},
                                  {"matel", nullable(median(m))},
                                  {"t_a", nullable(median(t))},
                                  {"temperature_ghz", pc.temperature_ghz()},
                                  {"repeats", qmc_repeats},
                                  {"flags", flags}};
            write_text(fs::path(qmc_out) / "qmc_summary.json", summary.dump(2) + "\n");
            write_text(fs::path(qmc_out) / "qmc_manifest.json", json{{"runs", runs}}.dump(2) + "\n");
            std::cout << summary.dump(2) << "\n";
        } else if (*sol) {
            const ProblemInstance inst = load_instance(solve_instance);
            const SolveResult res = timed_solve(inst, parse_solve_method(solve_method), solve_repeats);
            std::string assignment;
            for (auto x : res.assignment) assignment += x > 0 ? '+' : '-';
            std::cout << json{{"instance_id", inst.id},
                              {"energy", res.energy_string()},
                              {"assignment", assignment},
                              {"degeneracy", res.degeneracy},
                              {"wall_time_s", res.wall_time_s},
                              {"method", to_string(res.method)},
                              {"width", res.width}}
                             .dump(2)
                      << "\n";
        } else if (*bench) {
            const ExperimentConfig config = load_experiment_config(bench_config);
            RunOptions opt;
            opt.task_limit = bench_limit;
            const ExperimentResult res = run_experiment(config, opt);
            std::cout << json{{"tasks", res.tasks_total},
                              {"ran", res.tasks_run},
                              {"resumed", res.tasks_resumed},
                              {"complete", res.complete},
                              {"errors", res.any_error},
                              {"output_dir", config.output_dir.string()}}
                             .dump(2)
                      << "\n";
            return res.any_error ? 1 : 0;
        } else if (*rep) {
            render_report(report_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
