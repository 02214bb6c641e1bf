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

#include "aqo/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "aqo/exact.hpp"
#include "aqo/instance.hpp"
#include "aqo/parallel.hpp"
#include "aqo/rng.hpp"
#include "aqo/treesolver.hpp"
#include "json.hpp"

#ifndef AQO_VERSION
#define AQO_VERSION "unknown"
#endif

namespace aqo {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Method m) {
    switch (m) {
        case Method::exact: return "exact";
        case Method::qmc: return "qmc";
        case Method::treedp: return "treedp";
        case Method::brute: return "brute";
    }
    throw std::logic_error("to_string: bad method");
}

Method parse_method(const std::string& s) {
    for (Method m : {Method::exact, Method::qmc, Method::treedp, Method::brute}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown method '" + s + "'");
}

std::vector<TemperatureLine> default_temperature_lines() {
    return {{"21 mK", 0.44}, {"0.75 mK", 0.015625}};
}

void OverheadModel::validate() const {
    if (!(readout_us_per_qubit >= 0 && thermalization_us >= 0 && programming_us >= 0)) {
        throw std::invalid_argument("overheads must be nonnegative");
    }
}

CycleTime total_cycle_time(double t_a_seconds, int n_qubits, const OverheadModel& overheads) {
    overheads.validate();
    if (n_qubits < 0) throw std::invalid_argument("total_cycle_time: negative qubit count");
    CycleTime c;
    c.anneal_us = t_a_seconds * 1e6;
    c.readout_us = n_qubits * overheads.readout_us_per_qubit;
    c.thermalization_us = overheads.thermalization_us;
    c.programming_us = overheads.programming_us;
    c.total_us = c.anneal_us + c.readout_us + c.thermalization_us + c.programming_us;
    return c;
}

// ---- configuration ------------------------------------------------------------

bool ExperimentConfig::uses(Method m) const {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void ExperimentConfig::validate() const {
    if (tilings.empty()) throw std::invalid_argument("config: no tilings");
    if (methods.empty()) throw std::invalid_argument("config: no methods");
    if (instances_per_size < 1) throw std::invalid_argument("config: instances_per_size < 1");
    if (repeats_per_instance < 1) throw std::invalid_argument("config: repeats_per_instance < 1");
    if (solver_repeats < 1) throw std::invalid_argument("config: solver_repeats < 1");
    const auto& table = standard_tilings();
    for (const Tiling& t : tilings) {
        if (std::find(table.begin(), table.end(), t) == table.end()) {
            throw std::invalid_argument("config: " + std::to_string(t.rows) + "x" + std::to_string(t.cols) +
                                        " is not a standard tiling");
        }
        if (uses(Method::exact) && t.num_vars > kExactMaxVars) {
            throw std::invalid_argument("config: exact needs N <= " + std::to_string(kExactMaxVars));
        }
        if (uses(Method::brute) && t.num_vars > kBruteForceMaxVars) {
            throw std::invalid_argument("config: brute needs N <= " + std::to_string(kBruteForceMaxVars));
        }
    }
    for (const auto& line : temperature_lines) {
        if (!(line.ghz > 0)) throw std::invalid_argument("config: temperature lines must be positive");
    }
    overheads.validate();
    if (uses(Method::qmc)) qmc.validate();
}

namespace {

Tiling find_tiling(int rows, int cols) {
    for (const Tiling& t : standard_tilings()) {
        if (t.rows == rows && t.cols == cols) return t;
    }
    throw std::invalid_argument("config: " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " is not a standard tiling");
}

template <class T>
void read(const json& obj, const char* key, T& out) {
    if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
    if (!obj.is_object()) throw std::invalid_argument(std::string("config: ") + where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw std::invalid_argument(std::string("config: unknown key '") + key + "' in " + where);
        }
    }
}

PimcConfig parse_pimc(const json& j) {
    check_keys(j,
               {"n_slices", "d_tau", "sweeps_equil", "sweeps_measure", "sweeps_pilot", "bins", "swap_interval",
                "feedback_rounds", "feedback_sweeps", "measure_interval", "seed", "s_min", "s_max"},
               "qmc");
    PimcConfig c;
    read(j, "n_slices", c.n_slices);
    read(j, "d_tau", c.d_tau);
    read(j, "sweeps_equil", c.sweeps_equil);
    read(j, "sweeps_measure", c.sweeps_measure);
    read(j, "sweeps_pilot", c.sweeps_pilot);
    read(j, "bins", c.bins);
    read(j, "swap_interval", c.swap_interval);
    read(j, "feedback_rounds", c.feedback_rounds);
    read(j, "feedback_sweeps", c.feedback_sweeps);
    read(j, "measure_interval", c.measure_interval);
    read(j, "seed", c.seed);
    read(j, "s_min", c.s_min);
    read(j, "s_max", c.s_max);
    return c;
}

json pimc_json(const PimcConfig& c) {
    return {{"n_slices", c.n_slices},
            {"d_tau", c.d_tau},
            {"sweeps_equil", c.sweeps_equil},
            {"sweeps_measure", c.sweeps_measure},
            {"sweeps_pilot", c.sweeps_pilot},
            {"bins", c.bins},
            {"swap_interval", c.swap_interval},
            {"feedback_rounds", c.feedback_rounds},
            {"feedback_sweeps", c.feedback_sweeps},
            {"measure_interval", c.measure_interval},
            {"seed", c.seed},
            {"s_min", c.s_min},
            {"s_max", c.s_max}};
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    check_keys(j,
               {"tilings", "instances_per_size", "repeats_per_instance", "solver_repeats", "methods", "schedule",
                "qmc", "temperature_lines", "overheads", "output_dir", "seed"},
               "config");
    ExperimentConfig c;
    try {
        if (auto it = j.find("tilings"); it != j.end()) {
            for (const auto& t : *it) c.tilings.push_back(find_tiling(t.at(0).get<int>(), t.at(1).get<int>()));
        }
        read(j, "instances_per_size", c.instances_per_size);
        read(j, "repeats_per_instance", c.repeats_per_instance);
        read(j, "solver_repeats", c.solver_repeats);
        if (auto it = j.find("methods"); it != j.end()) {
            c.methods.clear();
            for (const auto& m : *it) {
                const Method method = parse_method(m.get<std::string>());
                if (!c.uses(method)) c.methods.push_back(method);
            }
        }
        if (auto it = j.find("schedule"); it != j.end()) {
            check_keys(*it, {"path", "linear"}, "schedule");
            read(*it, "path", c.schedule_path);
            if (auto lin = it->find("linear"); lin != it->end()) {
                c.linear_a0 = lin->at(0).get<double>();
                c.linear_b1 = lin->at(1).get<double>();
            }
        }
        if (auto it = j.find("qmc"); it != j.end()) c.qmc = parse_pimc(*it);
        if (auto it = j.find("temperature_lines"); it != j.end()) {
            c.temperature_lines.clear();
            for (const auto& line : *it) {
                c.temperature_lines.push_back({line.at("label").get<std::string>(), line.at("ghz").get<double>()});
            }
        }
        if (auto it = j.find("overheads"); it != j.end()) {
            check_keys(*it, {"readout_us_per_qubit", "thermalization_us", "programming_us"}, "overheads");
            read(*it, "readout_us_per_qubit", c.overheads.readout_us_per_qubit);
            read(*it, "thermalization_us", c.overheads.thermalization_us);
            read(*it, "programming_us", c.overheads.programming_us);
        }
        if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = it->get<std::string>();
        read(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig c = parse_experiment_config(buf.str());
    // Relative paths are relative to the config file.
    const fs::path base = path.parent_path();
    if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
    if (!c.schedule_path.empty() && fs::path(c.schedule_path).is_relative()) {
        c.schedule_path = (base / c.schedule_path).string();
    }
    return c;
}

std::string serialize_experiment_config(const ExperimentConfig& c) {
    json j;
    j["tilings"] = json::array();
    for (const Tiling& t : c.tilings) j["tilings"].push_back({t.rows, t.cols});
    j["instances_per_size"] = c.instances_per_size;
    j["repeats_per_instance"] = c.repeats_per_instance;
    j["solver_repeats"] = c.solver_repeats;
    j["methods"] = json::array();
    for (Method m : c.methods) j["methods"].push_back(to_string(m));
    if (c.schedule_path.empty()) {
        j["schedule"] = {{"linear", {c.linear_a0, c.linear_b1}}};
    } else {
        j["schedule"] = {{"path", c.schedule_path}};
    }
    j["qmc"] = pimc_json(c.qmc);
    j["temperature_lines"] = json::array();
    for (const auto& line : c.temperature_lines) j["temperature_lines"].push_back({{"label", line.label}, {"ghz", line.ghz}});
    j["overheads"] = {{"readout_us_per_qubit", c.overheads.readout_us_per_qubit},
                      {"thermalization_us", c.overheads.thermalization_us},
                      {"programming_us", c.overheads.programming_us}};
    j["output_dir"] = c.output_dir.string();
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

Schedule experiment_schedule(const ExperimentConfig& c) {
    return c.schedule_path.empty() ? linear_schedule(c.linear_a0, c.linear_b1) : load_schedule(c.schedule_path);
}

// ---- rows ----------------------------------------------------------------------

std::string ResultRow::key() const {
    return std::to_string(size) + "/" + std::to_string(instance_index) + "/" + to_string(method);
}

bool same_result(const ResultRow& x, const ResultRow& y) {
    auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
    return x.size == y.size && x.instance_index == y.instance_index && x.instance_id == y.instance_id &&
           x.method == y.method && x.seed == y.seed && same(x.g_min, y.g_min) && same(x.s_star, y.s_star) &&
           same(x.matel, y.matel) && same(x.t_a, y.t_a) && x.energy == y.energy && x.degeneracy == y.degeneracy &&
           x.flags == y.flags && x.error == y.error;
}

namespace {

constexpr const char* kColumns[] = {"size",  "instance_index", "instance_id", "method", "seed",
                                    "g_min", "s_star",         "matel",       "t_a",    "wall_time_s",
                                    "energy", "degeneracy",    "flags",       "error"};

std::string format_number(double x) {
    if (std::isnan(x)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_number(const std::string& s) {
    if (s.empty()) return ResultRow::kNaN;
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
    return x;
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// One CSV record; quoted fields may contain separators and doubled quotes.
std::vector<std::string> split_record(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else {
            fields.back() += ch;
        }
    }
    if (quoted) throw std::invalid_argument("unterminated quote");
    return fields;
}

json row_json(const ResultRow& r) {
    auto num = [](double x) { return std::isnan(x) ? json(nullptr) : json(x); };
    return {{"size", r.size},      {"instance_index", r.instance_index},
            {"instance_id", r.instance_id}, {"method", to_string(r.method)},
            {"seed", r.seed},      {"g_min", num(r.g_min)},
            {"s_star", num(r.s_star)}, {"matel", num(r.matel)},
            {"t_a", num(r.t_a)},   {"wall_time_s", num(r.wall_time_s)},
            {"energy", r.energy},  {"degeneracy", r.degeneracy},
            {"flags", r.flags},    {"error", r.error}};
}

ResultRow row_from_json(const json& j) {
    auto num = [&](const char* key) { return j.at(key).is_null() ? ResultRow::kNaN : j.at(key).get<double>(); };
    ResultRow r;
    r.size = j.at("size").get<int>();
    r.instance_index = j.at("instance_index").get<int>();
    r.instance_id = j.at("instance_id").get<std::string>();
    r.method = parse_method(j.at("method").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.g_min = num("g_min");
    r.s_star = num("s_star");
    r.matel = num("matel");
    r.t_a = num("t_a");
    r.wall_time_s = num("wall_time_s");
    r.energy = j.at("energy").get<std::string>();
    r.degeneracy = j.at("degeneracy").get<std::uint64_t>();
    r.flags = j.at("flags").get<std::vector<std::string>>();
    r.error = j.at("error").get<bool>();
    return r;
}

}  // namespace

std::string to_csv_header() {
    std::vector<std::string> cols(std::begin(kColumns), std::end(kColumns));
    return join(cols, ',');
}

std::string to_csv(const ResultRow& r) {
    return join({std::to_string(r.size), std::to_string(r.instance_index), quote(r.instance_id), to_string(r.method),
                 std::to_string(r.seed), format_number(r.g_min), format_number(r.s_star), format_number(r.matel),
                 format_number(r.t_a), format_number(r.wall_time_s), quote(r.energy), std::to_string(r.degeneracy),
                 quote(join(r.flags, ';')), r.error ? "1" : "0"},
                ',');
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != to_csv_header()) throw std::invalid_argument("results csv: bad header");
    std::vector<ResultRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto f = split_record(line);
            if (f.size() != std::size(kColumns)) throw std::invalid_argument("wrong field count");
            ResultRow r;
            r.size = std::stoi(f[0]);
            r.instance_index = std::stoi(f[1]);
            r.instance_id = f[2];
            r.method = parse_method(f[3]);
            r.seed = std::stoull(f[4]);
            r.g_min = parse_number(f[5]);
            r.s_star = parse_number(f[6]);
            r.matel = parse_number(f[7]);
            r.t_a = parse_number(f[8]);
            r.wall_time_s = parse_number(f[9]);
            r.energy = f[10];
            r.degeneracy = std::stoull(f[11]);
            if (!f[12].empty()) {
                std::istringstream flags(f[12]);
                for (std::string flag; std::getline(flags, flag, ';');) r.flags.push_back(flag);
            }
            r.error = f[13] == "1";
            rows.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::invalid_argument("results csv line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

// ---- aggregation ---------------------------------------------------------------

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("percentile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q outside [0, 1]");
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const double lo = std::floor(h);
    const auto i = static_cast<std::size_t>(lo);
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i]);
}

namespace {

double quantity_of(const ResultRow& r, const std::string& quantity) {
    if (quantity == "g_min") return r.g_min;
    if (quantity == "s_star") return r.s_star;
    if (quantity == "matel") return r.matel;
    if (quantity == "t_a") return r.t_a;
    if (quantity == "wall_time_s") return r.wall_time_s;
    throw std::invalid_argument("aggregate: unknown quantity '" + quantity + "'");
}

}  // namespace

std::vector<Aggregate> aggregate(std::span<const ResultRow> rows, const std::string& quantity) {
    std::map<std::pair<int, Method>, std::pair<std::vector<double>, int>> groups;
    for (const ResultRow& r : rows) {
        const double x = quantity_of(r, quantity);
        auto& [values, excluded] = groups[{r.size, r.method}];
        if (r.flagged() || !std::isfinite(x)) {
            ++excluded;
        } else {
            values.push_back(x);
        }
    }
    if (groups.empty()) throw std::invalid_argument("aggregate: no rows");
    std::vector<Aggregate> out;
    for (auto& [key, group] : groups) {
        auto& [values, excluded] = group;
        Aggregate a;
        a.size = key.first;
        a.method = key.second;
        a.quantity = quantity;
        a.count = static_cast<int>(values.size());
        a.excluded = excluded;
        if (values.empty()) {
            a.median = a.p40 = a.p60 = ResultRow::kNaN;
        } else {
            std::sort(values.begin(), values.end());
            a.median = percentile(values, 0.5);
            a.p40 = percentile(values, 0.4);
            a.p60 = percentile(values, 0.6);
        }
        out.push_back(a);
    }
    return out;
}

// ---- experiment runner ---------------------------------------------------------

namespace {

struct Task {
    Tiling tiling;
    int index = 0;
    Method method = Method::exact;
    const ProblemInstance* instance = nullptr;
};

std::uint64_t size_seed(const ExperimentConfig& c, const Tiling& t) {
    return derive_seed(c.seed, static_cast<std::uint64_t>(t.num_vars));
}

fs::path instance_path(const fs::path& dir, const Tiling& t, int index) {
    char name[64];
    std::snprintf(name, sizeof name, "%dx%d/%03d.txt", t.rows, t.cols, index);
    return dir / "instances" / name;
}

std::vector<ProblemInstance> instances_for(const ExperimentConfig& c, const Tiling& t) {
    std::vector<ProblemInstance> out;
    bool all_present = true;
    for (int i = 0; i < c.instances_per_size && all_present; ++i) {
        all_present = fs::exists(instance_path(c.output_dir, t, i));
    }
    if (all_present) {
        for (int i = 0; i < c.instances_per_size; ++i) out.push_back(load_instance(instance_path(c.output_dir, t, i)));
        return out;
    }
    FilteredBatch batch = generate_filtered_batch(build_chimera(t.rows, t.cols), c.instances_per_size, size_seed(c, t));
    for (int i = 0; i < c.instances_per_size; ++i) {
        const fs::path p = instance_path(c.output_dir, t, i);
        fs::create_directories(p.parent_path());
        save_instance(batch.instances[i], p);
    }
    return std::move(batch.instances);
}

double median_of(std::vector<double> v) {
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
    if (v.empty()) return ResultRow::kNaN;
    std::sort(v.begin(), v.end());
    return percentile(v, 0.5);
}

json qmc_record(const QmcScanResult& q, std::uint64_t seed) {
    json points = json::array();
    for (const GapEstimate& p : q.points) {
        json amps = json::object();
        for (const auto& [name, value] : p.amplitudes) amps[name] = {value.first, value.second};
        points.push_back({{"s", p.s},
                          {"gap", p.gap},
                          {"gap_error", p.gap_error},
                          {"chi2_dof", p.chi2_dof},
                          {"tau_lo", p.tau_lo},
                          {"tau_hi", p.tau_hi},
                          {"matel", p.matel},
                          {"matel_error", p.matel_error},
                          {"matel_identity", p.matel_identity},
                          {"amplitudes", amps},
                          {"flags", p.flags}});
    }
    return {{"seed", seed},
            {"grid_history", q.grid_history},
            {"swap_acceptance", q.swap_acceptance},
            {"flip_acceptance", q.flip_acceptance},
            {"round_trips", q.round_trips},
            {"simulated_variables", q.simulated_variables},
            {"temperature_ghz", q.temperature_ghz},
            {"warnings", q.warnings},
            {"scan_flags", q.scan.flags},
            {"points", points}};
}

ResultRow run_task(const ExperimentConfig& c, const Schedule& schedule, const Task& task) {
    const ProblemInstance& inst = *task.instance;
    ResultRow row;
    row.size = task.tiling.num_vars;
    row.instance_index = task.index;
    row.instance_id = inst.id;
    row.method = task.method;
    row.seed = inst.seed;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    switch (task.method) {
        case Method::exact: {
            const SpectrumScan scan = scan_and_refine(inst, schedule, uniform_grid(task.tiling.default_s_count));
            row.g_min = scan.g_min;
            row.s_star = scan.s_star;
            row.matel = scan.matel_at_star;
            row.t_a = scan.t_adiabatic;
            row.flags = scan.flags;
            row.wall_time_s = elapsed();
            break;
        }
        case Method::qmc: {
            std::vector<double> g, s, m, t;
            json repeats = json::array();
            for (int r = 0; r < c.repeats_per_instance; ++r) {
                PimcConfig pc = c.qmc;
                pc.seed = derive_seed(derive_seed(c.qmc.seed, inst.seed), static_cast<std::uint64_t>(r));
                pc.workers = 1;
                if (r == 0) row.seed = pc.seed;
                const QmcScanResult q = qmc_scan(inst, schedule, pc, {}, task.tiling.default_s_count);
                g.push_back(q.scan.g_min);
                s.push_back(q.scan.s_star);
                m.push_back(q.scan.matel_at_star);
                t.push_back(q.scan.t_adiabatic);
                for (const auto& f : q.scan.flags) {
                    row.flags.push_back(c.repeats_per_instance == 1 ? f : "repeat " + std::to_string(r) + ": " + f);
                }
                repeats.push_back(qmc_record(q, pc.seed));
            }
            row.g_min = median_of(g);
            row.s_star = median_of(s);
            row.matel = median_of(m);
            row.t_a = median_of(t);
            row.wall_time_s = elapsed();
            const fs::path side = c.output_dir / "qmc" / (std::to_string(row.size) + "_" + std::to_string(task.index) + ".json");
            fs::create_directories(side.parent_path());
            std::ofstream(side) << json{{"instance_id", inst.id}, {"repeats", repeats}}.dump(1) << "\n";
            break;
        }
        case Method::treedp:
        case Method::brute: {
            const SolveMethod sm = task.method == Method::brute ? SolveMethod::brute : SolveMethod::treedp;
            const SolveResult res = timed_solve(inst, sm, c.solver_repeats);
            row.energy = res.energy_string();
            row.degeneracy = res.degeneracy;
            row.wall_time_s = res.wall_time_s;
            if (res.degeneracy != 1) row.flags.push_back("degeneracy " + std::to_string(res.degeneracy));
            break;
        }
    }
    return row;
}

std::map<std::string, ResultRow> read_journal(const fs::path& path) {
    std::map<std::string, ResultRow> done;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        // A kill can truncate the last line; that task simply reruns.
        try {
            ResultRow r = row_from_json(json::parse(line));
            done.emplace(r.key(), std::move(r));
        } catch (const std::exception&) {
        }
    }
    return done;
}

void write_manifest(const ExperimentConfig& c, const ExperimentResult& res) {
    json sizes = json::array();
    for (const Tiling& t : c.tilings) {
        json entry = {{"rows", t.rows},
                      {"cols", t.cols},
                      {"num_vars", t.num_vars},
                      {"s_count", t.default_s_count},
                      {"instance_seed", size_seed(c, t)},
                      {"exact_grid", uniform_grid(t.default_s_count)}};
        if (c.uses(Method::qmc)) {
            entry["qmc_grid"] = uniform_grid(t.default_s_count, c.qmc.s_min, c.qmc.s_max);
            entry["simulated_variables"] = simulated_variables(t.num_vars, c.qmc.n_slices, t.default_s_count);
        }
        sizes.push_back(entry);
    }
    json cycle = json::array();
    for (const Aggregate& a : aggregate(res.rows, "t_a")) {
        if (a.count == 0) continue;
        const CycleTime ct = total_cycle_time(a.median, a.size, c.overheads);
        cycle.push_back({{"size", a.size},
                         {"method", to_string(a.method)},
                         {"median_t_a_us", ct.anneal_us},
                         {"readout_us", ct.readout_us},
                         {"thermalization_us", ct.thermalization_us},
                         {"programming_us", ct.programming_us},
                         {"total_us", ct.total_us},
                         {"anneal_fraction", ct.anneal_fraction()}});
    }
    // Soft check: each median gap at most the previous size's p60.
    json trend = json::object();
    std::map<Method, std::vector<Aggregate>> by_method;
    for (const Aggregate& a : aggregate(res.rows, "g_min")) {
        if (a.count > 0) by_method[a.method].push_back(a);
    }
    for (const auto& [m, list] : by_method) {
        bool ok = true;
        for (std::size_t i = 1; i < list.size(); ++i) ok = ok && list[i].median <= list[i - 1].p60;
        trend[to_string(m)] = ok;
    }
    json manifest = {
        {"version", AQO_VERSION},
        {"seed", c.seed},
        {"qmc_seed", c.qmc.seed},
        {"sizes", sizes},
        {"tasks", res.tasks_total},
        {"tasks_with_error", std::count_if(res.rows.begin(), res.rows.end(), [](const ResultRow& r) { return r.error; })},
        {"temperature_ghz", c.qmc.temperature_ghz()},
        {"trotter_slices", c.qmc.n_slices},
        {"cycle_time", cycle},
        {"gap_trend_non_increasing", trend},
        {"percentile_convention",
         "linear interpolation between order statistics, h = (n - 1) q; error bars are the 40th and 60th "
         "percentiles of the per-instance values, not a confidence interval of the median"},
    };
    std::ofstream(c.output_dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, RunOptions options) {
    config.validate();
    const Schedule schedule = experiment_schedule(config);
    fs::create_directories(config.output_dir);
    {
        std::ofstream(config.output_dir / "config.json") << serialize_experiment_config(config);
    }

    std::vector<std::vector<ProblemInstance>> instances;
    for (const Tiling& t : config.tilings) instances.push_back(instances_for(config, t));
    std::vector<Task> tasks;
    for (std::size_t k = 0; k < config.tilings.size(); ++k) {
        for (int i = 0; i < config.instances_per_size; ++i) {
            for (Method m : config.methods) tasks.push_back({config.tilings[k], i, m, &instances[k][i]});
        }
    }

    const fs::path journal_path = config.output_dir / "journal.jsonl";
    std::map<std::string, ResultRow> done = read_journal(journal_path);
    ExperimentResult result;
    result.tasks_total = tasks.size();
    std::vector<const Task*> pending;
    for (const Task& t : tasks) {
        ResultRow probe;
        probe.size = t.tiling.num_vars;
        probe.instance_index = t.index;
        probe.method = t.method;
        if (done.contains(probe.key())) {
            ++result.tasks_resumed;
        } else {
            pending.push_back(&t);
        }
    }
    if (options.task_limit && pending.size() > *options.task_limit) pending.resize(*options.task_limit);

    bool torn_tail = false;
    if (std::ifstream tail(journal_path, std::ios::binary | std::ios::ate); tail && tail.tellg() > 0) {
        tail.seekg(-1, std::ios::end);
        torn_tail = tail.get() != '\n';
    }
    std::mutex appender;
    std::ofstream journal(journal_path, std::ios::app);
    if (!journal) throw std::runtime_error("cannot open " + journal_path.string());
    // Close off a line cut short by a kill so the next record starts clean.
    if (torn_tail) journal << "\n";
    const int workers = options.workers > 0 ? options.workers : default_workers();
    parallel_for(pending.size(), workers, [&](std::size_t i) {
        const Task& task = *pending[i];
        ResultRow row;
        try {
            row = run_task(config, schedule, task);
        } catch (const std::exception& e) {
            row = ResultRow{};
            row.size = task.tiling.num_vars;
            row.instance_index = task.index;
            row.instance_id = task.instance->id;
            row.method = task.method;
            row.seed = task.instance->seed;
            row.error = true;
            row.flags.push_back(std::string("error: ") + e.what());
        }
        std::lock_guard lock(appender);
        journal << row_json(row).dump() << "\n" << std::flush;
        done.emplace(row.key(), std::move(row));
    });
    result.tasks_run = pending.size();

    for (const Task& t : tasks) {
        ResultRow probe;
        probe.size = t.tiling.num_vars;
        probe.instance_index = t.index;
        probe.method = t.method;
        if (auto it = done.find(probe.key()); it != done.end()) result.rows.push_back(it->second);
    }
    std::stable_sort(result.rows.begin(), result.rows.end(), [](const ResultRow& x, const ResultRow& y) {
        return std::tie(x.size, x.instance_index, x.method) < std::tie(y.size, y.instance_index, y.method);
    });
    result.any_error = std::any_of(result.rows.begin(), result.rows.end(), [](const ResultRow& r) { return r.error; });
    result.complete = result.rows.size() == tasks.size();
    if (result.complete) {
        std::ofstream raw(config.output_dir / "raw.csv");
        raw << to_csv_header() << "\n";
        for (const ResultRow& r : result.rows) raw << to_csv(r) << "\n";
        raw.close();
        write_manifest(config, result);
        render_report(result.rows, config, config.output_dir);
    }
    return result;
}

}  // namespace aqo
