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

#include <filesystem>
#include <string>
#include <vector>

namespace aqo {

// All energies are ordinary frequencies E/h in GHz.
inline constexpr double kGHzPerKelvin = 20.8366;

inline constexpr double millikelvin_to_ghz(double mk) { return kGHzPerKelvin * mk * 1e-3; }

struct Envelope {
    double a;
    double b;
};

// Annealing envelopes A(s), B(s) of H(s) = A(s) H_I + B(s) H_P, tabulated
// at knots and interpolated with a monotone (Fritsch-Carlson) cubic.
class Schedule {
  public:
    // Validates the knot table; throws std::invalid_argument naming the
    // broken invariant.
    Schedule(std::vector<double> knots, std::vector<double> a_vals, std::vector<double> b_vals,
             std::string name);

    Envelope eval(double s) const;
    Envelope deriv(double s) const;

    const std::vector<double>& knots() const { return knots_; }
    const std::vector<double>& a_vals() const { return a_; }
    const std::vector<double>& b_vals() const { return b_; }
    const std::string& name() const { return name_; }

    friend bool operator==(const Schedule& x, const Schedule& y) {
        return x.knots_ == y.knots_ && x.a_ == y.a_ && x.b_ == y.b_;
    }

  private:
    std::vector<double> knots_, a_, b_;
    std::vector<double> da_, db_;  // knot slopes
    std::string name_;
};

Schedule linear_schedule(double a0, double b1);

// CSV with header `s,A_GHz,B_GHz`.
Schedule parse_schedule(const std::string& text, std::string name);
Schedule load_schedule(const std::filesystem::path& path);
std::string serialize_schedule(const Schedule& schedule);
void save_schedule(const Schedule& schedule, const std::filesystem::path& path);

}  // namespace aqo
