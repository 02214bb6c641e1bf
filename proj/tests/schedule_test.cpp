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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "aqo/schedule.hpp"

namespace aqo {
namespace {

namespace fs = std::filesystem;

// A 20-knot curve shaped like a device anneal: A decays, B grows.
Schedule digitized() {
    std::vector<double> s, a, b;
    for (int k = 0; k < 20; ++k) {
        const double x = k / 19.0;
        s.push_back(x);
        a.push_back(6.0 * std::pow(1.0 - x, 2.2) + (k == 19 ? 0.0 : 0.01));
        b.push_back(0.05 + 7.0 * x * x);
    }
    return Schedule(s, a, b, "device");
}

std::string expect_invalid(const std::string& csv) {
    try {
        parse_schedule(csv, "t");
    } catch (const std::invalid_argument& e) {
        return e.what();
    }
    return "";
}

TEST(Schedule, LinearValues) {
    const Schedule lin = linear_schedule(1, 1);
    EXPECT_DOUBLE_EQ(lin.eval(0.5).a, 0.5);
    EXPECT_DOUBLE_EQ(lin.eval(0.5).b, 0.5);
    EXPECT_DOUBLE_EQ(lin.eval(0).a, 1);
    EXPECT_DOUBLE_EQ(lin.eval(0).b, 0);
    EXPECT_DOUBLE_EQ(lin.eval(1).a, 0);
    EXPECT_DOUBLE_EQ(lin.eval(1).b, 1);
    EXPECT_DOUBLE_EQ(lin.eval(0.25).a, 0.75);
    EXPECT_DOUBLE_EQ(lin.eval(0.25).b, 0.25);
    EXPECT_DOUBLE_EQ(lin.deriv(0.25).a, -1);
    EXPECT_DOUBLE_EQ(lin.deriv(0.25).b, 1);
    EXPECT_EQ(lin.knots(), (std::vector<double>{0, 1}));
}

TEST(Schedule, LinearScaling) {
    const Schedule one = linear_schedule(1, 1), ten = linear_schedule(10, 10);
    for (double s : {0.0, 0.1, 0.37, 0.8, 1.0}) {
        EXPECT_NEAR(ten.eval(s).a, 10 * one.eval(s).a, 1e-14);
        EXPECT_NEAR(ten.eval(s).b, 10 * one.eval(s).b, 1e-14);
    }
    EXPECT_THROW(linear_schedule(0, 1), std::invalid_argument);
    EXPECT_THROW(linear_schedule(1, -2), std::invalid_argument);
}

TEST(Schedule, RejectsOutsideUnitInterval) {
    EXPECT_THROW(linear_schedule(1, 1).eval(1.01), std::domain_error);
    EXPECT_THROW(linear_schedule(1, 1).deriv(-0.1), std::domain_error);
}

TEST(Schedule, KnotValuesExact) {
    const Schedule d = digitized();
    for (std::size_t k = 0; k < d.knots().size(); ++k) {
        EXPECT_EQ(d.eval(d.knots()[k]).a, d.a_vals()[k]);
        EXPECT_EQ(d.eval(d.knots()[k]).b, d.b_vals()[k]);
    }
}

TEST(Schedule, DerivativeMatchesFiniteDifference) {
    const Schedule d = digitized();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(1e-5, 1 - 1e-5);
    const double h = 1e-6;
    for (int t = 0; t < 100; ++t) {
        const double s = u(rng);
        const double fa = (d.eval(s + h).a - d.eval(s - h).a) / (2 * h);
        const double fb = (d.eval(s + h).b - d.eval(s - h).b) / (2 * h);
        EXPECT_NEAR(d.deriv(s).a, fa, 1e-4 * std::max(1.0, std::abs(fa))) << s;
        EXPECT_NEAR(d.deriv(s).b, fb, 1e-4 * std::max(1.0, std::abs(fb))) << s;
    }
}

TEST(Schedule, DerivativeIntegratesBack) {
    const Schedule d = digitized();
    const int n = 200000;
    double ia = d.eval(0).a, ib = d.eval(0).b;
    for (int k = 0; k < n; ++k) {
        const double s0 = static_cast<double>(k) / n, s1 = static_cast<double>(k + 1) / n;
        ia += 0.5 * (d.deriv(s0).a + d.deriv(s1).a) * (s1 - s0);
        ib += 0.5 * (d.deriv(s0).b + d.deriv(s1).b) * (s1 - s0);
        if ((k + 1) % 1000 == 0) {
            ASSERT_NEAR(ia, d.eval(s1).a, 1e-6);
            ASSERT_NEAR(ib, d.eval(s1).b, 1e-6);
        }
    }
}

TEST(Schedule, MonotoneWithoutOvershoot) {
    const Schedule d = digitized();
    Envelope prev = d.eval(0);
    for (int k = 1; k <= 10000; ++k) {
        const Envelope cur = d.eval(k / 10000.0);
        EXPECT_LE(cur.a, prev.a + 1e-15);
        EXPECT_GE(cur.b, prev.b - 1e-15);
        EXPECT_GE(cur.a, 0.0);
        prev = cur;
    }
}

TEST(Schedule, TwoRowFileIsLinear) {
    EXPECT_EQ(parse_schedule("s,A_GHz,B_GHz\n0,1,0\n1,0,1\n", "file"), linear_schedule(1, 1));
}

TEST(Schedule, ValidationNamesInvariant) {
    EXPECT_NE(expect_invalid("s,A_GHz,B_GHz\n0,1,0\n0.5,1.2,0.5\n1,0,1\n").find("A not non-increasing"),
              std::string::npos);
    EXPECT_NE(expect_invalid("s,A_GHz,B_GHz\n0,1,0\n0.5,0.5,0.6\n0.7,0.4,0.5\n1,0,1\n").find("B not non-decreasing"),
              std::string::npos);
    EXPECT_NE(expect_invalid("s,A_GHz,B_GHz\n0,1,0\n0.6,0.5,0.5\n0.4,0.4,0.6\n1,0,1\n").find("strictly increasing"),
              std::string::npos);
    EXPECT_NE(expect_invalid("s,A_GHz,B_GHz\n0,1,0\n0.9,0,1\n").find("endpoints"), std::string::npos);
    EXPECT_NE(expect_invalid("s,A_GHz,B_GHz\n0,1,0.5\n1,0,1\n").find("A(0)"), std::string::npos);
    EXPECT_NE(expect_invalid("0,1,0\n1,0,1\n").find("header"), std::string::npos);
}

TEST(Schedule, SaveLoadByteStable) {
    const fs::path dir = fs::temp_directory_path() / "aqo_schedule_test";
    fs::create_directories(dir);
    const Schedule d = digitized();
    save_schedule(d, dir / "a.csv");
    const Schedule back = load_schedule(dir / "a.csv");
    EXPECT_EQ(back, d);
    save_schedule(back, dir / "b.csv");
    auto slurp = [](const fs::path& f) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        return s.str();
    };
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(Schedule, TemperatureConversion) {
    EXPECT_NEAR(millikelvin_to_ghz(21), 0.4376, 5e-5);
    EXPECT_NEAR(millikelvin_to_ghz(0.75), 0.015627, 1e-6);
}

}  // namespace
}  // namespace aqo
