# Copyright 2026 The aqobench Authors.
#
#    Licensed under the Apache License, Version 2.0 (the "License");
#    you may not use this file except in compliance with the License.
#    You may obtain a copy of the License at
#
#        http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS,
#    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#    See the License for the specific language governing permissions and
#    limitations under the License.

"""End-to-end check of the CLI: generate, solve, scan, bench with resume,
and report.  Aggregates and plot attributes are recomputed from raw.csv
with an independent percentile routine."""

import argparse
import csv
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path

QUANTITIES = ["g_min", "s_star", "matel", "t_a", "wall_time_s"]
SOLVERS = {"treedp", "brute"}


def run(cli, *args):
    out = subprocess.run([str(cli), *map(str, args)], check=True, capture_output=True, text=True)
    return json.loads(out.stdout) if out.stdout.strip() else None


def percentile(values, q):
    xs = sorted(values)
    rank = q * (len(xs) - 1)
    lo = int(rank)
    if lo + 1 >= len(xs):
        return xs[-1]
    return xs[lo] + (rank - lo) * (xs[lo + 1] - xs[lo])


def expected_aggregates(raw_path):
    groups = {}
    with open(raw_path, newline="") as f:
        for row in csv.DictReader(f):
            flagged = row["flags"] != "" or row["error"] == "1"
            for q in QUANTITIES:
                values, excluded = groups.setdefault((row["size"], row["method"], q), ([], [0]))
                if flagged or row[q] == "":
                    excluded[0] += 1
                else:
                    values.append(float(row[q]))
    return groups


class Checker:
    def __init__(self):
        self.failures = []

    def check(self, ok, what):
        print(("ok   " if ok else "FAIL ") + what)
        if not ok:
            self.failures.append(what)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True, type=Path)
    ap.add_argument("--workdir", required=True, type=Path)
    args = ap.parse_args()
    work = args.workdir
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    c = Checker()

    gen = run(args.cli, "generate", "--rows", 1, "--cols", 1, "--count", 3, "--seed", 4, "--out", work / "inst")
    files = sorted((work / "inst").glob("*.txt"))
    c.check(gen["written"] == 3 and len(files) == 3, "generate writes 3 instances")
    for path in files:
        brute = run(args.cli, "solve", "--instance", path, "--method", "brute", "--repeats", 1)
        tree = run(args.cli, "solve", "--instance", path, "--method", "treedp", "--repeats", 1)
        c.check(brute["energy"] == tree["energy"] and brute["degeneracy"] == tree["degeneracy"] == 1,
                f"solvers agree on {path.name}")
    scan = run(args.cli, "exact-scan", "--instance", files[0], "--s-grid", 30, "--refine", "--out", work / "scan")
    with open(work / "scan" / "exact_scan.csv", newline="") as f:
        gaps = [float(r["gap_GHz"]) for r in csv.DictReader(f)]
    c.check(len(gaps) == 30 and 0 < scan["g_min_GHz"] <= min(gaps), "exact-scan refines below the grid minimum")

    config = {
        "tilings": [[1, 1]],
        "instances_per_size": 4,
        "solver_repeats": 2,
        "methods": ["exact", "treedp", "brute"],
        "output_dir": str(work / "bench"),
        "seed": 3,
    }
    (work / "config.json").write_text(json.dumps(config))
    first = run(args.cli, "bench", "--config", work / "config.json", "--max-tasks", 5)
    c.check(first["ran"] == 5 and not first["complete"], "bench stops after --max-tasks")
    second = run(args.cli, "bench", "--config", work / "config.json")
    c.check(second["complete"] and second["resumed"] == 5 and second["ran"] == 7, "bench resumes from the journal")

    bench = work / "bench"
    groups = expected_aggregates(bench / "raw.csv")
    with open(bench / "aggregate.csv", newline="") as f:
        agg = {(r["size"], r["method"], r["quantity"]): r for r in csv.DictReader(f)}
    want_keys = {k for k in groups if k[1] not in SOLVERS or k[2] == "wall_time_s"}
    c.check(set(agg) == want_keys, "aggregate.csv has one row per reported group")
    mismatches = 0
    for key, row in agg.items():
        values, excluded = groups[key]
        ok = int(row["count"]) == len(values) and int(row["excluded"]) == excluded[0]
        if values:
            for col, q in (("median", 0.5), ("p40", 0.4), ("p60", 0.6)):
                ok = ok and float(row[col]) == percentile(values, q)
        mismatches += not ok
    c.check(mismatches == 0, f"{len(agg)} aggregates match the recomputation")

    circle = re.compile(r'data-size="(\d+)" data-median="([^"]*)" data-p40="([^"]*)" data-p60="([^"]*)"')
    series = re.compile(r'<g class="series" data-method="(\w+)" data-quantity="(\w+)">')
    points = bad = 0
    for svg in ("gap_vs_size.svg", "time_vs_size.svg"):
        method = quantity = None
        for line in (bench / svg).read_text().splitlines():
            if m := series.search(line):
                method, quantity = m.groups()
            elif m := circle.search(line):
                points += 1
                row = agg[(m.group(1), method, quantity)]
                bad += [row["median"], row["p40"], row["p60"]] != list(m.groups()[1:])
    c.check(points > 0 and bad == 0, f"{points} plotted points carry the aggregate values")
    gap_svg = (bench / "gap_vs_size.svg").read_text()
    c.check('data-ghz="0.44"' in gap_svg and 'data-ghz="0.015625"' in gap_svg, "temperature lines present")

    before = {name: (bench / name).read_bytes() for name in ("aggregate.csv", "gap_vs_size.svg", "time_vs_size.svg")}
    run(args.cli, "report", "--results", bench)
    c.check(all((bench / n).read_bytes() == b for n, b in before.items()), "report re-render is byte-identical")

    manifest = json.loads((bench / "manifest.json").read_text())
    c.check(manifest.get("temperature_ghz") == 0.015625, "manifest records the effective temperature")

    if c.failures:
        print(f"{len(c.failures)} check(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
