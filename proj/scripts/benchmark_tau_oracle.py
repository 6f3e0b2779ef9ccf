#!/usr/bin/env python3
"""Brute-force Kendall tau-b oracle for the bundled benchmark fixture.

Reads the expected judge totals and the rater annotation table, averages each
pair's rater totals, and computes tau-b between judge totals and rater means
by enumerating every pair of pairs. Prints one line: tau=<value>.

Usage:
    benchmark_tau_oracle.py <expected_judge_totals.csv> <annotations.csv>
"""

import csv
import math
import sys
from collections import defaultdict


def read_judge_totals(path):
    totals = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            totals[row["pair_id"]] = int(row["judge_total"])
    return totals


def read_rater_means(path):
    sums = defaultdict(float)
    counts = defaultdict(int)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        count_columns = [c for c in reader.fieldnames if c not in ("pair_id", "rater_id")]
        for row in reader:
            total = sum(int(row[c]) for c in count_columns)
            sums[row["pair_id"]] += total
            counts[row["pair_id"]] += 1
    return {pair: sums[pair] / counts[pair] for pair in sums}


def kendall_tau_b(x, y):
    n = len(x)
    concordant = discordant = ties_x = ties_y = ties_xy = 0
    for i in range(n):
        for j in range(i + 1, n):
            tx = x[i] == x[j]
            ty = y[i] == y[j]
            if tx and ty:
                ties_xy += 1
            elif tx:
                ties_x += 1
            elif ty:
                ties_y += 1
            elif (x[i] < x[j]) == (y[i] < y[j]):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    n1 = ties_x + ties_xy
    n2 = ties_y + ties_xy
    return (concordant - discordant) / math.sqrt(float((n0 - n1) * (n0 - n2)))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    judge = read_judge_totals(sys.argv[1])
    raters = read_rater_means(sys.argv[2])
    if set(judge) != set(raters):
        sys.exit("pair_id sets differ between the two inputs")
    pair_ids = sorted(judge)
    x = [float(judge[p]) for p in pair_ids]
    y = [raters[p] for p in pair_ids]
    print(f"tau={kendall_tau_b(x, y):.17g}")


if __name__ == "__main__":
    main()
