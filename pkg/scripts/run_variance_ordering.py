#!/usr/bin/env python3
"""Coupling-variant variance study.

For each seed, draws functional nuisance posteriors under the three coupling
variants from the same fitted backends and compares the plug-in ATE posterior
variances.  Emits one CSV row per seed with the variances, interval bounds,
and the ordering verdicts.
"""

import argparse
import csv
import sys

import numpy as np

import causalmp as cm
from causalmp.data import child_rng, child_seed
from causalmp.diagnostics import format_cell


def run_seed(seed, args):
    dataset, _ = cm.generate_synthetic(cm.DgpSpec(n=args.n, d_x=args.d_x, seed=seed))
    train, test = cm.train_test_split(dataset, 0.5, seed=child_seed(seed, 1))
    cfg = cm.ConjugateConfig()
    outcome = cm.fit_outcome(cfg, train)
    propensity = cm.fit_propensity(cfg, train)
    posteriors = {}
    for variant in ("x_independent", "x_parallel", "smooth"):
        config = cm.CopulaConfig(
            rho=args.rho,
            variant=variant,
            steps=args.steps,
            draws=args.draws,
            grid_size=args.grid,
            alpha_offset=args.alpha_offset,
            localization_rho=args.localization_rho,
        )
        draws = cm.sample_nuisance_draws(
            outcome, propensity, train, test.covariates, config, seed=child_seed(seed, 2)
        )
        posteriors[variant] = cm.plug_in_posterior(
            draws, test, child_rng(seed, 3), variant=variant, rho=args.rho
        )
    return cm.variance_decomposition(posteriors, test.n, seed=child_seed(seed, 4))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--d-x", type=int, default=15)
    parser.add_argument("--rho", type=float, default=0.5)
    parser.add_argument("--localization-rho", type=float, default=0.1)
    parser.add_argument("--steps", type=int, default=50)
    parser.add_argument("--alpha-offset", type=int, default=25)
    parser.add_argument("--draws", type=int, default=400)
    parser.add_argument("--grid", type=int, default=61)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/variance_ordering.csv")
    args = parser.parse_args()

    rows = []
    for k in range(args.seeds):
        seed = child_seed(args.seed, k)
        report = run_seed(seed, args)
        rows.append(
            {
                "seed": seed,
                "var_a": report.variances["x_independent"],
                "var_c": report.variances["smooth"],
                "var_b": report.variances["x_parallel"],
                "ci_separated": report.ci_separated_a_b,
                "point_ordered": report.point_ordered,
            }
        )
        print(
            f"seed {k}: a={rows[-1]['var_a']:.4f} c={rows[-1]['var_c']:.4f} "
            f"b={rows[-1]['var_b']:.4f} ci={report.ci_separated_a_b} "
            f"ordered={report.point_ordered}"
        )
    import os

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rows[0].keys())
        for row in rows:
            writer.writerow([format_cell(v) for v in row.values()])
    good = sum(r["ci_separated"] and r["point_ordered"] for r in rows)
    print(f"ordering held with separated intervals in {good}/{len(rows)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
