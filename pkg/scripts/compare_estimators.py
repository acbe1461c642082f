"""Measure how much conditioning shrinks the Monte Carlo standard error.

For a handful of slope points, runs the indicator-averaging estimator and the
conditional-probability-averaging estimator at the same budget and seed and
prints both estimates with their standard errors and the SE ratio.
"""

import argparse

import numpy as np

from ancova_cp import (
    build_geometry,
    critical_values,
    estimate_conditioned,
    estimate_naive,
    reference_design,
)

POINTS = [
    (0.0, 0.0, 0.0),
    (0.0, 0.05, 0.0),
    (0.0, 0.1, 0.0),
    (0.1, -0.05, 0.15),
    (0.25, 0.25, 0.25),
    (1.0, 1.0, 1.0),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=10_000)
    parser.add_argument("--seeds", type=int, default=3)
    args = parser.parse_args()

    layout, contrast = reference_design()
    geom = build_geometry(layout, contrast)
    cfg = critical_values(layout, 0.05, 0.10, 0.10)

    print(f"{'point':>22}  {'naive':>16}  {'conditioned':>16}  {'se ratio':>8}")
    for point in POINTS:
        ratios = []
        for seed in range(args.seeds):
            naive = estimate_naive(point, geom, cfg, runs=args.runs, seed=seed)
            cond = estimate_conditioned(point, geom, cfg, runs=args.runs, seed=seed)
            ratios.append(naive.se / cond.se if cond.se > 0 else float("inf"))
            if seed == 0:
                print(
                    f"{str(point):>22}  {naive.estimate:.4f} +- {naive.se:.4f}  "
                    f"{cond.estimate:.4f} +- {cond.se:.4f}  {ratios[-1]:8.2f}"
                )
        if args.seeds > 1:
            print(f"{'':>22}  mean se ratio over {args.seeds} seeds: {np.mean(ratios):.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
