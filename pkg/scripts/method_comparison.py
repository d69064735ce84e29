"""Bias / RMSE / coverage table for several propensity models on one scenario.

    python scripts/method_comparison.py --replicates 100 --seed 2024 --out runs/ranking
"""

import argparse
import logging
import time
from pathlib import Path

import pandas as pd

from owsga.simulation import ScenarioConfig, run_scenario, true_estimands

METHODS = ["true-model+ow", "post-lasso+ow", "lasso+ow", "logistic-main+ow", "logistic-main+ipw",
           "post-lasso+ipw"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--kappa", type=float, default=0.75)
    ap.add_argument("--beta-sz", type=float, nargs=2, default=(0.5, 0.5))
    ap.add_argument("--methods", nargs="+", default=METHODS)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ScenarioConfig(gamma=args.gamma, kappa=args.kappa, beta_sz=tuple(args.beta_sz),
                         n_replicates=args.replicates, seed=args.seed)
    start = time.perf_counter()
    truth = true_estimands(cfg, mc_draws=10**6, seed=cfg.seed)
    res = run_scenario(cfg, args.methods, truth=truth, n_jobs=args.jobs)
    cols = ["method", "cell", "n_ok", "truth", "mean_estimate", "rel_bias", "rmse", "coverage", "mean_max_asmd"]
    with pd.option_context("display.width", 200, "display.max_rows", 200):
        print(res.summary[cols].to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"{cfg.name}: {len(res.failures)} failures, {time.perf_counter() - start:.0f}s")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        res.replicates.to_csv(args.out / "replicates.csv", index=False)
        res.summary.to_csv(args.out / "summary.csv", index=False)


if __name__ == "__main__":
    main()
