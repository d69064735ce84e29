"""Write a simulated analysis CSV plus a matching analysis config.

    python scripts/make_example_data.py --out runs/example
    owsga analyze --config runs/example/analysis.ini --out-dir runs/example/out
"""

import argparse
from pathlib import Path

import pandas as pd

from owsga.simulation import ScenarioConfig, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/example"))
    ap.add_argument("--seed", type=int, default=20240101)
    ap.add_argument("--n", type=int, default=3000)
    args = ap.parse_args()

    ds, _ = generate_dataset(ScenarioConfig(N=args.n), [args.seed, 0])
    frame = pd.DataFrame(ds.X, columns=[f"x{p + 1}" for p in range(ds.P)])
    for v in ds.subgroup_vars:
        frame[v.name] = v.labels()
    frame["z"] = ds.z.astype(int)
    frame["y"] = ds.y
    args.out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out / "data.csv", index=False)
    (args.out / "analysis.ini").write_text(
        "[analysis]\n"
        "data = data.csv\n"
        "outcome = y\n"
        "treatment = z\n"
        f"covariates = {', '.join(frame.columns[:ds.P])}\n"
        f"subgroups = {', '.join(v.name for v in ds.subgroup_vars)}\n"
        "tilting = ow\n"
        "ps_model = post-lasso\n"
        f"seed = {args.seed}\n"
    )
    print(f"wrote {args.out / 'data.csv'} and {args.out / 'analysis.ini'}")


if __name__ == "__main__":
    main()
