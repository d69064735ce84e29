"""Command-line front end.

Every command writes a ``manifest.json`` next to its outputs. The manifest
hash covers only deterministic content (config, seeds, version, input hash,
decision flags), and each CSV, JSON and SVG artifact carries it, so two runs
of the same manifest produce byte-identical tables.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import itertools
import json
import logging
import re
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import AnalysisConfig, load_config, read_sections, split_list
from .data import enumerate_cells, load_csv
from .diagnostics import POOLED_SD_CONVENTION, build_connect_s, render_svg
from .exceptions import ConfigError, DataError, NumericalError, OWSGAError
from .pipeline import _clean, run_analysis
from .simulation import GRID, ScenarioConfig, parse_method, run_scenario, scenario_dict, true_estimands
from .weighting import WeightSet, tilting, unit_weights

log = logging.getLogger("owsga")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if isinstance(self.cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(self.cause, DataError):
            return EXIT_DATA
        if isinstance(self.cause, (NumericalError, np.linalg.LinAlgError)):
            return EXIT_NUMERICAL
        # plain ValueErrors are classified by where they happened
        return {"config": EXIT_CONFIG, "ingest": EXIT_DATA}.get(self.stage, EXIT_NUMERICAL)


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (OWSGAError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise StageError(name, exc) from exc


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    version: str = __version__
    input_hash: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def content(self) -> dict:
        return {
            "command": self.command, "config": self.config, "seeds": self.seeds,
            "version": self.version, "input_hash": self.input_hash, "decisions": self.decisions,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(_clean(self.content()), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def tag(self) -> str:
        return f"manifest_hash={self.hash}"

    def to_dict(self) -> dict:
        return {**_clean(self.content()), "manifest_hash": self.hash, "started": self.started,
                "finished": self.finished, "outputs": self.outputs}

    def write(self, out_dir: Path) -> Path:
        self.finished = _now()
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def analysis_decisions(cfg: AnalysisConfig) -> dict:
    return {
        "lambda_rule": cfg.lambda_rule,
        "standardize_penalized": cfg.standardize,
        "penalty": "interactions only; intercept, covariate and subgroup mains unpenalized",
        "clip_propensity": cfg.clip_propensity,
        "pooled_sd": POOLED_SD_CONVENTION,
        "variance": cfg.variance,
        "bootstrap_ps": "held fixed" if cfg.variance == "bootstrap" else None,
        "thresholds": list(cfg.thresholds),
    }


def _write(path: Path, text: str, manifest: RunManifest):
    path.write_text(text, encoding="utf-8")
    manifest.outputs.append(path.name)


def _frame_csv(frame: pd.DataFrame, manifest: RunManifest) -> str:
    return f"# {manifest.tag}\n" + frame.to_csv(index=False, lineterminator="\n")


def _load_analysis(args) -> AnalysisConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.clip_propensity is not None:
        changes["clip_propensity"] = args.clip_propensity
    if getattr(args, "data", None):
        changes["data"] = str(Path(args.data).resolve())
    cfg = cfg.replace(**changes) if changes else cfg
    if not cfg.data:
        raise ConfigError("no data file: set 'data' in the config or pass --data")
    return cfg


def cmd_analyze(args) -> int:
    with stage("config"):
        cfg = _load_analysis(args)
    with stage("ingest"):
        ds = load_csv(cfg.data, cfg)
        input_hash = {"data": file_hash(cfg.data)}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("analyze", cfg.snapshot(), {"master": cfg.seed}, input_hash=input_hash,
                           decisions=analysis_decisions(cfg), started=_now())
    with stage("analysis"):
        report = run_analysis(ds, cfg)
    with stage("write"):
        tag = manifest.tag
        _write(out / "effects.csv", report.effects_csv(tag), manifest)
        payload = {"manifest_hash": manifest.hash, **report.to_dict()}
        _write(out / "effects.json", json.dumps(payload, indent=2, sort_keys=True) + "\n", manifest)
        _write(out / "weights.csv", report.weights_csv(tag), manifest)
        for name, grid in (("unadjusted", report.grid_before), ("weighted", report.grid_after)):
            _write(out / f"connect_s_{name}.csv", grid.to_csv(header_comment=tag), manifest)
            _write(out / f"connect_s_{name}.svg", render_svg(grid, header_comment=tag), manifest)
        manifest.write(out)
    est = report.weights.tilt.estimand
    for e in report.estimates:
        flag = " (degenerate)" if e.degenerate else ""
        print(f"{e.cell:>12s} {est}: {e.estimate: .4f}  SE {e.se:.4f}{flag}")
    return EXIT_OK


def cmd_connect_s(args) -> int:
    with stage("config"):
        cfg = _load_analysis(args)
        if not args.weights:
            raise ConfigError("connect-s needs --weights")
    with stage("ingest"):
        ds = load_csv(cfg.data, cfg)
        try:
            frame = pd.read_csv(args.weights, comment="#", float_precision="round_trip")
        except (OSError, pd.errors.ParserError) as exc:
            raise DataError(f"cannot read weights file {args.weights}: {exc}") from exc
        if "weight" not in frame.columns:
            raise DataError("weights file needs a 'weight' column")
        w = frame["weight"].to_numpy(dtype=float)
        if len(w) != ds.n:
            raise DataError(f"weights file has {len(w)} rows but the data has {ds.n}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DataError("weights must be finite and non-negative")
        input_hash = {"data": file_hash(cfg.data), "weights": file_hash(args.weights)}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("connect-s", cfg.snapshot(), {"master": cfg.seed}, input_hash=input_hash,
                           decisions={"pooled_sd": POOLED_SD_CONVENTION, "thresholds": list(cfg.thresholds)},
                           started=_now())
    with stage("diagnostics"):
        supplied = WeightSet(w, ds.z, np.full(ds.n, np.nan), tilting(cfg.tilting), source="supplied")
        cells = enumerate_cells(ds)
        grids = {
            "supplied": build_connect_s(ds, supplied, cells, cfg.thresholds, label="Supplied weights"),
            "unadjusted": build_connect_s(ds, unit_weights(ds), cells, cfg.thresholds, label="Unadjusted"),
        }
    with stage("write"):
        for name, grid in grids.items():
            _write(out / f"connect_s_{name}.csv", grid.to_csv(header_comment=manifest.tag), manifest)
            _write(out / f"connect_s_{name}.svg", render_svg(grid, header_comment=manifest.tag), manifest)
        manifest.write(out)
    return EXIT_OK


SCENARIO_KEYS = {
    "N": int, "P": int, "psi": float, "gamma": float, "kappa": float, "cv_folds": int,
    "p_binary": float, "p_subgroup": float, "beta_z": float, "alpha_r": float,
}
PAIR_KEYS = ("beta_sz", "alpha_s", "beta_s")


@dataclass
class SimulationPlan:
    scenarios: list[ScenarioConfig]
    methods: list[str]
    mc_draws: int
    seed: int
    axes: dict


def _pair(text: str) -> tuple[float, float]:
    parts = [float(v) for v in re.split(r"[\s/:]+", text.strip()) if v]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigError(f"expected a pair of numbers, got {text!r}")
    return tuple(parts)


def load_simulation_plan(path, seed=None, full_grid=False, n_replicates=None) -> SimulationPlan:
    """Parse a ``[simulation]`` config; comma-separated values expand factorially."""
    sections = read_sections(path, default_section="simulation")
    if "simulation" not in sections:
        raise ConfigError(f"{path}: no [simulation] section")
    raw = dict(sections["simulation"])
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("simulation config must set a seed")
        seed = raw["seed"]
    try:
        seed = int(seed)
        base = {"seed": seed}
        if "n_replicates" in raw:
            base["n_replicates"] = int(raw["n_replicates"])
        if n_replicates is not None:
            base["n_replicates"] = int(n_replicates)
        axes = {}
        for key, cast in SCENARIO_KEYS.items():
            if key in raw:
                values = [cast(v) for v in split_list(raw[key])]
                if len(values) == 1:
                    base[key] = values[0]
                else:
                    axes[key] = values
        for key in PAIR_KEYS:
            if key in raw:
                values = [_pair(v) for v in split_list(raw[key])]
                if len(values) == 1:
                    base[key] = values[0]
                else:
                    axes[key] = values
        mc_draws = int(float(raw.get("mc_draws", 10**6)))
        methods = list(split_list(raw.get("methods", "post-lasso+ow, logistic-main+ipw")))
        for m in methods:
            parse_method(m)
        if full_grid:
            axes = {k: list(v) for k, v in GRID.items()}
        template = ScenarioConfig(**base)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad simulation config: {exc}") from exc
    unknown = set(raw) - set(SCENARIO_KEYS) - set(PAIR_KEYS) - {"seed", "n_replicates", "mc_draws", "methods"}
    if unknown:
        raise ConfigError(f"unknown simulation key(s): {', '.join(sorted(unknown))}")
    if mc_draws < 10**5:
        raise ConfigError("mc_draws must be at least 1e5")
    keys = list(axes)
    scenarios = [replace(template, **dict(zip(keys, combo)))
                 for combo in itertools.product(*(axes[k] for k in keys))]
    return SimulationPlan(scenarios, methods, mc_draws, seed, axes)


def _scenario_columns(cfg: ScenarioConfig) -> dict:
    return {"scenario": cfg.name, "N": cfg.N, "P": cfg.P, "psi": cfg.psi, "gamma": cfg.gamma,
            "kappa": cfg.kappa, "beta_sz": f"{cfg.beta_sz[0]:g}/{cfg.beta_sz[1]:g}"}


def _with_scenario(frame: pd.DataFrame, cfg: ScenarioConfig) -> pd.DataFrame:
    cols = _scenario_columns(cfg)
    head = pd.DataFrame({k: [v] * len(frame) for k, v in cols.items()})
    return pd.concat([head, frame.reset_index(drop=True)], axis=1)


def _simulation_manifest(command: str, plan: SimulationPlan, path) -> RunManifest:
    return RunManifest(
        command,
        {"scenarios": [scenario_dict(s) for s in plan.scenarios], "methods": plan.methods,
         "mc_draws": plan.mc_draws, "axes": {k: [list(v) if isinstance(v, tuple) else v for v in vals]
                                             for k, vals in plan.axes.items()}},
        {"master": plan.seed, "replicate_stream": "(seed, replicate)", "truth_stream": "seed",
         "cv_stream": "(seed, replicate, 1)"},
        input_hash={"config": file_hash(path)},
        decisions={"nonzero_count": "floor(psi * P / 2) per block",
                   "single_nonzero_value": "0.5 * gamma",
                   "alpha_xs": "-kappa * alpha_x for every subgroup",
                   "relative_bias_denominator": "method-matched truth",
                   "variance": "fixed-weight sandwich", "lambda_rule": "min"},
        started=_now(),
    )


def cmd_truth(args) -> int:
    with stage("config"):
        if not args.config:
            raise ConfigError("--config is required")
        plan = load_simulation_plan(args.config, seed=args.seed, full_grid=args.full_grid)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _simulation_manifest("truth", plan, args.config)
    frames = []
    with stage("truth"):
        for cfg in plan.scenarios:
            truth = true_estimands(cfg, mc_draws=plan.mc_draws, seed=cfg.seed)
            frames.append(_with_scenario(truth.to_frame(), cfg))
    with stage("write"):
        _write(out / "truth.csv", _frame_csv(pd.concat(frames, ignore_index=True), manifest), manifest)
        manifest.write(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.truth_only:
        return cmd_truth(args)
    with stage("config"):
        if not args.config:
            raise ConfigError("--config is required")
        plan = load_simulation_plan(args.config, seed=args.seed, full_grid=args.full_grid,
                                    n_replicates=args.n_replicates)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _simulation_manifest("simulate", plan, args.config)
    reps, summaries, truths, fails = [], [], [], []
    with stage("simulate"):
        for i, cfg in enumerate(plan.scenarios, 1):
            log.info("scenario %d/%d %s", i, len(plan.scenarios), cfg.name)
            res = run_scenario(cfg, plan.methods, mc_draws=plan.mc_draws, n_jobs=max(args.threads, 1))
            reps.append(_with_scenario(res.replicates, cfg))
            summaries.append(_with_scenario(res.summary, cfg))
            truths.append(_with_scenario(res.truth.to_frame(), cfg))
            if not res.failures.empty:
                fails.append(_with_scenario(res.failures, cfg))
    with stage("write"):
        _write(out / "replicates.csv", _frame_csv(pd.concat(reps, ignore_index=True), manifest), manifest)
        _write(out / "summary.csv", _frame_csv(pd.concat(summaries, ignore_index=True), manifest), manifest)
        _write(out / "truth.csv", _frame_csv(pd.concat(truths, ignore_index=True), manifest), manifest)
        failures = pd.concat(fails, ignore_index=True) if fails else pd.DataFrame(
            columns=["scenario", "replicate", "ps_source", "error"])
        _write(out / "failures.csv", _frame_csv(failures, manifest), manifest)
        manifest.write(out)
    if fails:
        log.warning("%d replicate-level failures recorded in failures.csv", sum(len(f) for f in fails))
    return EXIT_OK


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="INI config file")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "owsga-out")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="maximum worker processes")
    parser.add_argument("--clip-propensity", type=float, default=default, metavar="EPS",
                        help="clip propensities to [EPS, 1-EPS] (off by default)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="owsga", description="Propensity-weighted subgroup analysis")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="fit, weight, diagnose and estimate on a CSV")
    _global_flags(p, suppress=True)
    p.add_argument("--data", help="CSV file (overrides 'data' in the config)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("connect-s", help="Connect-S grids for supplied weights")
    _global_flags(p, suppress=True)
    p.add_argument("--data")
    p.add_argument("--weights", help="CSV with a 'weight' column, one row per data row")
    p.set_defaults(func=cmd_connect_s)

    for name, func, text in (("simulate", cmd_simulate, "Monte Carlo study over a scenario grid"),
                             ("truth", cmd_truth, "true subgroup estimands only")):
        p = sub.add_parser(name, help=text)
        _global_flags(p, suppress=True)
        p.add_argument("--full-grid", action="store_true", help="run the full 72-scenario design")
        if name == "simulate":
            p.add_argument("--truth-only", action="store_true")
            p.add_argument("--n-replicates", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"owsga {args.command}: error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
