"""Monte Carlo study: data generation, true estimands, scenario runs.

Covariates are half standard normal, half Bernoulli(0.3); two independent
Bernoulli(0.25) subgroup indicators S1, S2. Treatment follows

    logit e = alpha_r + S'alpha_s + X'alpha_x + S1 * X'alpha_xs + S2 * X'alpha_xs

and the outcome is linear, ``Y = beta_0 + X'beta_x + S'beta_s + beta_z Z
+ (S Z)'beta_sz + N(0, 1)``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import AnalysisDataset, build_design, enumerate_cells
from .diagnostics import asmd_vector, variance_inflation
from .exceptions import OWSGAError
from .glm import fit_lasso_logistic, fit_logistic_irls, post_lasso_refit
from .inference import sandwich_se, wald_ci
from .weighting import compute_weights, estimate_effect

log = logging.getLogger(__name__)

CELLS = ("Overall", "S1=0", "S1=1", "S2=0", "S2=1")
SUBGROUP_CELLS = CELLS[1:]
PS_SOURCES = ("true-model", "true-ps", "logistic-main", "lasso", "post-lasso", "external")


@dataclass(frozen=True)
class ScenarioConfig:
    N: int = 3000
    P: int = 18
    psi: float = 0.25
    gamma: float = 1.0
    kappa: float = 0.75
    beta_sz: tuple[float, float] = (0.5, 0.5)
    n_replicates: int = 100
    seed: int = 0
    cv_folds: int = 10
    alpha_r: float = -2.0
    alpha_s: tuple[float, float] = (1.0, 1.0)
    beta_0: float = 0.0
    beta_s: tuple[float, float] = (0.8, 0.8)
    beta_z: float = -1.0
    p_binary: float = 0.3
    p_subgroup: float = 0.25

    def __post_init__(self):
        if self.P % 2:
            raise ValueError("P must be even")
        if not 0 <= self.psi <= 1:
            raise ValueError("psi must lie in [0, 1]")

    @property
    def name(self) -> str:
        return (f"N{self.N}_P{self.P}_psi{self.psi:g}_gamma{self.gamma:g}_kappa{self.kappa:g}"
                f"_bsz{self.beta_sz[0]:g}-{self.beta_sz[1]:g}")


@dataclass(frozen=True)
class CoefficientSet:
    alpha_r: float
    alpha_s: np.ndarray
    alpha_x: np.ndarray
    alpha_xs: np.ndarray
    beta_0: float
    beta_x: np.ndarray
    beta_s: np.ndarray
    beta_z: float
    beta_sz: np.ndarray


def nonzero_count(psi: float, half: int) -> int:
    return int(math.floor(psi * half + 1e-9))


def _block(m: int, half: int, gamma: float) -> np.ndarray:
    out = np.zeros(half)
    if m == 1:
        out[0] = 0.5 * gamma
    elif m > 1:
        out[:m] = np.linspace(0.25 * gamma, 0.5 * gamma, m)
    return out


def build_alpha(cfg: ScenarioConfig) -> CoefficientSet:
    """Coefficients of the treatment and outcome models for a scenario.

    In each covariate block (continuous, binary) the first
    ``floor(psi * P/2)`` coefficients are equally spaced on
    ``[0.25 gamma, 0.5 gamma]``; interactions are ``-kappa * alpha_x``.
    """
    half = cfg.P // 2
    block = _block(nonzero_count(cfg.psi, half), half, cfg.gamma)
    alpha_x = np.concatenate([block, block])
    return CoefficientSet(
        alpha_r=cfg.alpha_r,
        alpha_s=np.asarray(cfg.alpha_s, dtype=float),
        alpha_x=alpha_x,
        alpha_xs=-cfg.kappa * alpha_x,
        beta_0=cfg.beta_0,
        beta_x=alpha_x.copy(),
        beta_s=np.asarray(cfg.beta_s, dtype=float),
        beta_z=cfg.beta_z,
        beta_sz=np.asarray(cfg.beta_sz, dtype=float),
    )


def generate_dataset(cfg: ScenarioConfig, seed) -> tuple[AnalysisDataset, np.ndarray]:
    """One simulated sample and its true propensity scores."""
    rng = np.random.default_rng(seed)
    coef = build_alpha(cfg)
    half = cfg.P // 2
    X = np.hstack([
        rng.standard_normal((cfg.N, half)),
        rng.binomial(1, cfg.p_binary, (cfg.N, half)).astype(float),
    ])
    S = rng.binomial(1, cfg.p_subgroup, (cfg.N, 2)).astype(float)
    xa = X @ coef.alpha_xs
    eta = coef.alpha_r + S @ coef.alpha_s + X @ coef.alpha_x + S[:, 0] * xa + S[:, 1] * xa
    e = expit(eta)
    Z = rng.binomial(1, e)
    Y = (coef.beta_0 + X @ coef.beta_x + S @ coef.beta_s + coef.beta_z * Z
         + (S * Z[:, None]) @ coef.beta_sz + rng.standard_normal(cfg.N))
    ds = AnalysisDataset.from_arrays(
        Y, Z, X,
        covariate_names=[f"X{p + 1}" for p in range(cfg.P)],
        subgroups={"S1": S[:, 0].astype(int), "S2": S[:, 1].astype(int)},
        levels={"S1": ("0", "1"), "S2": ("0", "1")},
    )
    return ds, e


@dataclass
class TrueEstimands:
    values: dict  # cell -> {"ATE": float, "ATO": float}
    se: dict
    mc_draws: int
    seed: int

    def get(self, cell: str, tilt: str) -> float:
        return self.values[cell]["ATE" if tilt == "ipw" else "ATO"]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self.values:
            for target in ("ATE", "ATO"):
                rows.append({"cell": cell, "estimand": target,
                             "value": self.values[cell][target], "mc_se": self.se[cell][target]})
        return pd.DataFrame(rows)


def true_estimands(cfg: ScenarioConfig, mc_draws: int = 10**6, seed: int = 0,
                   chunk: int = 200_000) -> TrueEstimands:
    """Brute-force Monte Carlo of the population estimands under the known model.

    The conditional effect is ``beta_z + S'beta_sz``; the ATE averages it with
    weight 1 and the ATO with weight ``e(1-e)``, overall and within each
    subgroup level. Standard errors use the delta method for the ratio.
    """
    if mc_draws < 10**5:
        raise ValueError("mc_draws must be at least 1e5")
    coef = build_alpha(cfg)
    rng = np.random.default_rng([seed, 7919])
    half = cfg.P // 2
    # per cell and weight type: sums of h, h*tau, h^2, h^2*tau, h^2*tau^2
    acc = {cell: {t: np.zeros(5) for t in ("ATE", "ATO")} for cell in CELLS}
    remaining = mc_draws
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        xc = rng.standard_normal((m, half))
        xb = (rng.random((m, half)) < cfg.p_binary).astype(float)
        s = (rng.random((m, 2)) < cfg.p_subgroup).astype(float)
        lin = xc @ coef.alpha_x[:half] + xb @ coef.alpha_x[half:]
        inter = xc @ coef.alpha_xs[:half] + xb @ coef.alpha_xs[half:]
        eta = coef.alpha_r + s @ coef.alpha_s + lin + (s[:, 0] + s[:, 1]) * inter
        e = 1.0 / (1.0 + np.exp(-eta))
        tau = coef.beta_z + s @ coef.beta_sz
        masks = {
            "Overall": np.ones(m, dtype=bool),
            "S1=0": s[:, 0] == 0, "S1=1": s[:, 0] == 1,
            "S2=0": s[:, 1] == 0, "S2=1": s[:, 1] == 1,
        }
        for cell, mask in masks.items():
            t = tau[mask]
            for target, h in (("ATE", np.ones(t.size)), ("ATO", (e * (1 - e))[mask])):
                acc[cell][target] += [h.sum(), (h * t).sum(), (h * h).sum(),
                                      (h * h * t).sum(), (h * h * t * t).sum()]
    values, ses = {}, {}
    for cell in CELLS:
        values[cell], ses[cell] = {}, {}
        for target in ("ATE", "ATO"):
            sh, sht, shh, shht, shhtt = acc[cell][target]
            ratio = sht / sh
            k = mc_draws
            var_lin = (shhtt - 2 * ratio * shht + ratio ** 2 * shh) / k
            values[cell][target] = float(ratio)
            ses[cell][target] = float(np.sqrt(max(var_lin, 0.0) / k) / (sh / k))
    return TrueEstimands(values, ses, mc_draws, seed)


def parse_method(method: str) -> tuple[str, str]:
    source, _, tilt = method.rpartition("+")
    if source not in PS_SOURCES or tilt not in ("ipw", "ow"):
        raise ValueError(f"unknown method {method!r}; expected <source>+<ipw|ow>")
    return source, tilt


def _propensities(ds, e_true, sources, cv_seed, folds, external):
    out, meta = {}, {}
    full = build_design(ds, "all") if {"true-model", "lasso", "post-lasso"} & sources else None
    if "true-model" in sources:
        out["true-model"] = fit_logistic_irls(full, ds.z).propensity
    if "true-ps" in sources:
        out["true-ps"] = e_true
    if "logistic-main" in sources:
        out["logistic-main"] = fit_logistic_irls(build_design(ds, "none"), ds.z).propensity
    if {"lasso", "post-lasso"} & sources:
        path = fit_lasso_logistic(full, ds.z, folds=folds, seed=cv_seed)
        meta["n_selected"] = len(path.selected)
        if "lasso" in sources:
            out["lasso"] = path.propensity(full)[0]
        if "post-lasso" in sources:
            out["post-lasso"] = post_lasso_refit(full, ds.z, path.selected)[0].propensity
    if "external" in sources:
        if external is None:
            raise ValueError("method source 'external' needs an external propensity function")
        out["external"] = np.asarray(external(ds), dtype=float)
    return out, meta


def run_replicate(cfg: ScenarioConfig, rep: int, methods, truth: TrueEstimands, external=None):
    """Rows of per-cell results for one replicate, plus any failures."""
    ds, e_true = generate_dataset(cfg, [cfg.seed, rep])
    cv_seed = int(np.random.default_rng([cfg.seed, rep, 1]).integers(2**31 - 1))
    parsed = [parse_method(m) for m in methods]
    sources = {s for s, _ in parsed}
    rows, failures = [], []
    props, meta = {}, {}
    groups = [{s} for s in sorted(sources - {"lasso", "post-lasso"})]
    if {"lasso", "post-lasso"} & sources:
        groups.append(sources & {"lasso", "post-lasso"})
    for group in groups:
        try:
            got, m = _propensities(ds, e_true, group, cv_seed, cfg.cv_folds, external)
        except (OWSGAError, np.linalg.LinAlgError, ValueError) as exc:
            for source in sorted(group):
                failures.append({"replicate": rep, "ps_source": source,
                                 "error": f"{type(exc).__name__}: {exc}"})
            continue
        props.update(got)
        meta.update(m)
    cells = {c.label: c for c in enumerate_cells(ds)}
    for method, (source, tilt) in zip(methods, parsed):
        if source not in props:
            continue
        try:
            ws = compute_weights(props[source], ds.z, tilt, source=source)
        except ValueError as exc:
            failures.append({"replicate": rep, "ps_source": source, "error": f"ValueError: {exc}"})
            continue
        for label in CELLS:
            cell = cells[label]
            if cell.degenerate:
                failures.append({"replicate": rep, "ps_source": source, "error": f"degenerate cell {label}"})
                continue
            est = estimate_effect(ds, ws, cell)
            se = sandwich_se(ds, ws, cell)
            lo, hi = wald_ci(est.estimate, se)
            target = truth.get(label, tilt)
            rows.append({
                "replicate": rep, "method": method, "ps_source": source, "tilting": tilt,
                "cell": label, "estimand": ws.tilt.estimand, "estimate": est.estimate,
                "truth": target, "se": se, "ci_low": lo, "ci_high": hi,
                "covered": bool(lo <= target <= hi),
                "max_asmd": float(np.nanmax(asmd_vector(ds, ws.weights, cell))),
                "vi": variance_inflation(ws, cell),
                "n_selected": meta.get("n_selected", np.nan) if source in ("lasso", "post-lasso") else np.nan,
            })
    return rows, failures


def summarize(replicates: pd.DataFrame) -> pd.DataFrame:
    """Aggregate replicate rows to bias, relative bias, RMSE and balance per method and cell."""
    if replicates.empty:
        return pd.DataFrame()
    df = replicates.assign(err=replicates.estimate - replicates.truth)
    g = df.groupby(["method", "cell"], sort=False)
    out = g.agg(
        n_ok=("estimate", "size"),
        truth=("truth", "first"),
        mean_estimate=("estimate", "mean"),
        bias=("err", "mean"),
        rmse=("err", lambda e: float(np.sqrt(np.mean(e ** 2)))),
        emp_var=("estimate", lambda x: float(np.var(x, ddof=1)) if len(x) > 1 else np.nan),
        mean_se=("se", "mean"),
        coverage=("covered", "mean"),
        mean_max_asmd=("max_asmd", "mean"),
        mean_vi=("vi", "mean"),
    ).reset_index()
    out["rel_bias"] = out.bias / out.truth.abs()
    # subgroup-averaged summary, labelled separately from the Overall cell
    sub = out[out.cell.isin(SUBGROUP_CELLS)]
    avg = sub.groupby("method", sort=False)[
        ["bias", "rel_bias", "rmse", "emp_var", "mean_se", "coverage", "mean_max_asmd", "mean_vi"]
    ].mean().reset_index()
    avg["cell"] = "Subgroup-average"
    avg["n_ok"] = sub.groupby("method", sort=False)["n_ok"].min().to_numpy()
    out = pd.concat([out, avg], ignore_index=True)
    cols = ["method", "cell", "n_ok", "truth", "mean_estimate", "bias", "rel_bias", "rmse",
            "emp_var", "mean_se", "coverage", "mean_max_asmd", "mean_vi"]
    out = out[cols]
    return out.astype({"n_ok": int})


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    methods: list[str]
    truth: TrueEstimands
    replicates: pd.DataFrame
    summary: pd.DataFrame
    failures: pd.DataFrame = field(default_factory=pd.DataFrame)


def run_scenario(
    cfg: ScenarioConfig,
    methods,
    truth: TrueEstimands | None = None,
    mc_draws: int = 10**6,
    external=None,
    n_jobs: int = 1,
) -> ScenarioResult:
    """Run ``cfg.n_replicates`` replicates and aggregate the metrics.

    Replicate ``r`` is generated from the seed ``(cfg.seed, r)``, so the
    outcome does not depend on ``n_jobs``.
    """
    methods = list(methods)
    for m in methods:
        parse_method(m)
    if truth is None:
        truth = true_estimands(cfg, mc_draws=mc_draws, seed=cfg.seed)
    reps = range(cfg.n_replicates)
    if n_jobs == 1:
        results = [run_replicate(cfg, r, methods, truth, external) for r in reps]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(cfg, r, methods, truth, external) for r in reps
        )
    rows = [row for rr, _ in results for row in rr]
    fails = [f for _, ff in results for f in ff]
    replicates = pd.DataFrame(rows)
    return ScenarioResult(cfg, methods, truth, replicates, summarize(replicates), pd.DataFrame(fails))


GRID = {
    "P": (18, 48),
    "psi": (0.25, 0.75),
    "gamma": (1.0, 1.25, 1.5),
    "kappa": (0.25, 0.5, 0.75),
    "beta_sz": ((0.0, 0.0), (0.5, 0.5)),
}


def factorial_grid(base: ScenarioConfig | None = None, **axes) -> list[ScenarioConfig]:
    """Cartesian product of scenario parameters (default: the full 72-point design)."""
    base = base or ScenarioConfig()
    axes = axes or GRID
    keys = list(axes)
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(axes[k] for k in keys))]


def scenario_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["name"] = cfg.name
    return d
