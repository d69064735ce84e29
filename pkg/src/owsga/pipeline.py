"""End-to-end subgroup analysis: propensity model, weights, balance, effects.

With the default configuration this is the OW-pLASSO procedure: an L1 fit
selects covariate-by-subgroup interactions (mains unpenalized), an ML refit
on the selected support gives the propensities, overlap weights are formed,
balance is checked before and after weighting, and Hajek estimates are
reported for every subgroup cell and overall.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .config import AnalysisConfig
from .data import AnalysisDataset, DesignMatrix, build_design, enumerate_cells
from .diagnostics import POOLED_SD_CONVENTION, ConnectSGrid, build_connect_s
from .exceptions import DegenerateCellError
from .glm import LassoPath, LogisticFit, fit_lasso_logistic, fit_logistic_irls, post_lasso_refit
from .inference import InferenceConfig, bootstrap_ci, sandwich_se, wald_ci
from .weighting import (
    EffectEstimate,
    WeightSet,
    compute_weights,
    degenerate_estimate,
    estimate_effect,
    unit_weights,
)


@dataclass
class PropensityResult:
    e: np.ndarray
    model: str
    n_clamped: int = 0
    fit: LogisticFit | None = None
    design: DesignMatrix | None = None
    path: LassoPath | None = None
    selected: list = field(default_factory=list)
    selected_labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"model": self.model, "n_clamped": self.n_clamped}
        if self.fit is not None:
            out["fit"] = self.fit.to_dict()
        if self.path is not None:
            out["lasso_path"] = self.path.summary()
        if self.model in ("lasso", "post-lasso"):
            out["selected_interactions"] = self.selected_labels
        return out


def fit_propensity(ds: AnalysisDataset, cfg: AnalysisConfig) -> PropensityResult:
    model = cfg.ps_model
    if model == "external":
        if ds.external_ps is None:
            raise ValueError("ps_model=external but the dataset carries no propensity column")
        return PropensityResult(np.asarray(ds.external_ps), model)
    if model == "logistic-main":
        dm = build_design(ds, "none")
        fit = fit_logistic_irls(dm, ds.z)
        return PropensityResult(fit.propensity, model, fit.n_clamped, fit, dm)
    full = build_design(ds, "all")
    if model == "logistic-full":
        fit = fit_logistic_irls(full, ds.z)
        return PropensityResult(fit.propensity, model, fit.n_clamped, fit, full)

    path = fit_lasso_logistic(
        full, ds.z, folds=cfg.cv_folds, seed=cfg.seed, n_lambda=cfg.n_lambda,
        lambda_ratio=cfg.lambda_ratio, rule=cfg.lambda_rule, standardize=cfg.standardize,
    )
    selected = path.selected
    labels = [c.name for c in full.columns if c.kind == "interaction" and (c.p, c.r) in set(selected)]
    if model == "lasso":
        e, clamped = path.propensity(full)
        return PropensityResult(e, model, clamped, None, full, path, selected, labels)
    fit, reduced = post_lasso_refit(full, ds.z, selected)
    return PropensityResult(fit.propensity, model, fit.n_clamped, fit, reduced, path, selected, labels)


@dataclass
class AnalysisReport:
    config: AnalysisConfig
    estimates: list[EffectEstimate]
    weights: WeightSet
    propensity: PropensityResult
    grid_before: ConnectSGrid
    grid_after: ConnectSGrid
    inference: dict

    def estimate(self, cell: str) -> EffectEstimate:
        return next(e for e in self.estimates if e.cell == cell)

    def to_dict(self) -> dict:
        return {
            "config": self.config.snapshot(),
            "estimand": self.weights.tilt.estimand,
            "estimates": [_clean(e.to_row()) for e in self.estimates],
            "propensity": _clean(self.propensity.to_dict()),
            "weights": {
                "tilting": self.weights.tilt.kind,
                "clip_propensity": self.weights.clip,
                "warnings": list(self.weights.warnings),
                "normalization": {k: list(v) for k, v in self.weights.normalization.items()},
            },
            "inference": self.inference,
            "balance": {
                "pooled_sd": POOLED_SD_CONVENTION,
                "thresholds": list(self.grid_after.thresholds),
                "max_asmd_before": _clean(dict(zip(self.grid_before.rows, self.grid_before.max_asmd().tolist()))),
                "max_asmd_after": _clean(dict(zip(self.grid_after.rows, self.grid_after.max_asmd().tolist()))),
                "vi_after": _clean(dict(zip(self.grid_after.rows, self.grid_after.vi))),
            },
        }

    def effects_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        rows = [e.to_row() for e in self.estimates]
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(v) for k, v in row.items()})
        return buf.getvalue()

    def weights_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["unit", "z", "propensity", "weight"])
        ws = self.weights
        for i, (z, e, w) in enumerate(zip(ws.z, ws.propensity, ws.weights)):
            writer.writerow([i, int(z), repr(float(e)), repr(float(w))])
        return buf.getvalue()


def _csv_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(v))
    return v


def _clean(obj):
    """Replace NaN by None so the structure serializes as strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def run_analysis(ds: AnalysisDataset, cfg: AnalysisConfig) -> AnalysisReport:
    ps = fit_propensity(ds, cfg)
    ws = compute_weights(ps.e, ds.z, cfg.tilting, source=f"{ps.model}+{cfg.tilting}",
                         clip=cfg.clip_propensity)
    cells = enumerate_cells(ds)
    before = build_connect_s(ds, unit_weights(ds), cells, cfg.thresholds, label="Unadjusted")
    after = build_connect_s(ds, ws, cells, cfg.thresholds, label=ws.source)

    icfg = InferenceConfig(method=cfg.variance, B=cfg.bootstrap_B, seed=cfg.seed, level=cfg.ci_level)
    estimates = []
    discards = {}
    for cell in cells:
        try:
            est = estimate_effect(ds, ws, cell)
        except DegenerateCellError:
            estimates.append(degenerate_estimate(ws, cell))
            continue
        ws.arm_sums(cell)
        if icfg.method == "sandwich":
            est.se = sandwich_se(ds, ws, cell)
            est.ci_low, est.ci_high = wald_ci(est.estimate, est.se, icfg.level)
        else:
            boot = bootstrap_ci(ds, ws.propensity, ws.tilt, cell, icfg)
            est.se, est.ci_low, est.ci_high = boot.se, boot.ci_low, boot.ci_high
            discards[cell.label] = boot.n_discarded
        est.method = icfg.method
        estimates.append(est)

    inference = {"method": icfg.method, "level": icfg.level}
    if icfg.method == "bootstrap":
        inference.update({"B": icfg.B, "seed": icfg.seed, "ci_type": icfg.ci_type, "discarded": discards})
    return AnalysisReport(cfg, estimates, ws, ps, before, after, inference)


def run_ow_plasso(ds: AnalysisDataset, cfg: AnalysisConfig) -> AnalysisReport:
    """Post-LASSO propensities paired with overlap weights."""
    return run_analysis(ds, cfg.replace(tilting="ow", ps_model="post-lasso"))
