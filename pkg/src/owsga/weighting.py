"""Tilting functions, balancing weights and the Hajek subgroup estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AnalysisDataset, SubgroupCell
from .exceptions import DegenerateCellError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class TiltingFunction:
    """``h(e) = 1`` targets the whole sample (IPW); ``h(e) = e(1-e)`` the overlap population."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("ipw", "ow"):
            raise ValueError(f"unknown tilting function {self.kind!r}")

    def h(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        return np.ones_like(e) if self.kind == "ipw" else e * (1.0 - e)

    @property
    def estimand(self) -> str:
        return "S-ATE" if self.kind == "ipw" else "S-ATO"

    @property
    def population_estimand(self) -> str:
        return "ATE" if self.kind == "ipw" else "ATO"


IPW = TiltingFunction("ipw")
OW = TiltingFunction("ow")


def tilting(kind: str | TiltingFunction) -> TiltingFunction:
    return kind if isinstance(kind, TiltingFunction) else TiltingFunction(kind.lower())


def balancing_weights(e, z, tilt: TiltingFunction) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    z = np.asarray(z)
    if tilt.kind == "ow":
        return np.where(z == 1, 1.0 - e, e)
    return np.where(z == 1, 1.0 / e, 1.0 / (1.0 - e))


@dataclass(frozen=True)
class WeightSet:
    weights: np.ndarray
    z: np.ndarray
    propensity: np.ndarray
    tilt: TiltingFunction
    source: str = ""
    clip: float | None = None
    warnings: tuple[str, ...] = ()
    normalization: dict = field(default_factory=dict, compare=False)

    def arm_sums(self, cell: SubgroupCell) -> tuple[float, float]:
        """Per-arm weight totals in the cell; recorded as normalization constants."""
        key = cell.label
        if key not in self.normalization:
            w = self.weights[cell.members]
            zc = self.z[cell.members]
            self.normalization[key] = (float(w[zc == 1].sum()), float(w[zc == 0].sum()))
        return self.normalization[key]

    def normalized(self, cell: SubgroupCell) -> np.ndarray:
        """Cell members' weights scaled so each arm sums to one."""
        s1, s0 = self.arm_sums(cell)
        w = self.weights[cell.members]
        zc = self.z[cell.members]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(zc == 1, w / s1, w / s0)

    def scaled(self, c: float) -> WeightSet:
        return WeightSet(self.weights * c, self.z, self.propensity, self.tilt, self.source, self.clip, self.warnings)


def unit_weights(ds: AnalysisDataset) -> WeightSet:
    return WeightSet(np.ones(ds.n), ds.z, np.full(ds.n, 0.5), IPW, source="unadjusted")


def compute_weights(e, z, tilt, source: str = "", clip: float | None = None) -> WeightSet:
    """Raw balancing weights ``h/e`` (treated) and ``h/(1-e)`` (control).

    No trimming is applied unless ``clip`` is given, in which case the
    propensities are first clipped to ``[clip, 1 - clip]``.
    """
    tilt = tilting(tilt)
    e = np.asarray(e, dtype=float)
    z = np.asarray(z)
    if ((e <= 0) | (e >= 1)).any():
        raise ValueError("propensities must lie strictly in (0, 1)")
    warnings = []
    if clip is not None:
        e = np.clip(e, clip, 1.0 - clip)
        warnings.append(f"propensities clipped to [{clip}, {1 - clip}]")
    if tilt.kind == "ipw":
        extreme = int(((e <= 2 * _EPS) | (e >= 1 - 2 * _EPS)).sum())
        if extreme:
            warnings.append(f"{extreme} propensities at the numerical boundary give extreme IPW weights")
    w = balancing_weights(e, z, tilt)
    return WeightSet(w, z, e, tilt, source, clip, tuple(warnings))


@dataclass
class EffectEstimate:
    cell: str
    estimand: str
    estimate: float
    n_treated: int
    n_control: int
    ess_treated: float
    ess_control: float
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    method: str = ""
    degenerate: bool = False

    def to_row(self) -> dict:
        return {
            "cell": self.cell,
            "estimand": self.estimand,
            "estimate": self.estimate,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "variance_method": self.method,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "ess_treated": self.ess_treated,
            "ess_control": self.ess_control,
            "degenerate": self.degenerate,
        }


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / (w ** 2).sum()) if w.size else 0.0


def hajek(y, z, w) -> float:
    t = z == 1
    return float(np.dot(w[t], y[t]) / w[t].sum() - np.dot(w[~t], y[~t]) / w[~t].sum())


def estimate_effect(ds: AnalysisDataset, ws: WeightSet, cell: SubgroupCell) -> EffectEstimate:
    """Point estimate of the cell's weighted treatment effect (SE left empty)."""
    if cell.degenerate:
        raise DegenerateCellError(f"cell {cell.label} has an empty treatment arm")
    m = cell.members
    y, z, w = ds.y[m], ds.z[m], ws.weights[m]
    return EffectEstimate(
        cell=cell.label,
        estimand=ws.tilt.estimand,
        estimate=hajek(y, z, w),
        n_treated=cell.n_treated,
        n_control=cell.n_control,
        ess_treated=effective_sample_size(w[z == 1]),
        ess_control=effective_sample_size(w[z == 0]),
    )


def degenerate_estimate(ws: WeightSet, cell: SubgroupCell) -> EffectEstimate:
    return EffectEstimate(
        cell=cell.label,
        estimand=ws.tilt.estimand,
        estimate=float("nan"),
        n_treated=cell.n_treated,
        n_control=cell.n_control,
        ess_treated=float("nan"),
        ess_control=float("nan"),
        degenerate=True,
    )
