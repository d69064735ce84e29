"""Standard errors for the Hajek subgroup estimator.

Both methods hold the propensity scores fixed: the sandwich treats the
weights as known, and the bootstrap recomputes weights from each resampled
unit's original propensity without refitting the model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .data import AnalysisDataset, SubgroupCell
from .weighting import WeightSet, balancing_weights, hajek, tilting


@dataclass(frozen=True)
class InferenceConfig:
    method: str = "sandwich"
    B: int = 1000
    seed: int = 0
    level: float = 0.95
    ci_type: str = "percentile"

    def __post_init__(self):
        if self.method not in ("sandwich", "bootstrap"):
            raise ValueError(f"unknown variance method {self.method!r}")
        if self.method == "bootstrap" and self.B < 100:
            raise ValueError("bootstrap needs B >= 100")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.ci_type != "percentile":
            raise ValueError("only percentile bootstrap intervals are supported")


def sandwich_se(ds: AnalysisDataset, ws: WeightSet, cell: SubgroupCell) -> float:
    """Fixed-weight linearization SE of the Hajek difference.

    Per arm, ``V_z = sum w^2 (y - mu_z)^2 / (sum w)^2``; the SE is
    ``sqrt(V_1 + V_0)``. NaN when either arm has fewer than two units.
    """
    if cell.n_treated < 2 or cell.n_control < 2:
        return float("nan")
    m = cell.members
    y, z, w = ds.y[m], ds.z[m], ws.weights[m]
    v = 0.0
    for arm in (0, 1):
        ya, wa = y[z == arm], w[z == arm]
        mu = np.dot(wa, ya) / wa.sum()
        v += np.sum(wa ** 2 * (ya - mu) ** 2) / wa.sum() ** 2
    return float(np.sqrt(v))


def wald_ci(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    q = norm.ppf(0.5 + level / 2)
    return float(estimate - q * se), float(estimate + q * se)


class BootstrapResult(NamedTuple):
    se: float
    ci_low: float
    ci_high: float
    n_discarded: int
    estimates: np.ndarray


def bootstrap_ci(
    ds: AnalysisDataset,
    e_hat,
    tilt,
    cell: SubgroupCell,
    cfg: InferenceConfig,
) -> BootstrapResult:
    """Whole-sample bootstrap with the propensity scores held fixed.

    Replicate ``b`` draws from its own stream seeded by ``(seed, b, attempt)``,
    so results do not depend on evaluation order. A replicate whose resample
    leaves an arm of the cell empty is redrawn; at most ``10 * B`` draws are
    made in total.
    """
    tilt = tilting(tilt)
    e_hat = np.asarray(e_hat, dtype=float)
    n = ds.n
    in_cell = cell.mask(n)
    w_all = balancing_weights(e_hat, ds.z, tilt)
    estimates = np.empty(cfg.B)
    draws = 0
    discarded = 0
    for b in range(cfg.B):
        attempt = 0
        while True:
            if draws >= 10 * cfg.B:
                raise RuntimeError(f"bootstrap for cell {cell.label} exceeded {10 * cfg.B} draws")
            draws += 1
            rng = np.random.default_rng([cfg.seed, b, attempt])
            idx = rng.integers(0, n, n)
            idx = idx[in_cell[idx]]
            z = ds.z[idx]
            if z.any() and not z.all():
                break
            discarded += 1
            attempt += 1
        estimates[b] = hajek(ds.y[idx], z, w_all[idx])
    alpha = 1.0 - cfg.level
    lo, hi = np.quantile(estimates, [alpha / 2, 1 - alpha / 2])
    return BootstrapResult(float(estimates.std(ddof=1)), float(lo), float(hi), discarded, estimates)
