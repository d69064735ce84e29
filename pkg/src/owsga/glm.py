"""Logistic propensity models: IRLS maximum likelihood, L1 path, post-LASSO.

The penalized problem solved along the path is

    (1/n) * sum_i [log(1 + exp(eta_i)) - z_i * eta_i] + lam * sum_j pf_j |b_j|

with penalized columns scaled to unit (population) variance. Each lambda is
solved by proximal Newton steps whose quadratic subproblem is minimized by
coordinate descent over the penalized coordinates, alternated with an exact
solve of the unpenalized block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit

from .data import DesignMatrix
from .exceptions import ConvergenceError, RankError, SeparationError

log = logging.getLogger(__name__)

SCORE_TOL = 1e-10
MAX_ITER = 100
SEPARATION_CAP = 30.0
CD_TOL = 1e-8
# early exit once the subproblem's KKT conditions hold to this precision
STATIONARITY_TOL = 1e-9
N_LAMBDA = 100
LAMBDA_RATIO = 1e-4
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    propensity: np.ndarray
    converged: bool
    n_iter: int
    max_score: float
    deviance: float
    columns: tuple[str, ...]
    n_clamped: int = 0

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "coef": self.coef.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "max_score": self.max_score,
            "deviance": self.deviance,
            "n_clamped": self.n_clamped,
        }


def clamp_propensity(e: np.ndarray) -> tuple[np.ndarray, int]:
    """Keep propensities strictly inside (0, 1); report how many were moved."""
    lo, hi = _EPS, 1.0 - _EPS
    hit = (e < lo) | (e > hi)
    if hit.any():
        e = np.clip(e, lo, hi)
    return e, int(hit.sum())


def binomial_deviance(z: np.ndarray, eta: np.ndarray) -> float:
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - z * eta))


def score_vector(X: np.ndarray, z: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Gradient of the log-likelihood, sum_i (z_i - e_i) x_i."""
    return X.T @ (z - expit(X @ coef))


def log_likelihood(X: np.ndarray, z: np.ndarray, coef: np.ndarray) -> float:
    eta = X @ coef
    return float(np.sum(z * eta - np.logaddexp(0.0, eta)))


def _check_rank(X: np.ndarray, names) -> None:
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankError(
            f"design has rank {rank} < {X.shape[1]} columns; "
            f"check for collinear columns among {list(names)}"
        )


def _irls(X, z, tol, max_iter, cap, start=None):
    n, k = X.shape
    coef = np.zeros(k) if start is None else start.copy()
    eta = X @ coef
    dev = binomial_deviance(z, eta)
    converged = False
    max_score = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        e = expit(eta)
        score = X.T @ (z - e)
        max_score = float(np.abs(score).max())
        if max_score <= tol:
            converged = True
            it -= 1
            break
        w = e * (1.0 - e)
        H = (X.T * w) @ X
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        while True:
            cand = coef + t * step
            cand_eta = X @ cand
            cand_dev = binomial_deviance(z, cand_eta)
            # tolerate roundoff in the deviance near the optimum
            if cand_dev <= dev + 1e-12 * (1.0 + abs(dev)):
                break
            t *= 0.5
            if t < 1e-10:
                cand = None
                break
        if cand is None:
            log.debug("IRLS stalled at iteration %d, max score %.3g", it, max_score)
            break
        coef, eta, dev = cand, cand_eta, cand_dev
        if np.abs(coef).max() > cap:
            raise SeparationError(
                f"coefficient magnitude exceeded {cap} at iteration {it}: "
                "complete or quasi-complete separation"
            )
    else:
        e = expit(eta)
        max_score = float(np.abs(X.T @ (z - e)).max())
        converged = max_score <= tol
    return coef, it, converged, max_score, dev


def fit_logistic_irls(
    dm: DesignMatrix,
    z,
    tol: float = SCORE_TOL,
    max_iter: int = MAX_ITER,
    cap: float = SEPARATION_CAP,
) -> LogisticFit:
    """Maximum-likelihood logistic regression by Newton/IRLS with step halving.

    Iterates until every score equation satisfies
    ``|sum_i (z_i - e_i) x_ik| <= tol``.

    Raises
    ------
    SeparationError
        If the treatment is constant or any coefficient exceeds ``cap``.
    RankError
        If the design is rank deficient.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    X = np.asarray(dm.matrix, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.min() == z.max():
        raise SeparationError("treatment is constant; the MLE does not exist")
    _check_rank(X, dm.names)
    coef, it, converged, max_score, dev = _irls(X, z, tol, max_iter, cap)
    e, clamped = clamp_propensity(expit(X @ coef))
    return LogisticFit(coef, e, converged, it, max_score, dev, dm.names, clamped)


def predict_propensity(fit: LogisticFit, dm: DesignMatrix) -> tuple[np.ndarray, int]:
    """Return ``(e, n_clamped)`` for the rows of ``dm``."""
    if tuple(dm.names) != tuple(fit.columns):
        raise ValueError("design columns do not match the fitted model")
    return clamp_propensity(expit(dm.matrix @ fit.coef))


# ---------------------------------------------------------------------------
# L1-penalized path


@numba.njit(cache=True)
def _quadratic_cd(H, g, beta, pen, unpen, penal, HUU_inv, tol, max_cycles):
    # minimize -g'd + d'Hd/2 + sum pen_j |beta_j + d_j| over b = beta + d
    K = beta.shape[0]
    b = beta.copy()
    Hd = np.zeros(K)
    nU = unpen.shape[0]
    rhs = np.empty(nU)
    for cycle in range(max_cycles):
        max_change = 0.0
        if nU > 0:
            for a in range(nU):
                i = unpen[a]
                s = Hd[i]
                for c in range(nU):
                    s -= H[i, unpen[c]] * (b[unpen[c]] - beta[unpen[c]])
                rhs[a] = g[i] - s
            for a in range(nU):
                i = unpen[a]
                d_new = 0.0
                for c in range(nU):
                    d_new += HUU_inv[a, c] * rhs[c]
                delta = beta[i] + d_new - b[i]
                if delta != 0.0:
                    for k in range(K):
                        Hd[k] += H[k, i] * delta
                    b[i] += delta
                    if abs(delta) > max_change:
                        max_change = abs(delta)
        for a in range(penal.shape[0]):
            j = penal[a]
            hjj = H[j, j]
            u = hjj * b[j] + g[j] - Hd[j]
            thr = pen[j]
            if u > thr:
                new = (u - thr) / hjj
            elif u < -thr:
                new = (u + thr) / hjj
            else:
                new = 0.0
            delta = new - b[j]
            if delta != 0.0:
                for k in range(K):
                    Hd[k] += H[k, j] * delta
                b[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            return b, cycle + 1
    return b, max_cycles


def _objective(eta, z, b, pen):
    return float(np.mean(np.logaddexp(0.0, eta) - z * eta) + pen @ np.abs(b))


def _stationary(g, b, pen, tol):
    nz = b != 0
    viol = np.where(nz, np.abs(g - pen * np.sign(b)), np.abs(g) - pen)
    return viol.max() <= tol


def _prox_newton(X, z, b, pen, unpen_mask, tol, max_iter):
    n = X.shape[0]
    unpen = np.flatnonzero(unpen_mask)
    penal = np.flatnonzero(~unpen_mask)
    eta = X @ b
    f = _objective(eta, z, b, pen)
    for _ in range(max_iter):
        e = expit(eta)
        g = X.T @ (z - e) / n
        if _stationary(g, b, pen, STATIONARITY_TOL):
            return b
        w = e * (1.0 - e)
        H = (X.T * w) @ X / n
        HUU_inv = np.linalg.inv(H[np.ix_(unpen, unpen)]) if unpen.size else np.zeros((0, 0))
        b_new, _ = _quadratic_cd(H, g, b, pen, unpen, penal, HUU_inv, tol * 1e-3, 100000)
        d = b_new - b
        t = 1.0
        while True:
            cand = b + t * d
            eta_cand = X @ cand
            f_cand = _objective(eta_cand, z, cand, pen)
            if f_cand <= f + 1e-13 * (1.0 + abs(f)) or t < 1e-6:
                break
            t *= 0.5
        b, eta, f = cand, eta_cand, f_cand
        if np.abs(t * d).max() < tol:
            return b
    raise ConvergenceError("proximal Newton did not converge")


def _solve_lambda(X, z, pf, lam, b, active, tol, max_iter):
    n = X.shape[0]
    pen = lam * pf
    while True:
        idx = np.flatnonzero(active)
        sub = _prox_newton(X[:, idx], z, b[idx], pen[idx], pf[idx] == 0, tol, max_iter)
        b = np.zeros_like(b)
        b[idx] = sub
        g = X.T @ (z - expit(X @ b)) / n
        violators = ~active & (np.abs(g) > pen)
        if not violators.any():
            return b, g
        active = active | violators


@dataclass
class _RawPath:
    coef: np.ndarray  # original scale, (n_lambda, K)
    scale: np.ndarray
    lambdas: np.ndarray


def _standardize(X, pf, standardize):
    scale = np.ones(X.shape[1])
    usable = np.ones(X.shape[1], dtype=bool)
    pen_cols = pf > 0
    sd = X[:, pen_cols].std(axis=0)
    if standardize:
        scale[pen_cols] = np.where(sd > 0, sd, 1.0)
    usable[np.flatnonzero(pen_cols)[sd == 0]] = False
    return X / scale, scale, usable


def _lambda_max(Xs, z, pf, b0, usable):
    n = Xs.shape[0]
    g = Xs.T @ (z - expit(Xs @ b0)) / n
    mask = (pf > 0) & usable
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(g[mask]) / pf[mask]))


def _fit_raw_path(X, z, pf, lambdas, n_lambda, lambda_ratio, standardize, tol, max_iter):
    n, K = X.shape
    Xs, scale, usable = _standardize(X, pf, standardize)
    unpen = np.flatnonzero(pf == 0)
    start, _, _, _, _ = _irls(Xs[:, unpen], z, SCORE_TOL, MAX_ITER, np.inf)
    b0 = np.zeros(K)
    b0[unpen] = start
    if lambdas is None:
        lmax = _lambda_max(Xs, z, pf, b0, usable)
        if lmax == 0.0:
            lambdas = np.zeros(1)
        else:
            lambdas = lmax * np.logspace(0.0, np.log10(lambda_ratio), n_lambda)
    lambdas = np.asarray(lambdas, dtype=float)

    cols = np.flatnonzero(usable)
    Xu, pfu = Xs[:, cols], pf[cols]
    b = b0[cols]
    g = Xu.T @ (z - expit(Xu @ b)) / n
    coef = np.zeros((lambdas.size, K))
    prev = None
    for k, lam in enumerate(lambdas):
        if prev is None and np.all(np.abs(g[pfu > 0]) <= lam * pfu[pfu > 0]):
            # mains-only fit is already optimal; penalized coefficients stay exactly zero
            coef[k, cols] = b
            prev = lam
            continue
        prev = lam if prev is None else prev
        active = (pfu == 0) | (b != 0) | (np.abs(g) >= pfu * (2.0 * lam - prev))
        try:
            b, g = _solve_lambda(Xu, z, pfu, lam, b, active, tol, max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(f"L1 path did not converge at lambda={lam:.6g}") from exc
        coef[k, cols] = b
        prev = lam
    return _RawPath(coef / scale, scale, lambdas)


def stratified_folds(z, folds: int, seed: int, attempts: int = 5) -> np.ndarray:
    """Assign fold ids so each fold keeps both treatment arms."""
    z = np.asarray(z)
    n = z.shape[0]
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        fold = np.empty(n, dtype=int)
        offset = 0
        for arm in (0, 1):
            idx = rng.permutation(np.flatnonzero(z == arm))
            fold[idx] = (np.arange(idx.size) + offset) % folds
            offset += idx.size
        ok = all(
            np.unique(z[fold == f]).size == 2 and np.unique(z[fold != f]).size == 2
            for f in range(folds)
        )
        if ok:
            return fold
        log.warning("fold assignment attempt %d produced a single-class fold", attempt)
    raise ConvergenceError(f"could not form {folds} folds with both arms after {attempts} attempts")


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    coef: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    seed: int
    folds: int
    fold_ids: np.ndarray
    best_index: int
    rule: str
    columns: tuple[str, ...]
    pairs: tuple  # (p, r) per column, None for mains
    scale: np.ndarray
    settings: dict = field(default_factory=dict)

    @property
    def lambda_(self) -> float:
        return float(self.lambdas[self.best_index])

    @property
    def best_coef(self) -> np.ndarray:
        return self.coef[self.best_index]

    @property
    def selected(self) -> list[tuple[int, int]]:
        return [
            pair for pair, b in zip(self.pairs, self.best_coef)
            if pair is not None and b != 0.0
        ]

    def propensity(self, dm: DesignMatrix, index: int | None = None) -> tuple[np.ndarray, int]:
        if tuple(dm.names) != self.columns:
            raise ValueError("design columns do not match the fitted path")
        b = self.best_coef if index is None else self.coef[index]
        return clamp_propensity(expit(dm.matrix @ b))

    def summary(self) -> dict:
        return {
            "lambda": self.lambdas.tolist(),
            "cv_mean_deviance": self.cv_mean.tolist(),
            "cv_se": self.cv_se.tolist(),
            "n_nonzero_interactions": [
                int(sum(1 for pair, b in zip(self.pairs, row) if pair is not None and b != 0))
                for row in self.coef
            ],
            "best_index": self.best_index,
            "best_lambda": self.lambda_,
            "rule": self.rule,
            "seed": self.seed,
            "folds": self.folds,
            "columns": list(self.columns),
            "best_coef": self.best_coef.tolist(),
            "selected": [list(p) for p in self.selected],
            **self.settings,
        }


def _cv_deviance(X, z, pf, lambdas, fold_ids, folds, standardize, tol, max_iter):
    raw = np.empty((folds, lambdas.size))
    sizes = np.empty(folds)
    for f in range(folds):
        train = fold_ids != f
        test = ~train
        path = _fit_raw_path(
            X[train], z[train], pf, lambdas, None, None, standardize, tol, max_iter
        )
        eta = X[test] @ path.coef.T
        dev = 2.0 * (np.logaddexp(0.0, eta) - z[test, None] * eta)
        raw[f] = dev.mean(axis=0)
        sizes[f] = test.sum()
    w = sizes / sizes.sum()
    mean = w @ raw
    se = np.sqrt((w @ (raw - mean) ** 2) / (folds - 1))
    return mean, se


def fit_lasso_logistic(
    dm: DesignMatrix,
    z,
    folds: int = 10,
    seed: int = 0,
    n_lambda: int = N_LAMBDA,
    lambda_ratio: float = LAMBDA_RATIO,
    rule: str = "min",
    standardize: bool = True,
    tol: float = CD_TOL,
    max_iter: int = MAX_ITER,
) -> LassoPath:
    """L1 logistic path with treatment-stratified K-fold CV over lambda.

    Interaction columns (penalty factor 1) are penalized; main effects and
    the intercept are not. The chosen lambda minimizes mean held-out binomial
    deviance (``rule="min"``) or is the largest lambda within one standard
    error of that minimum (``rule="1se"``).
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown lambda rule {rule!r}")
    X = np.asarray(dm.matrix, dtype=float)
    z = np.asarray(z, dtype=float)
    pf = np.asarray(dm.penalty_factor, dtype=float)
    if z.min() == z.max():
        raise SeparationError("treatment is constant")
    _check_rank(X[:, pf == 0], [n for n, p in zip(dm.names, pf) if p == 0])

    full = _fit_raw_path(X, z, pf, None, n_lambda, lambda_ratio, standardize, tol, max_iter)
    fold_ids = stratified_folds(z, folds, seed)
    mean, se = _cv_deviance(X, z, pf, full.lambdas, fold_ids, folds, standardize, tol, max_iter)
    best = int(np.argmin(mean))
    if rule == "1se":
        best = int(np.flatnonzero(mean <= mean[best] + se[best])[0])
    pairs = tuple((c.p, c.r) if c.kind == "interaction" else None for c in dm.columns)
    return LassoPath(
        lambdas=full.lambdas,
        coef=full.coef,
        cv_mean=mean,
        cv_se=se,
        seed=seed,
        folds=folds,
        fold_ids=fold_ids,
        best_index=best,
        rule=rule,
        columns=dm.names,
        pairs=pairs,
        scale=full.scale,
        settings={
            "n_lambda": int(full.lambdas.size),
            "lambda_ratio": lambda_ratio,
            "standardize": standardize,
            "tol": tol,
        },
    )


def kkt_violation(path: LassoPath, dm: DesignMatrix, z) -> np.ndarray:
    """Largest KKT violation at each lambda, measured on the standardized columns."""
    X = np.asarray(dm.matrix, dtype=float)
    z = np.asarray(z, dtype=float)
    pf = np.asarray(dm.penalty_factor, dtype=float)
    n = X.shape[0]
    Xs = X / path.scale
    out = np.empty(path.lambdas.size)
    for k, lam in enumerate(path.lambdas):
        b = path.coef[k] * path.scale
        g = Xs.T @ (z - expit(Xs @ b)) / n
        nz = b != 0
        viol = np.where(
            nz,
            np.abs(g - lam * pf * np.sign(b)),
            np.maximum(np.abs(g) - lam * pf, 0.0),
        )
        out[k] = viol.max()
    return out


def post_lasso_refit(
    dm: DesignMatrix,
    z,
    selected,
    tol: float = SCORE_TOL,
    max_iter: int = MAX_ITER,
) -> tuple[LogisticFit, DesignMatrix]:
    """Unpenalized ML refit on all mains plus the selected interactions.

    Returns the fit together with the reduced design it was fitted on.
    """
    reduced = dm.reduce(selected)
    return fit_logistic_irls(reduced, z, tol=tol, max_iter=max_iter), reduced
