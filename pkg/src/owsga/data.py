"""Observational datasets, subgroup cells, and interaction design matrices."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .config import AnalysisConfig
from .exceptions import DataError


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _sort_levels(values: Iterable[str]) -> list[str]:
    values = list(values)
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


@dataclass(frozen=True)
class SubgroupVariable:
    """A categorical variable with its ordered levels and per-unit level codes."""

    name: str
    levels: tuple[str, ...]
    codes: np.ndarray

    def labels(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[self.codes]


@dataclass(frozen=True)
class AnalysisDataset:
    y: np.ndarray
    z: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]
    subgroup_vars: tuple[SubgroupVariable, ...]
    S: np.ndarray
    S_labels: tuple[tuple[str, str], ...]
    external_ps: np.ndarray | None = None

    @classmethod
    def from_arrays(
        cls,
        y,
        z,
        X,
        covariate_names: Sequence[str] | None = None,
        subgroups: dict[str, Sequence] | None = None,
        levels: dict[str, Sequence[str]] | None = None,
        external_ps=None,
    ) -> AnalysisDataset:
        """Validate arrays and expand each subgroup variable to level indicators.

        ``subgroups`` maps variable name to per-unit labels. Levels are the
        observed labels in sorted order unless ``levels`` declares them, in
        which case unobserved levels are kept as empty cells.
        """
        y = np.asarray(y, dtype=float)
        z_raw = np.asarray(z, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        if z_raw.shape != (n,) or X.shape[0] != n:
            raise DataError("outcome, treatment and covariates must have the same number of rows")
        if np.isnan(y).any() or np.isnan(z_raw).any() or np.isnan(X).any():
            raise DataError("missing values are not allowed")
        if not np.isin(z_raw, (0.0, 1.0)).all():
            raise DataError("treatment must be binary 0/1")
        if z_raw.min() == z_raw.max():
            raise DataError("treatment must contain both 0 and 1")
        if covariate_names is None:
            covariate_names = [f"X{p + 1}" for p in range(X.shape[1])]
        if len(covariate_names) != X.shape[1]:
            raise DataError("covariate_names does not match the number of covariate columns")
        constant = [name for name, col in zip(covariate_names, X.T) if np.ptp(col) == 0]
        if constant:
            raise DataError(f"constant covariate(s): {', '.join(constant)}")

        variables = []
        blocks = []
        S_labels = []
        for name, labels in (subgroups or {}).items():
            labels = np.asarray([str(v) for v in labels], dtype=object)
            if labels.shape != (n,):
                raise DataError(f"subgroup {name!r} has the wrong length")
            observed = _sort_levels(set(labels))
            lv = list(levels[name]) if levels and name in levels else observed
            unknown = set(observed) - set(lv)
            if unknown:
                raise DataError(f"subgroup {name!r} has undeclared levels {sorted(unknown)}")
            index = {level: k for k, level in enumerate(lv)}
            codes = np.array([index[v] for v in labels], dtype=int)
            variables.append(SubgroupVariable(name, tuple(lv), _frozen(codes, int)))
            blocks.append((codes[:, None] == np.arange(len(lv))[None, :]).astype(float))
            S_labels.extend((name, level) for level in lv)
        S = np.hstack(blocks) if blocks else np.zeros((n, 0))

        if external_ps is not None:
            external_ps = np.asarray(external_ps, dtype=float)
            if external_ps.shape != (n,) or np.isnan(external_ps).any():
                raise DataError("external propensity column is malformed")
            if ((external_ps <= 0) | (external_ps >= 1)).any():
                raise DataError("external propensities must lie strictly in (0, 1)")
            external_ps = _frozen(external_ps)

        return cls(
            y=_frozen(y),
            z=_frozen(z_raw, int),
            X=_frozen(X),
            covariate_names=tuple(covariate_names),
            subgroup_vars=tuple(variables),
            S=_frozen(S),
            S_labels=tuple(S_labels),
            external_ps=external_ps,
        )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def R(self) -> int:
        return self.S.shape[1]

    def subgroup_frame(self) -> pd.DataFrame:
        """Collapse the indicators back to one label column per variable."""
        out = {}
        start = 0
        for var in self.subgroup_vars:
            k = len(var.levels)
            block = self.S[:, start:start + k]
            out[var.name] = np.asarray(var.levels, dtype=object)[block.argmax(axis=1)]
            start += k
        return pd.DataFrame(out)

    def with_external_ps(self, ps) -> AnalysisDataset:
        subgroups = {v.name: v.labels() for v in self.subgroup_vars}
        levels = {v.name: v.levels for v in self.subgroup_vars}
        return AnalysisDataset.from_arrays(
            self.y, self.z, self.X, self.covariate_names, subgroups, levels, external_ps=ps
        )


def load_csv(path: str | Path, config: AnalysisConfig) -> AnalysisDataset:
    """Read and validate a comma-delimited UTF-8 file with a header row."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    wanted = [config.outcome, config.treatment, *config.covariates, *config.subgroups]
    if config.ps_model == "external":
        wanted.append(config.ps_column)
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    holes = [c for c in wanted if frame[c].isna().any()]
    if holes:
        raise DataError(f"missing cell(s) in column(s): {', '.join(holes)}")

    def numeric(col: str) -> np.ndarray:
        try:
            return frame[col].astype(float).to_numpy()
        except ValueError as exc:
            raise DataError(f"column {col!r} is not numeric") from exc

    z = numeric(config.treatment)
    if not np.isin(z, (0.0, 1.0)).all():
        raise DataError("treatment must be binary 0/1")
    X = np.column_stack([numeric(c) for c in config.covariates])
    subgroups = {name: frame[name].str.strip().to_numpy() for name in config.subgroups}
    ps = numeric(config.ps_column) if config.ps_model == "external" else None
    return AnalysisDataset.from_arrays(
        numeric(config.outcome), z, X, list(config.covariates), subgroups, external_ps=ps
    )


@dataclass(frozen=True)
class SubgroupCell:
    variable: str
    level: str
    r: int | None
    members: np.ndarray
    n_treated: int
    n_control: int

    @property
    def label(self) -> str:
        return "Overall" if self.r is None else f"{self.variable}={self.level}"

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.n_treated == 0 or self.n_control == 0

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.members] = True
        return m


def overall_cell(ds: AnalysisDataset) -> SubgroupCell:
    n1 = int(ds.z.sum())
    return SubgroupCell("Overall", "", None, _frozen(np.arange(ds.n), int), n1, ds.n - n1)


def enumerate_cells(ds: AnalysisDataset) -> list[SubgroupCell]:
    """One cell per (variable, level) in declaration order, then Overall."""
    cells = []
    for r, (name, level) in enumerate(ds.S_labels):
        members = np.flatnonzero(ds.S[:, r] == 1)
        n1 = int(ds.z[members].sum())
        cells.append(SubgroupCell(name, level, r, _frozen(members, int), n1, members.size - n1))
    cells.append(overall_cell(ds))
    return cells


@dataclass(frozen=True)
class Column:
    kind: str  # intercept | covariate-main | subgroup-main | interaction
    name: str
    p: int | None = None
    r: int | None = None


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    columns: tuple[Column, ...]
    penalty_factor: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def interaction_pairs(self) -> list[tuple[int, int]]:
        return [(c.p, c.r) for c in self.columns if c.kind == "interaction"]

    def interaction_index(self) -> np.ndarray:
        return np.array([k for k, c in enumerate(self.columns) if c.kind == "interaction"], dtype=int)

    def main_index(self) -> np.ndarray:
        return np.array([k for k, c in enumerate(self.columns) if c.kind != "interaction"], dtype=int)

    def take(self, index) -> DesignMatrix:
        index = np.asarray(index, dtype=int)
        return DesignMatrix(
            _frozen(self.matrix[:, index]),
            tuple(self.columns[k] for k in index),
            _frozen(self.penalty_factor[index]),
        )

    def reduce(self, selected: Iterable[tuple[int, int]]) -> DesignMatrix:
        """All main effects plus the listed interaction columns."""
        selected = set(map(tuple, selected))
        known = set(self.interaction_pairs())
        unknown = selected - known
        if unknown:
            raise ValueError(f"interactions not in this design: {sorted(unknown)}")
        keep = [
            k for k, c in enumerate(self.columns)
            if c.kind != "interaction" or (c.p, c.r) in selected
        ]
        return self.take(keep)


def build_design(ds: AnalysisDataset, interactions="all") -> DesignMatrix:
    """Intercept, covariate mains, reference-coded subgroup mains, interactions.

    ``interactions`` is ``"none"``, ``"all"``, or an iterable of ``(p, r)``
    pairs where ``p`` indexes covariates and ``r`` indexes the dataset's
    subgroup indicator columns. The first level of each subgroup variable is
    the reference and never enters the design.
    """
    n = ds.n
    cols = [np.ones(n)]
    meta = [Column("intercept", "(Intercept)")]
    for p, name in enumerate(ds.covariate_names):
        cols.append(ds.X[:, p])
        meta.append(Column("covariate-main", name, p=p))

    included = []
    start = 0
    for var in ds.subgroup_vars:
        for k in range(1, len(var.levels)):
            included.append(start + k)
        start += len(var.levels)
    for r in included:
        var, level = ds.S_labels[r]
        cols.append(ds.S[:, r])
        meta.append(Column("subgroup-main", f"{var}={level}", r=r))

    if isinstance(interactions, str):
        if interactions == "all":
            pairs = [(p, r) for r in included for p in range(ds.P)]
        elif interactions == "none":
            pairs = []
        else:
            raise ValueError(f"unknown interaction selector {interactions!r}")
    else:
        pairs = [tuple(pair) for pair in interactions]
        allowed = {(p, r) for r in included for p in range(ds.P)}
        bad = [pair for pair in pairs if pair not in allowed]
        if bad:
            raise ValueError(f"unknown or reference-level interaction(s): {bad}")

    for p, r in pairs:
        var, level = ds.S_labels[r]
        cols.append(ds.X[:, p] * ds.S[:, r])
        meta.append(Column("interaction", f"{ds.covariate_names[p]}:{var}={level}", p=p, r=r))

    pf = np.array([1.0 if c.kind == "interaction" else 0.0 for c in meta])
    return DesignMatrix(_frozen(np.column_stack(cols)), tuple(meta), _frozen(pf))
