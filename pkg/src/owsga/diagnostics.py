"""Subgroup balance diagnostics and the Connect-S grid.

ASMD uses the weighted mean difference (weights normalized per arm within
the cell) divided by the unweighted pooled SD ``sqrt((s1^2 + s0^2) / 2)``,
where ``s_z^2`` are the within-cell per-arm sample variances (ddof=1).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import AnalysisDataset, SubgroupCell, enumerate_cells
from .weighting import WeightSet

DEFAULT_THRESHOLDS = (0.05, 0.10, 0.20)
POOLED_SD_CONVENTION = "unweighted within-cell sqrt((s1^2 + s0^2)/2), ddof=1"


def _arm_var(x: np.ndarray) -> np.ndarray:
    if x.shape[0] < 2:
        return np.zeros(x.shape[1:])
    return x.var(axis=0, ddof=1)


def cell_balance(ds: AnalysisDataset, weights: np.ndarray, cell: SubgroupCell):
    """Weighted arm means and pooled SD for every covariate in one cell.

    Returns ``(mean_treated, mean_control, pooled_sd)`` as length-P arrays,
    or ``None`` if an arm is empty.
    """
    if cell.degenerate:
        return None
    m = cell.members
    X, z, w = ds.X[m], ds.z[m], weights[m]
    t = z == 1
    w1, w0 = w[t], w[~t]
    mean1 = w1 @ X[t] / w1.sum()
    mean0 = w0 @ X[~t] / w0.sum()
    sd = np.sqrt((_arm_var(X[t]) + _arm_var(X[~t])) / 2.0)
    return mean1, mean0, sd


def _standardize_diff(diff: np.ndarray, sd: np.ndarray) -> np.ndarray:
    out = np.full(diff.shape, np.nan)
    ok = sd > 0
    out[ok] = np.abs(diff[ok]) / sd[ok]
    out[~ok & (diff == 0)] = 0.0
    return out


def asmd_vector(ds: AnalysisDataset, weights: np.ndarray, cell: SubgroupCell) -> np.ndarray:
    """ASMD for every covariate; NaN marks an undefined (degenerate) value."""
    stats = cell_balance(ds, weights, cell)
    if stats is None:
        return np.full(ds.P, np.nan)
    mean1, mean0, sd = stats
    return _standardize_diff(mean1 - mean0, sd)


def asmd(ds: AnalysisDataset, ws: WeightSet, cell: SubgroupCell, p: int) -> float:
    return float(asmd_vector(ds, ws.weights, cell)[p])


def variance_inflation(ws: WeightSet | np.ndarray, cell: SubgroupCell, z=None) -> float:
    """Kish-style variance inflation of the cell's weights; NaN for an empty arm."""
    if isinstance(ws, WeightSet):
        w, z = ws.weights, ws.z
    else:
        w = np.asarray(ws, dtype=float)
    if cell.degenerate:
        return float("nan")
    wc = w[cell.members]
    zc = np.asarray(z)[cell.members]
    total = 0.0
    for arm in (0, 1):
        wa = wc[zc == arm]
        total += (wa ** 2).sum() / wa.sum() ** 2
    return float(total / (1.0 / cell.n_treated + 1.0 / cell.n_control))


def target_alignment(ds: AnalysisDataset, ws: WeightSet, cell: SubgroupCell, p: int, h_hat) -> float:
    """Distance between the treated weighted mean and the h-weighted cell mean of covariate p."""
    m = cell.members
    z = ds.z[m]
    if cell.n_treated == 0 or cell.n_members == 0:
        return float("nan")
    x = ds.X[m, p]
    w = ws.weights[m]
    h = np.asarray(h_hat, dtype=float)[m]
    treated = np.dot(w[z == 1], x[z == 1]) / w[z == 1].sum()
    target = np.dot(h, x) / h.sum()
    return float(abs(treated - target))


def shade_bin(value: float, thresholds=DEFAULT_THRESHOLDS) -> int:
    """1 = best balance ... len(thresholds)+1 = worst; 0 marks degenerate."""
    if value is None or math.isnan(value):
        return 0
    return 1 + int(np.searchsorted(np.asarray(thresholds), value, side="right"))


@dataclass(frozen=True)
class BalanceCell:
    cell: str
    covariate: str
    asmd: float
    mean_treated: float
    mean_control: float
    pooled_sd: float
    bin: int

    @property
    def degenerate(self) -> bool:
        return self.bin == 0


@dataclass
class ConnectSGrid:
    rows: list[str]
    covariates: list[str]
    cells: list[list[BalanceCell]]
    vi: list[float]
    n: list[int]
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.covariates)

    def asmd_matrix(self) -> np.ndarray:
        return np.array([[c.asmd for c in row] for row in self.cells])

    def max_asmd(self) -> np.ndarray:
        with np.errstate(all="ignore"):
            return np.nanmax(self.asmd_matrix(), axis=1)

    def config_hash(self) -> str:
        blob = json.dumps(
            {"thresholds": list(self.thresholds), "label": self.label,
             "pooled_sd": POOLED_SD_CONVENTION, **self.meta},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["cell", "covariate", "asmd", "bin", "mean_treated", "mean_control",
                         "pooled_sd", "vi", "n"])
        for row, vi, n in zip(self.cells, self.vi, self.n):
            for c in row:
                writer.writerow([c.cell, c.covariate, _fmt(c.asmd), c.bin, _fmt(c.mean_treated),
                                 _fmt(c.mean_control), _fmt(c.pooled_sd), _fmt(vi), n])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def build_connect_s(
    ds: AnalysisDataset,
    ws: WeightSet,
    cells: list[SubgroupCell] | None = None,
    thresholds=DEFAULT_THRESHOLDS,
    label: str = "",
) -> ConnectSGrid:
    if cells is None:
        cells = enumerate_cells(ds)
    overall = [c for c in cells if c.r is None]
    cells = [c for c in cells if c.r is not None] + overall
    grid_cells, vis, ns = [], [], []
    for cell in cells:
        stats = cell_balance(ds, ws.weights, cell)
        row = []
        for p, name in enumerate(ds.covariate_names):
            if stats is None:
                row.append(BalanceCell(cell.label, name, float("nan"), float("nan"),
                                       float("nan"), float("nan"), 0))
                continue
            mean1, mean0, sd = stats
            value = float(_standardize_diff(np.array([mean1[p] - mean0[p]]), np.array([sd[p]]))[0])
            row.append(BalanceCell(cell.label, name, value, float(mean1[p]), float(mean0[p]),
                                   float(sd[p]), shade_bin(value, thresholds)))
        grid_cells.append(row)
        vis.append(variance_inflation(ws, cell))
        ns.append(cell.n_members)
    return ConnectSGrid(
        rows=[c.label for c in cells],
        covariates=list(ds.covariate_names),
        cells=grid_cells,
        vi=vis,
        n=ns,
        thresholds=tuple(thresholds),
        label=label or ws.source,
        meta={"weights": ws.source, "tilting": ws.tilt.kind},
    )


_LIGHT = (240, 244, 250)
_DARK = (11, 42, 91)


def _shade(b: int, n_bins: int) -> str:
    t = (b - 1) / max(n_bins - 1, 1)
    rgb = [round(lo + t * (hi - lo)) for lo, hi in zip(_LIGHT, _DARK)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def render_svg(grid: ConnectSGrid, path=None, header_comment: str | None = None) -> str:
    """Render the grid as a standalone SVG; output depends only on the grid."""
    n_rows, n_cols = grid.shape
    cell_w, cell_h = 26, 24
    left = 12 + 7 * max([len(r) for r in grid.rows] + [8])
    top = 40 + 6 * max([len(c) for c in grid.covariates] + [4])
    right = 150
    width = left + n_cols * cell_w + right
    legend_y = top + n_rows * cell_h + 20
    height = legend_y + 40

    n_bins = len(grid.thresholds) + 1
    bounds = ["0"] + [f"{t:g}" for t in grid.thresholds] + ["inf"]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f"<!-- config_hash={grid.config_hash()} thresholds={','.join(f'{t:g}' for t in grid.thresholds)} "
        f"pooled_sd={POOLED_SD_CONVENTION} -->",
    ]
    if header_comment:
        out.append(f"<!-- {escape(header_comment)} -->")
    out.append(f'<text x="{left}" y="16" font-size="13">{escape(grid.label)}</text>')
    for j, name in enumerate(grid.covariates):
        x = left + j * cell_w + cell_w // 2
        out.append(
            f'<text x="{x}" y="{top - 8}" transform="rotate(-60 {x} {top - 8})">{escape(name)}</text>'
        )
    x_end = left + n_cols * cell_w + 8
    out.append(f'<text x="{x_end}" y="{top - 8}">N</text>')
    out.append(f'<text x="{x_end + 60}" y="{top - 8}">VI</text>')
    for i, (row_name, row) in enumerate(zip(grid.rows, grid.cells)):
        y = top + i * cell_h + cell_h // 2
        out.append(f'<text x="6" y="{y + 4}">{escape(row_name)}</text>')
        for j, bc in enumerate(row):
            cx = left + j * cell_w + cell_w // 2
            if bc.degenerate:
                out.append(
                    f'<g class="degenerate"><line x1="{cx - 5}" y1="{y - 5}" x2="{cx + 5}" y2="{y + 5}" stroke="#c00"/>'
                    f'<line x1="{cx - 5}" y1="{y + 5}" x2="{cx + 5}" y2="{y - 5}" stroke="#c00"/></g>'
                )
            else:
                out.append(
                    f'<circle class="data" cx="{cx}" cy="{y}" r="9" fill="{_shade(bc.bin, n_bins)}" '
                    f'stroke="#333" stroke-width="0.6"><title>{escape(bc.cell)} / {escape(bc.covariate)}: '
                    f'ASMD={bc.asmd:.3f}</title></circle>'
                )
        vi = grid.vi[i]
        vi_text = "NA" if math.isnan(vi) else f"{vi:.2f}"
        out.append(f'<text x="{x_end}" y="{y + 4}">{grid.n[i]}</text>')
        out.append(f'<text class="vi" x="{x_end + 60}" y="{y + 4}">{vi_text}</text>')
    for b in range(1, len(bounds)):
        lx = left + (b - 1) * 90
        out.append(f'<circle class="legend" cx="{lx + 8}" cy="{legend_y}" r="7" fill="{_shade(b, n_bins)}" stroke="#333" stroke-width="0.6"/>')
        out.append(f'<text x="{lx + 20}" y="{legend_y + 4}">ASMD {bounds[b - 1]}-{bounds[b]}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
