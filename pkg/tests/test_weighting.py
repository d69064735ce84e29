import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from owsga.data import AnalysisDataset, build_design, enumerate_cells, overall_cell
from owsga.exceptions import DegenerateCellError
from owsga.glm import fit_logistic_irls
from owsga.weighting import IPW, OW, compute_weights, estimate_effect, hajek, tilting, unit_weights

from conftest import make_dataset


@pytest.mark.parametrize("e, z, ow, ipw", [(0.5, 1, 0.5, 2.0), (0.8, 1, 0.2, 1.25), (0.8, 0, 0.8, 5.0)])
def test_single_unit_weights(e, z, ow, ipw):
    assert compute_weights([e], [z], "ow").weights[0] == pytest.approx(ow)
    assert compute_weights([e], [z], "ipw").weights[0] == pytest.approx(ipw)


def test_labels():
    assert OW.estimand == "S-ATO" and IPW.estimand == "S-ATE"
    assert tilting("OW") == OW
    with pytest.raises(ValueError):
        tilting("trim")


def test_propensity_must_be_interior():
    with pytest.raises(ValueError):
        compute_weights([0.0, 0.5], [1, 0], "ow")


def test_clipping_is_recorded():
    ws = compute_weights([0.001, 0.5], [1, 0], "ipw", clip=0.01)
    assert ws.weights[0] == pytest.approx(100.0)
    assert ws.clip == 0.01 and ws.warnings


def _tiny():
    # treated (y, w) = (2, 1), (4, 3); control (1, 1), (3, 1)
    y = np.array([2.0, 4.0, 1.0, 3.0])
    z = np.array([1, 1, 0, 0])
    ds = AnalysisDataset.from_arrays(y, z, [[0.0], [1.0], [2.0], [3.0]])
    return ds, np.array([1.0, 3.0, 1.0, 1.0])


def test_hajek_hand_example():
    ds, w = _tiny()
    assert hajek(ds.y, ds.z, w) == pytest.approx(1.5)
    ws = compute_weights(np.full(4, 0.5), ds.z, "ow").__class__(w, ds.z, np.full(4, 0.5), OW)
    est = estimate_effect(ds, ws, overall_cell(ds))
    assert est.estimate == pytest.approx(1.5)
    assert est.estimand == "S-ATO"


def test_constant_outcome_gives_zero(small_ds):
    ds = AnalysisDataset.from_arrays(np.full(small_ds.n, 3.0), small_ds.z, small_ds.X, None,
                                     {v.name: v.labels() for v in small_ds.subgroup_vars})
    ws = compute_weights(np.random.default_rng(0).uniform(0.2, 0.8, ds.n), ds.z, "ipw")
    for cell in enumerate_cells(ds):
        assert estimate_effect(ds, ws, cell).estimate == pytest.approx(0.0, abs=1e-12)


def test_degenerate_cell_raises():
    rng = np.random.default_rng(0)
    n = 40
    z = np.arange(n) % 2
    g = np.where(z == 1, "a", "b")
    g[0] = "a"
    ds = AnalysisDataset.from_arrays(rng.normal(size=n), z, rng.normal(size=(n, 1)), None, {"g": g})
    cell = [c for c in enumerate_cells(ds) if c.label == "g=b"][0]
    with pytest.raises(DegenerateCellError):
        estimate_effect(ds, unit_weights(ds), cell)


def test_unit_weights_are_plain_difference(small_ds):
    cell = overall_cell(small_ds)
    est = estimate_effect(small_ds, unit_weights(small_ds), cell)
    y, z = small_ds.y, small_ds.z
    assert est.estimate == pytest.approx(y[z == 1].mean() - y[z == 0].mean())


def test_zero_bias_with_additive_outcome():
    # outcome linear in the propensity design plus a level-specific effect:
    # full-interaction ML + OW balances every term, so the estimate is exact
    base = make_dataset(P=3, levels=(("g", 3),), seed=2)
    dm = build_design(base, "all")
    fit = fit_logistic_irls(dm, base.z)
    rng = np.random.default_rng(1)
    tau = 1.0 + 0.7 * base.S[:, 1] - 0.4 * base.S[:, 2]
    y = dm.matrix @ rng.normal(size=dm.shape[1]) + base.z * tau
    ds = AnalysisDataset.from_arrays(y, base.z, base.X, None, {"g": base.subgroup_vars[0].labels()})
    ws = compute_weights(fit.propensity, ds.z, "ow")
    for cell in enumerate_cells(ds):
        m = cell.members
        t = ds.z[m] == 1
        target = np.dot(ws.weights[m][t], tau[m][t]) / ws.weights[m][t].sum()
        assert abs(estimate_effect(ds, ws, cell).estimate - target) <= 1e-8


weights_st = arrays(float, 12, elements=st.floats(0.05, 20.0))


@settings(max_examples=60, deadline=None)
@given(weights_st, st.floats(0.01, 100.0))
def test_hajek_scale_invariant(w, c):
    ds, _ = _tiny()
    y = np.tile(ds.y, 3) + np.arange(12) * 0.1
    z = np.tile(ds.z, 3)
    assert hajek(y, z, w * c) == pytest.approx(hajek(y, z, w), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 30, elements=st.floats(0.01, 0.99)), st.integers(0, 10**6))
def test_weight_ranges_and_normalization(e, seed):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, 30)
    z[:2] = (0, 1)
    ow = compute_weights(e, z, "ow")
    ipw = compute_weights(e, z, "ipw")
    assert np.all((ow.weights > 0) & (ow.weights < 1))
    assert np.all(ipw.weights >= 1)
    ds = AnalysisDataset.from_arrays(rng.normal(size=30), z, rng.normal(size=(30, 1)))
    cell = overall_cell(ds)
    wn = ow.normalized(cell)
    assert wn[z == 1].sum() == pytest.approx(1.0)
    assert wn[z == 0].sum() == pytest.approx(1.0)
    assert "Overall" in ow.normalization
