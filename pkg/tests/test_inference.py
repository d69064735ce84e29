import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from owsga.data import AnalysisDataset, build_design, enumerate_cells, overall_cell
from owsga.glm import fit_logistic_irls
from owsga.inference import InferenceConfig, bootstrap_ci, sandwich_se, wald_ci
from owsga.simulation import ScenarioConfig, generate_dataset, run_scenario, true_estimands
from owsga.weighting import OW, WeightSet, compute_weights, unit_weights

from conftest import make_dataset


def test_sandwich_hand_example():
    ds = AnalysisDataset.from_arrays([0.0, 2.0, 1.0, 1.0], [1, 1, 0, 0], [[0.0], [1.0], [2.0], [3.0]])
    assert sandwich_se(ds, unit_weights(ds), overall_cell(ds)) == pytest.approx(np.sqrt(0.5))


def test_sandwich_zero_for_armwise_constant_outcome(small_ds):
    y = np.where(small_ds.z == 1, 2.0, -1.0)
    ds = AnalysisDataset.from_arrays(y, small_ds.z, small_ds.X, None,
                                     {v.name: v.labels() for v in small_ds.subgroup_vars})
    ws = compute_weights(np.random.default_rng(0).uniform(0.1, 0.9, ds.n), ds.z, "ow")
    for cell in enumerate_cells(ds):
        assert sandwich_se(ds, ws, cell) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_sandwich_scale_invariant(c, seed):
    ds = make_dataset(n=150, seed=seed % 20)
    w = np.random.default_rng(seed).uniform(0.1, 3.0, ds.n)
    ws = WeightSet(w, ds.z, np.full(ds.n, 0.5), OW)
    for cell in enumerate_cells(ds):
        assert sandwich_se(ds, ws.scaled(c), cell) == pytest.approx(sandwich_se(ds, ws, cell), rel=1e-9)


def test_sandwich_needs_two_per_arm():
    ds = AnalysisDataset.from_arrays([0.0, 2.0, 1.0], [1, 0, 0], [[0.0], [1.0], [2.0]])
    assert np.isnan(sandwich_se(ds, unit_weights(ds), overall_cell(ds)))


def test_wald_interval():
    lo, hi = wald_ci(1.0, 0.5)
    assert (lo, hi) == pytest.approx((1.0 - 1.959964 * 0.5, 1.0 + 1.959964 * 0.5), rel=1e-6)


def test_bootstrap_constant_outcome():
    ds = make_dataset(n=200, y=np.full(200, 4.0))
    e = np.full(ds.n, 0.4)
    res = bootstrap_ci(ds, e, "ow", overall_cell(ds), InferenceConfig("bootstrap", B=200, seed=1))
    assert (res.ci_low, res.ci_high) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert res.se == pytest.approx(0.0, abs=1e-12)


def test_bootstrap_deterministic(small_ds):
    e = np.random.default_rng(2).uniform(0.2, 0.8, small_ds.n)
    cfg = InferenceConfig("bootstrap", B=200, seed=9)
    cell = enumerate_cells(small_ds)[0]
    a = bootstrap_ci(small_ds, e, "ow", cell, cfg)
    b = bootstrap_ci(small_ds, e, "ow", cell, cfg)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)
    c = bootstrap_ci(small_ds, e, "ow", cell, InferenceConfig("bootstrap", B=200, seed=10))
    assert not np.array_equal(a.estimates, c.estimates)


def test_bootstrap_redraws_when_an_arm_vanishes():
    # a cell with a single treated unit loses it in many resamples
    rng = np.random.default_rng(0)
    n = 60
    z = np.r_[np.ones(30), np.zeros(30)].astype(int)
    g = np.array(["a"] * n)
    g[[0, 30, 31, 32, 33]] = "b"
    ds = AnalysisDataset.from_arrays(rng.normal(size=n), z, rng.normal(size=(n, 1)), None, {"g": g})
    cell = [c for c in enumerate_cells(ds) if c.label == "g=b"][0]
    res = bootstrap_ci(ds, np.full(n, 0.5), "ipw", cell, InferenceConfig("bootstrap", B=100, seed=0))
    assert res.n_discarded > 0
    assert np.isfinite(res.estimates).all()


def test_bootstrap_agrees_with_sandwich_roughly(small_ds):
    e = np.random.default_rng(2).uniform(0.2, 0.8, small_ds.n)
    ws = compute_weights(e, small_ds.z, "ow")
    cell = overall_cell(small_ds)
    res = bootstrap_ci(small_ds, e, "ow", cell, InferenceConfig("bootstrap", B=1000, seed=3))
    assert res.se / sandwich_se(small_ds, ws, cell) == pytest.approx(1.0, abs=0.15)


def test_sandwich_bootstrap_ratio_over_replicates():
    # 100 replicates of the default scenario; propensities from the ML fit on the true design
    cfg = ScenarioConfig()
    ratios = []
    for rep in range(100):
        ds, _ = generate_dataset(cfg, [31, rep])
        e = fit_logistic_irls(build_design(ds, "all"), ds.z).propensity
        ws = compute_weights(e, ds.z, "ow")
        for cell in enumerate_cells(ds):
            boot = bootstrap_ci(ds, e, "ow", cell, InferenceConfig("bootstrap", B=200, seed=rep))
            ratios.append(sandwich_se(ds, ws, cell) / boot.se)
    assert 0.9 <= np.mean(ratios) <= 1.1


def test_sandwich_calibrated_when_propensity_known():
    # with the true propensity nothing is estimated, so the fixed-weight sandwich should track the replicate SD
    cfg = ScenarioConfig(beta_sz=(0.0, 0.0), n_replicates=200, seed=66)
    res = run_scenario(cfg, ["true-ps+ow"], truth=true_estimands(cfg, mc_draws=10**5, seed=66))
    s = res.summary.set_index("cell")
    # a 200-replicate SD carries about 5% relative error, hence the 0.12 band
    for cell in ("Overall", "S1=1", "S2=1"):
        assert s.loc[cell, "mean_se"] / np.sqrt(s.loc[cell, "emp_var"]) == pytest.approx(1.0, abs=0.12)


@pytest.mark.parametrize("kwargs", [dict(method="jackknife"), dict(method="bootstrap", B=10),
                                    dict(level=1.0), dict(method="bootstrap", ci_type="bca")])
def test_inference_config_validation(kwargs):
    with pytest.raises(ValueError):
        InferenceConfig(**kwargs)
