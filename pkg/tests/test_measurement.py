import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rissense import measurement as meas_mod
from rissense.channel import path_gains
from rissense.epoch import make_epoch
from rissense.measurement import (ClutterModel, Measurement, branch_model, clutter_bounds, dump_epoch,
                                  fim_covariance, fim_covariance_dense, generate_measurements, load_epochs,
                                  measurement_bounds, merge_distance, merge_double_bounce,
                                  reference_covariances, true_measurement, wrap_residual)
from rissense.scenario import Scenario

SP = np.array([[40.0, 10.0, 5.0]])
BOX = ([30.0, -30.0, 2.0], [50.0, 50.0, 10.0])


@pytest.fixture
def small_setup(ue):
    # ten T2 pairs keep the O-branch parameters identifiable
    sc = Scenario(ris_shape=(8, 8), n_subcarriers=16, n_transmissions=40)
    return make_epoch(sc, ue, np.random.default_rng(0))


def _model(setup, branch, gain=None, sp=SP):
    p = setup.params(sp)
    g = path_gains(setup.scenario, setup.ue, sp, np.random.default_rng(1))
    if gain is None:
        gain = g.beta[0] if branch == "N" else g.alpha[1]
    return branch_model(setup, p, 1, gain, branch)


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_fim_scales_with_noise(small_setup, branch):
    m = _model(small_setup, branch)
    n0 = small_setup.scenario.noise_psd
    r1 = fim_covariance(m, n0 / 2)
    r4 = fim_covariance(m, 4 * n0 / 2)
    np.testing.assert_allclose(r4, 4 * r1, rtol=1e-9)


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_fim_scales_with_gain(small_setup, branch):
    g = path_gains(small_setup.scenario, small_setup.ue, SP, np.random.default_rng(1))
    gain = g.beta[0] if branch == "N" else g.alpha[1]
    n0 = small_setup.scenario.noise_psd / 2
    r = fim_covariance(_model(small_setup, branch, gain), n0)
    r_half = fim_covariance(_model(small_setup, branch, gain / 2), n0)
    np.testing.assert_allclose(r_half, 4 * r, rtol=1e-6)


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_factored_fim_matches_dense_jacobian(small_setup, branch):
    m = _model(small_setup, branch)
    n0 = small_setup.scenario.noise_psd / 2
    fast = fim_covariance(m, n0)
    dense = fim_covariance_dense(m, n0)
    np.testing.assert_allclose(fast, dense, rtol=1e-6, atol=1e-9 * np.abs(dense).max())
    np.linalg.cholesky(fast)
    np.testing.assert_allclose(fast, fast.T, atol=1e-12 * np.abs(fast).max())


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_finite_difference_step_is_converged(small_setup, branch, monkeypatch):
    m = _model(small_setup, branch)
    n0 = small_setup.scenario.noise_psd / 2
    ref = fim_covariance(m, n0)
    monkeypatch.setattr(meas_mod, "_FD_STEP", 4e-6)
    coarse = fim_covariance(m, n0)
    np.testing.assert_allclose(coarse, ref, rtol=1e-5, atol=1e-9 * np.abs(ref).max())


def test_delay_std_scales_with_bandwidth(ue):
    stds = {}
    for n_sc in (100, 400, 1600):
        sc = Scenario(n_subcarriers=n_sc)
        setup = make_epoch(sc, ue, np.random.default_rng(0))
        stds[n_sc] = np.sqrt(fim_covariance(_model(setup, "N"), sc.noise_psd / 2)[0, 0])
    # fixed transmit power: the delay information grows with the subcarrier-index variance
    for a, b in ((100, 400), (400, 1600)):
        assert stds[a] / stds[b] == pytest.approx(np.sqrt((b * b - 1) / (a * a - 1)), rel=1e-4)
        assert stds[a] / stds[b] == pytest.approx(b / a, rel=1e-3)


def test_zero_gain_is_singular(small_setup):
    with pytest.raises(meas_mod.SingularFIMError):
        fim_covariance(_model(small_setup, "D", 0j), 1.0)
    with pytest.raises(ValueError):
        fim_covariance(_model(small_setup, "D"), 0.0)


def test_unknown_branch(small_setup):
    with pytest.raises(ValueError):
        _model(small_setup, "X")


def test_measurement_dimension_check():
    with pytest.raises(ValueError):
        Measurement(np.zeros(3), np.eye(3), "D")
    Measurement(np.zeros(5), np.eye(5), "R")


def _gains(setup, sps):
    return path_gains(setup.scenario, setup.ue, sps, np.random.default_rng(1))


def test_no_detections_no_clutter(small_setup, sps):
    zero = {b: np.zeros(len(sps)) for b in "DON"}
    out = generate_measurements(small_setup, sps, _gains(small_setup, sps), zero, np.random.default_rng(0),
                                {b: ClutterModel(0.0, [0, 0, 0], [1, 1, 1]) for b in "N"},
                                clutter_cov={"N": np.eye(3)})
    assert all(len(v) == 0 for v in out.sets.values())


def test_noiseless_measurements_equal_true_parameters(small_setup, sps):
    ones = {b: np.ones(len(sps)) for b in "DON"}
    out = generate_measurements(small_setup, sps, _gains(small_setup, sps), ones, np.random.default_rng(0),
                                noise_scale=0.0)
    params = small_setup.params(sps)
    for br, ms in out.sets.items():
        assert len(ms) + out.dropped <= len(sps)
        for m in ms:
            np.testing.assert_array_equal(m.z, wrap_residual(true_measurement(params, m.origin + 1, br)))
            np.linalg.cholesky(m.cov)
    assert sorted(m.origin for m in out.sets["N"]) == [0, 1, 2]


def test_thinning_is_binomial(small_setup, monkeypatch):
    monkeypatch.setattr(meas_mod, "fim_covariance", lambda model, nv: np.eye(model.n_obs))
    dps = {"D": [0.5], "O": [0.0], "N": [0.0]}
    rng = np.random.default_rng(3)
    g = _gains(small_setup, SP)
    n = 10_000
    hits = sum(len(generate_measurements(small_setup, SP, g, dps, rng).sets["D"]) for _ in range(n))
    assert abs(hits - n / 2) < 3 * np.sqrt(n * 0.25)


def test_measurement_noise_matches_covariance(small_setup):
    dps = {"D": [1.0], "O": [0.0], "N": [0.0]}
    g = _gains(small_setup, SP)
    rng = np.random.default_rng(4)
    truth = true_measurement(small_setup.params(SP), 1, "D")
    res = np.array([wrap_residual(generate_measurements(small_setup, SP, g, dps, rng).sets["D"][0].z - truth)
                    for _ in range(2000)])
    cov = fim_covariance(_model(small_setup, "D"), small_setup.scenario.noise_psd / 2)
    np.testing.assert_allclose(np.diag(np.cov(res.T)), np.diag(cov), rtol=0.1)


def test_clutter_counts_and_box():
    model = ClutterModel(3.0, [0.0, -1.0], [2.0, 1.0])
    assert model.volume == 4.0 and model.intensity == 0.75
    rng = np.random.default_rng(0)
    draws = [model.sample(rng) for _ in range(4000)]
    counts = np.array([len(d) for d in draws])
    assert counts.mean() == pytest.approx(3.0, abs=0.1)
    assert counts.var() == pytest.approx(3.0, rel=0.1)
    pts = np.concatenate(draws)
    assert np.all((pts >= model.low) & (pts <= model.high))


@pytest.mark.parametrize("kwargs", [dict(mean=-1.0, low=[0], high=[1]), dict(mean=1.0, low=[0], high=[np.inf]),
                                    dict(mean=1.0, low=[1], high=[1])])
def test_clutter_validation(kwargs):
    with pytest.raises(ValueError):
        ClutterModel(**kwargs)


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_clutter_box_covers_sp_box_image(setup, branch):
    lo, hi = measurement_bounds(setup, *BOX, branch)
    clo, chi = clutter_bounds(setup, *BOX, branch)
    assert np.all(clo <= lo) and np.all(chi >= hi)
    rng = np.random.default_rng(0)
    pts = rng.uniform(BOX[0], BOX[1], size=(200, 3))
    params = setup.params(pts)
    z = np.array([true_measurement(params, l, branch) for l in range(1, 201)])
    delay = 2 if branch != "N" else 0
    assert np.all((z[:, delay] >= lo[delay]) & (z[:, delay] <= hi[delay]))
    assert np.all((z >= clo) & (z <= chi))


def test_reference_covariances_are_spd(setup):
    covs = reference_covariances(setup, [40.0, 10.0, 6.0])
    for br, c in covs.items():
        np.linalg.cholesky(c)
        assert c.shape == ((3, 3) if br == "N" else (5, 5))


def _m(z, cov, br, origin=-1):
    return Measurement(np.asarray(z, float), np.asarray(cov, float), br, origin)


def test_merge_identical_pair():
    r = np.diag([1e-4, 2e-4, 1e-18, 3e-4, 4e-4])
    z = np.array([0.1, 0.2, 1e-7, -0.3, 0.05])
    out = merge_double_bounce([_m(z, r, "D", 2)], [_m(z, r, "O", 2)])
    assert len(out) == 1 and out[0].branch == "R" and out[0].origin == 2
    np.testing.assert_allclose(out[0].z, z)
    np.testing.assert_allclose(out[0].cov, r / 2)


def test_merge_rejects_distant_pair():
    r = np.eye(5)
    zd = np.zeros(5)
    zo = np.array([0.0, 0.0, 10.0, 0.0, 0.0])
    assert merge_distance(_m(zd, r, "D"), _m(zo, r, "O")) == pytest.approx(100.0)
    out = merge_double_bounce([_m(zd, r, "D")], [_m(zo, r, "O")], 36.0)
    assert len(out) == 2 and all(m.branch == "R" for m in out)


def test_merge_wraps_azimuth():
    r = np.eye(5) * 1e-2
    zd = np.array([np.pi - 0.01, 0.0, 0.0, 0.0, 0.0])
    zo = np.array([-np.pi + 0.01, 0.0, 0.0, 0.0, 0.0])
    out = merge_double_bounce([_m(zd, r, "D")], [_m(zo, r, "O")])
    assert len(out) == 1
    assert abs(abs(out[0].z[0]) - np.pi) < 1e-9


def test_merge_is_one_to_one():
    r = np.eye(5)
    z = np.zeros(5)
    out = merge_double_bounce([_m(z, r, "D"), _m(z + 0.1, r, "D")], [_m(z, r, "O")])
    assert len(out) == 2
    np.testing.assert_allclose(out[0].z, z)


vec5 = st.lists(st.floats(-3, 3), min_size=5, max_size=5).map(np.array)


@given(st.lists(vec5, max_size=4), st.lists(vec5, max_size=4), st.floats(0.1, 100))
@settings(max_examples=100, deadline=None)
def test_merge_counting(zd, zo, thr):
    r = np.eye(5) * 0.5
    out = merge_double_bounce([_m(z, r, "D") for z in zd], [_m(z, r, "O") for z in zo], thr)
    n_merged = sum(1 for m in out if np.allclose(m.cov, r / 2))
    assert len(out) == len(zd) + len(zo) - n_merged
    assert len(out) <= len(zd) + len(zo)
    for m in out:
        assert np.all(np.abs(m.z[[0, 3]]) <= np.pi)


@given(st.lists(st.floats(-20, 20), min_size=5, max_size=5))
def test_wrap_residual(dz):
    w = wrap_residual(dz)
    assert np.all((w[[0, 3]] >= -np.pi) & (w[[0, 3]] < np.pi))
    np.testing.assert_array_equal(w[[1, 2, 4]], np.asarray(dz)[[1, 2, 4]])


def test_jsonl_round_trip():
    sets = {"D": [_m(np.arange(5) * 0.1, np.eye(5), "D", 3)], "O": [], "N": [_m([1e-7, 0.2, 0.1], np.eye(3), "N")]}
    fh = io.StringIO()
    dump_epoch(fh, 2, 7, sets)
    dump_epoch(fh, 2, 8, {"D": [], "O": [], "N": []})
    fh.seek(0)
    recs = list(load_epochs(fh))
    assert [(r["run"], r["epoch"]) for r in recs] == [(2, 7), (2, 8)]
    back = recs[0]["sets"]
    assert back["D"][0].origin == 3 and back["N"][0].origin == -1
    np.testing.assert_array_equal(back["D"][0].z, sets["D"][0].z)
    np.testing.assert_array_equal(back["N"][0].cov, sets["N"][0].cov)


def test_default_measurement_covariances_spd(setup, sps):
    g = path_gains(setup.scenario, setup.ue, sps, np.random.default_rng(1))
    ones = {b: np.ones(len(sps)) for b in "DON"}
    out = generate_measurements(setup, sps, g, ones, np.random.default_rng(0))
    n = 0
    for ms in out.sets.values():
        for m in ms:
            np.linalg.cholesky(m.cov)
            n += 1
    assert n + out.dropped == 3 * len(sps)
