import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import ive
from scipy.stats import ncx2

from rissense.channel import delay_response, steering_vector
from rissense.detection import (DetectionConfig, detection_probability, dp_grid, dp_map, empirical_ccdf,
                                epoch_dps, link_budget, link_budget_sweep, marcum_q1, matched_energy,
                                path_detection_stats, reference_dp_scenario, segment_points)
from rissense.epoch import make_epoch

# [DERIVED] Q_1(1, 1) by quadrature of the Marcum integral and ncx2.sf(1, 2, 1)
Q11 = 0.7328798037968202


def marcum_quad(a, b):
    """Marcum integral by adaptive quadrature, in exponentially scaled form."""
    if b == 0:
        return 1.0
    f = lambda x: x * np.exp(-0.5 * (x - a) ** 2) * ive(0, a * x)  # noqa: E731
    upper = max(a, b) + 40.0
    val, _ = quad(f, b, upper, epsabs=1e-13, epsrel=1e-12, limit=500, points=[a] if b < a < upper else None)
    return val


def test_q11_value():
    assert marcum_q1(1.0, 1.0) == pytest.approx(Q11, abs=1e-12)
    assert marcum_quad(1.0, 1.0) == pytest.approx(Q11, abs=1e-12)
    assert ncx2.sf(1.0, 2, 1.0) == pytest.approx(Q11, abs=1e-12)


def test_marcum_grid_against_quadrature():
    grid = np.linspace(0.0, 10.0, 20)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    got = marcum_q1(a, b)
    oracle = np.vectorize(marcum_quad)(a, b)
    assert np.max(np.abs(got - oracle)) < 1e-9


@given(st.floats(0, 30), st.floats(0.01, 30))
@settings(max_examples=300, deadline=None)
def test_marcum_against_ncx2(a, b):
    # scipy's ncx2 overflows for b near zero, which the edge-case test covers
    assert marcum_q1(a, b) == pytest.approx(ncx2.sf(b * b, 2, a * a), abs=1e-9)


def test_marcum_edge_cases():
    gamma = -2 * np.log(1e-3)
    assert marcum_q1(0.0, np.sqrt(gamma)) == pytest.approx(1e-3, abs=1e-12)
    # gamma rounded to 13.8155 shifts the floor by 5e-9
    assert marcum_q1(0.0, np.sqrt(13.8155)) == pytest.approx(np.exp(-13.8155 / 2), abs=1e-12)
    assert marcum_q1(0.0, np.sqrt(13.8155)) == pytest.approx(1e-3, abs=1e-8)
    assert marcum_q1(3.0, 0.0) == 1.0
    assert marcum_q1(50.0, 1.0) == 1.0
    assert marcum_q1(1.0, 50.0) == 0.0
    with pytest.raises(ValueError):
        marcum_q1(-1.0, 1.0)


def test_marcum_broadcasts():
    out = marcum_q1(np.array([0.0, 1.0, 2.0]), 1.0)
    assert out.shape == (3,) and np.all(np.diff(out) > 0)


@pytest.mark.parametrize("p_fa", [1e-3, 1e-2, 0.3])
def test_zero_gain_gives_false_alarm_rate(p_fa):
    cfg = DetectionConfig(p_fa)
    assert cfg.gamma == pytest.approx(-2 * np.log(p_fa))
    assert detection_probability(0.0, 1e3, 1e-20, cfg) == pytest.approx(p_fa, abs=1e-9)


@pytest.mark.parametrize("p_fa", [0.0, 1.0, -0.1])
def test_bad_false_alarm_rate(p_fa):
    with pytest.raises(ValueError):
        DetectionConfig(p_fa)


def test_large_noncentrality_detects():
    assert detection_probability(1.0, 1e4, 1.0) == pytest.approx(1.0)


def test_detection_rejects_bad_inputs():
    with pytest.raises(ValueError):
        detection_probability(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        detection_probability(1.0, 1.0, 0.0)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 100), st.floats(0.1, 10))
@settings(max_examples=200, deadline=None)
def test_detection_monotone(g1, g2, energy, n0):
    lo, hi = sorted((g1, g2))
    d_lo = detection_probability(lo, energy, n0)
    d_hi = detection_probability(hi, energy, n0)
    assert d_lo <= d_hi + 1e-12
    assert d_lo >= 1e-3 - 1e-12
    assert detection_probability(hi, energy, 2 * n0) <= d_hi + 1e-12
    assert detection_probability(hi, 2 * energy, n0) >= d_hi - 1e-12


def brute_force_energy(setup, aod_ris, aod_ue, tau, branch):
    """Sum over pairs and subcarriers of the hypothetical single-path signal power."""
    sc = setup.scenario
    lam = sc.wavelength
    a_l = steering_vector(sc.ue_array, aod_ue, lam)
    nu = setup.nu(aod_ris[None])[:, 0]
    d = delay_response(tau, sc.n_subcarriers, sc.subcarrier_spacing)
    n_t1 = setup.plan.n_t1
    total = 0.0
    for t, f in enumerate(setup.precoders):
        for s in range(sc.n_subcarriers):
            if branch == "D" and t < n_t1:
                p = (setup.a_u0 @ f) * nu[t] * (setup.combiner.perp.conj().T @ a_l) * d[s]
            elif branch == "O" and t >= n_t1:
                p = np.sqrt(sc.ue_array.size) * nu[t] * (a_l @ f) * d[s]
            elif branch == "N":
                p = (a_l @ f) * a_l * d[s]
            else:
                continue
            total += np.sum(np.abs(p) ** 2)
    return total


@pytest.mark.parametrize("branch", ["D", "O", "N"])
def test_matched_energy_brute_force(small_scenario, ue, branch):
    setup = make_epoch(small_scenario, ue, np.random.default_rng(3))
    p = setup.params(np.array([[40.0, 10.0, 5.0]]))
    got = matched_energy(setup, p.aod_ris[1:], p.aod_ue[1:], branch)[0]
    expect = brute_force_energy(setup, p.aod_ris[1], p.aod_ue[1], p.toa[1], branch)
    assert got == pytest.approx(expect, rel=1e-10)
    # unit-modulus delay profile: the delay does not matter
    assert brute_force_energy(setup, p.aod_ris[1], p.aod_ue[1], 3e-7, branch) == pytest.approx(expect, rel=1e-10)


def test_matched_energy_d_null_on_ue_ris_line(setup):
    p = setup.params(setup.ue.position + 0.3 * (setup.scenario.ris.position - setup.ue.position))
    assert matched_energy(setup, p.aod_ris[1:], p.aod_ue[1:], "D")[0] < 1e-20 * setup.scenario.n_subcarriers


def test_matched_energy_unknown_branch(setup):
    with pytest.raises(ValueError):
        matched_energy(setup, [[0.0, 0.0]], [[0.0, 0.0]], "X")


def test_path_stats_ranges(setup, sps):
    cfg = DetectionConfig()
    st_ = path_detection_stats(setup, sps, cfg)
    floor = np.exp(-cfg.gamma / 2)
    for s in st_.values():
        assert np.all(s.noncentrality >= 0)
        assert np.all((s.dp >= floor - 1e-12) & (s.dp <= 1))


def test_behind_ris_is_at_floor(setup):
    st_ = path_detection_stats(setup, [[20.0, 0.0, 5.0]])
    assert st_["D"].dp[0] == pytest.approx(1e-3, abs=1e-9)
    assert st_["O"].dp[0] == pytest.approx(1e-3, abs=1e-9)
    assert st_["N"].dp[0] > 0.5


@pytest.fixture(scope="module")
def reference_maps():
    sc, ue = reference_dp_scenario()
    pts = dp_grid()
    maps = {m: dp_map(sc, ue, pts, np.random.default_rng(5), m, focus=(50.0, 15.0, 0.0)) for m in ("random", "direct")}
    return sc, ue, pts, maps


def test_null_band_between_ue_and_ris(reference_maps):
    _, _, pts, maps = reference_maps
    # grid points within 0.5 m of the open segment from [30,0,0] to [50,0,0]
    near = (pts[:, 0] > 30) & (pts[:, 0] < 50) & (np.hypot(pts[:, 1], pts[:, 2]) <= 0.5)
    assert near.sum() >= 10
    dp_d = maps["random"][0][near]
    assert np.mean(dp_d < 2e-3) >= 0.95


def test_segment_points_are_interior():
    pts = segment_points([50.0, 0.0, 0.0], [30.0, 0.0, 0.0], 10)
    assert np.all((pts[:, 0] > 30) & (pts[:, 0] < 50))
    sc, ue = reference_dp_scenario()
    dp_d, _ = dp_map(sc, ue, pts, np.random.default_rng(0))
    assert np.all(dp_d < 2e-3)


def test_directional_region_larger(reference_maps):
    _, _, _, maps = reference_maps
    area = {m: np.nansum(v[0] > 0.5) for m, v in maps.items()}
    assert area["direct"] > area["random"]


def test_d_dominates_o_over_grid(reference_maps):
    _, _, _, maps = reference_maps
    thr = np.linspace(0, 1, 101)
    for dp_d, dp_o in maps.values():
        ok = np.isfinite(dp_d)
        assert np.all(empirical_ccdf(dp_d[ok], thr) >= empirical_ccdf(dp_o[ok], thr))


def test_uncontrolled_paths_detected_on_reference_map():
    sc, ue = reference_dp_scenario()
    setup = make_epoch(sc, ue, np.random.default_rng(0))
    pts = dp_grid()
    pts = pts[np.linalg.norm(pts - ue.position, axis=1) > 0.5]
    assert np.min(path_detection_stats(setup, pts)["N"].dp) > 0.99


def test_dp_map_marks_coincident_points():
    sc, ue = reference_dp_scenario()
    dp_d, dp_o = dp_map(sc, ue, [[50.0, 0.0, 0.0], [40.0, 5.0, 0.0]], np.random.default_rng(0))
    assert np.isnan(dp_d[0]) and np.isnan(dp_o[0]) and np.isfinite(dp_d[1])


def test_epoch_dps_direct_aims_each_sp(setup, sps):
    d_r, o_r, n_r = epoch_dps(setup, sps, "random")
    d_d, o_d, n_d = epoch_dps(setup, sps, "direct")
    np.testing.assert_allclose(n_r, n_d)
    assert np.all(d_d >= d_r - 1e-12) and np.all(o_d >= o_r - 1e-12)
    with pytest.raises(ValueError):
        epoch_dps(setup, sps, "other")


def test_empirical_ccdf():
    np.testing.assert_allclose(empirical_ccdf([0.1, 0.5, 0.9, 0.9], [0.0, 0.5, 0.9, 1.0]), [1.0, 0.5, 0.0, 0.0])


# --- link budget ---------------------------------------------------------------

def test_uncontrolled_loss_at_30m():
    lb = link_budget(30.0, 30.0, 30.0, 2500)
    # [DERIVED] lambda^2 S / ((4 pi)^3 d^4) at d = 30 m
    assert 10 * np.log10(lb["N"]) == pytest.approx(-115.07, abs=0.01)


def test_directional_boost_is_34_db():
    rnd = link_budget(30.0, 12.0, 18.0, 2500, "random")
    drc = link_budget(30.0, 12.0, 18.0, 2500, "direct")
    for k in ("R", "D", "O"):
        assert 10 * np.log10(drc[k] / rnd[k]) == pytest.approx(10 * np.log10(2500), abs=1e-9)
        assert 10 * np.log10(drc[k] / rnd[k]) == pytest.approx(34.0, abs=0.03)
    np.testing.assert_array_equal(rnd["D"], rnd["O"])
    assert drc["N"] == rnd["N"]


def test_link_budget_monotone():
    base = link_budget(30.0, 20.0, 10.0, 2500)["D"]
    for i in range(3):
        d = [30.0, 20.0, 10.0]
        d[i] *= 1.5
        assert link_budget(*d, 2500)["D"] < base
    n1, n2 = link_budget(30.0, [10.0, 20.0], 10.0, 2500)["N"]
    assert 10 * np.log10(n1 / n2) == pytest.approx(40 * np.log10(2), abs=1e-9)


def test_link_budget_rejects_bad_inputs():
    with pytest.raises(ValueError):
        link_budget(0.0, 1.0, 1.0, 100)
    with pytest.raises(ValueError):
        link_budget(1.0, 1.0, 1.0, 100, mode="x")
    with pytest.raises(ValueError):
        link_budget_sweep("a", [0.0, 0.5])
    with pytest.raises(ValueError):
        link_budget_sweep("c", [0.5])


def test_sweep_cases_agree_for_n_and_d():
    rho = np.linspace(0.05, 0.95, 19)
    a = link_budget_sweep("a", rho)
    b = link_budget_sweep("b", rho)
    np.testing.assert_allclose(a["PL_N"], b["PL_N"], atol=1e-9)
    np.testing.assert_allclose(a["PL_D"], b["PL_D"], atol=1e-9)
    assert np.all(a["PL_R"] == a["PL_R"][0])


def test_sweep_values_frozen():
    lb = link_budget_sweep("a", [0.1, 0.5, 0.9])
    # [DERIVED] literal path-loss formulas, random profile, N_R = 2500, d = 30 m
    np.testing.assert_allclose(lb["PL_R"], [-139.13] * 3, atol=0.01)
    np.testing.assert_allclose(lb["PL_D"], [-152.75, -161.63, -152.75], atol=0.01)
    np.testing.assert_allclose(lb["PL_N"], [-113.24, -103.03, -75.07], atol=0.01)
