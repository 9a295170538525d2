"""Per-path detection probabilities from the compressed branch statistics.

Each branch (D: UE-RIS-SP-UE, O: UE-SP-RIS-UE, N: UE-SP-UE) is matched-filtered
against the hypothetical single-path signal of a candidate SP. The resulting
statistic is Rician, so its detection probability is a first-order Marcum Q
function of the noncentrality ``4 |gain|^2 P / N_0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ive

from .channel import RisProfileSchedule, gain_magnitudes, steering_vector
from .epoch import EpochSetup, make_epoch
from .geometry import Pose, UEState, channel_params
from .scenario import Scenario

BRANCHES = ("D", "O", "N")

_SERIES_TOL = 1e-12
_SATURATION = 50.0          # exp(-50) is far below the accuracy target
_MAX_TERMS = 200_000


@dataclass(frozen=True)
class DetectionConfig:
    p_fa: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError(f"p_fa must lie in (0, 1), got {self.p_fa}")

    @property
    def gamma(self) -> float:
        return -2.0 * np.log(self.p_fa)


@dataclass
class PathDetectionStats:
    noncentrality: np.ndarray
    energy: np.ndarray
    dp: np.ndarray


def marcum_q1(a, b):
    """First-order Marcum Q function Q_1(a, b) for nonnegative arguments.

    Uses the Neumann series in exponentially scaled modified Bessel functions,

        a <  b:  Q = exp(-(a-b)^2/2) sum_{k>=0} (a/b)^k ive(k, ab)
        a >= b:  Q = 1 - exp(-(a-b)^2/2) sum_{k>=1} (b/a)^k ive(k, ab)

    truncated once the newest term drops below 1e-12 of the partial sum.
    Both sums are bounded by one, so |a - b| > 10 saturates to 0 or 1.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("Marcum Q arguments must be nonnegative")
    out = np.empty(a.shape)
    upper = a >= b
    out[upper] = 1.0
    out[~upper] = 0.0

    active = 0.5 * (a - b) ** 2 < _SATURATION
    idx = np.flatnonzero(active)
    if idx.size:
        aa, bb = a.ravel()[idx], b.ravel()[idx]
        up = upper.ravel()[idx]
        big, small = np.where(up, aa, bb), np.where(up, bb, aa)
        ratio = np.divide(small, big, out=np.zeros_like(big), where=big > 0)
        x = aa * bb
        k0 = np.where(up, 1, 0)
        total = np.zeros_like(x)
        live = np.ones(x.shape, dtype=bool)
        for k in range(_MAX_TERMS):
            use = live & (k >= k0)
            if k > 0:
                term = np.zeros_like(x)
                term[use] = ratio[use] ** k * ive(k, x[use])
            else:
                term = np.where(use, ive(0, x), 0.0)
            total += term
            live &= ~((k >= k0) & (term <= _SERIES_TOL * np.maximum(total, 1e-300)))
            if not live.any():
                break
        scale = np.exp(-0.5 * (aa - bb) ** 2)
        q = np.where(up, 1.0 - scale * total, scale * total)
        out.ravel()[idx] = np.clip(q, 0.0, 1.0)
    return out if out.ndim else float(out)


def detection_probability(gain, energy, noise_psd, cfg: DetectionConfig = DetectionConfig()):
    """``Q_1(sqrt(4 |gain|^2 P / N_0), sqrt(gamma))``."""
    gain = np.abs(np.asarray(gain))
    energy = np.asarray(energy, dtype=float)
    if np.any(energy < 0) or noise_psd <= 0:
        raise ValueError("energy must be nonnegative and noise_psd positive")
    lam = 4.0 * gain**2 * energy / noise_psd
    return marcum_q1(np.sqrt(lam), np.sqrt(cfg.gamma))


def matched_energy(setup: EpochSetup, aod_ris, aod_ue, branch: str) -> np.ndarray:
    """Energy of the branch's hypothetical single-path signal, per path.

    ``aod_ris`` / ``aod_ue`` are (L, 2) angles of the candidate paths. The
    D branch combines over the T1 pairs with ``W_perp``, the O branch over the
    T2 pairs with the RIS-direction combiner, the N branch over all pairs with
    the full array.
    """
    sc = setup.scenario
    aod_ris = np.atleast_2d(aod_ris)
    aod_ue = np.atleast_2d(aod_ue)
    n_t1 = setup.plan.n_t1
    a_u = steering_vector(sc.ue_array, aod_ue, sc.wavelength)     # (L, N_U)
    proj = setup.precoders @ a_u.T                                  # (T/2, L)
    n_u, n_sc = sc.ue_array.size, sc.n_subcarriers
    if branch == "N":
        return n_sc * n_u * np.sum(np.abs(proj) ** 2, axis=0)
    nu2 = np.abs(setup.nu(aod_ris)) ** 2
    if branch == "D":
        g2 = np.abs(setup.tx_gain_ris[:n_t1]) ** 2
        perp = np.sum(np.abs(a_u @ setup.combiner.perp.conj()) ** 2, axis=1)
        return n_sc * perp * (g2 @ nu2[:n_t1])
    if branch == "O":
        return n_sc * n_u * np.sum(nu2[n_t1:] * np.abs(proj[n_t1:]) ** 2, axis=0)
    raise ValueError(f"unknown branch {branch!r}")


def path_detection_stats(setup: EpochSetup, sps, cfg: DetectionConfig = DetectionConfig()
                         ) -> dict[str, PathDetectionStats]:
    """Detection statistics of every SP in every branch for one epoch."""
    sc = setup.scenario
    sps = np.atleast_2d(np.asarray(sps, dtype=float))
    params = setup.params(sps)
    alpha2, beta2, behind = gain_magnitudes(sc, setup.ue.position, sps)
    gains = {"D": np.sqrt(alpha2[1:]), "O": np.sqrt(alpha2[1:]), "N": np.sqrt(beta2)}
    out = {}
    for br in BRANCHES:
        energy = matched_energy(setup, params.aod_ris[1:], params.aod_ue[1:], br)
        lam = 4.0 * gains[br] ** 2 * energy / sc.noise_psd
        if br != "N":
            lam = np.where(behind, 0.0, lam)
        dp = marcum_q1(np.sqrt(lam), np.sqrt(cfg.gamma))
        out[br] = PathDetectionStats(noncentrality=lam, energy=energy, dp=np.atleast_1d(dp))
    return out


# --- reference geometry for the detection-probability maps -----------------

def reference_dp_scenario(scenario: Scenario | None = None) -> tuple[Scenario, UEState]:
    """20 dBm, T = 20, RIS at [30,0,0] and the UE at [50,0,0] facing it."""
    base = Scenario() if scenario is None else scenario
    sc = base.with_(ris=Pose.at([30.0, 0.0, 0.0]), tx_power_dbm=20.0, n_transmissions=20)
    return sc, UEState([50.0, 0.0, 0.0], np.pi, 0.0)


def dp_map(scenario: Scenario, ue: UEState, points, rng, ris_mode: str = "random",
           focus=(50.0, 15.0, 0.0), cfg: DetectionConfig = DetectionConfig()):
    """D and O detection probabilities for SPs at each of ``points`` (M, 3).

    One epoch configuration (precoders and RIS profiles) is drawn and shared
    by every grid point. Points coinciding with the UE or the RIS get NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    setup = make_epoch(scenario, ue, rng, ris_mode=ris_mode, focus=focus)
    ok = (np.linalg.norm(points - ue.position, axis=1) > 1e-6) & \
         (np.linalg.norm(points - scenario.ris.position, axis=1) > 1e-6)
    dp_d = np.full(len(points), np.nan)
    dp_o = np.full(len(points), np.nan)
    chunk = 512
    good = np.flatnonzero(ok)
    for i in range(0, len(good), chunk):
        sel = good[i:i + chunk]
        st = path_detection_stats(setup, points[sel], cfg)
        dp_d[sel] = st["D"].dp
        dp_o[sel] = st["O"].dp
    return dp_d, dp_o


def dp_grid(x_range=(31.0, 70.0), y_range=(-20.0, 30.0), step: float = 1.0, z: float = 0.0):
    # the small slack keeps an end point that the step reaches up to rounding
    xs = np.arange(x_range[0], x_range[1] + 1e-9 * step, step)
    ys = np.arange(y_range[0], y_range[1] + 1e-9 * step, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def segment_points(start, end, n: int) -> np.ndarray:
    """``n`` points strictly inside the segment from ``start`` to ``end``."""
    t = (np.arange(n) + 0.5) / n
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    return start + t[:, None] * (end - start)


def epoch_dps(setup: EpochSetup, sps, ris_mode: str, cfg: DetectionConfig = DetectionConfig()):
    """Per-SP (dp_D, dp_O, dp_N); ``"direct"`` aims the RIS at each SP in turn."""
    sps = np.atleast_2d(np.asarray(sps, dtype=float))
    if ris_mode == "random":
        st = path_detection_stats(setup, sps, cfg)
        return st["D"].dp, st["O"].dp, st["N"].dp
    if ris_mode != "direct":
        raise ValueError(f"unknown RIS profile mode {ris_mode!r}")
    sc = setup.scenario
    out = np.empty((3, len(sps)))
    n_pairs = sc.n_transmissions // 2
    for j, sp in enumerate(sps):
        phi_t = channel_params(setup.ue, sc.ris, sp).aod_ris[1]
        sched = RisProfileSchedule.directional(n_pairs, setup.phi_0, phi_t, sc.ris_array, sc.wavelength)
        aimed = EpochSetup(**{**setup.__dict__, "schedule": sched})
        st = path_detection_stats(aimed, sp, cfg)
        out[:, j] = st["D"].dp[0], st["O"].dp[0], st["N"].dp[0]
    return out[0], out[1], out[2]


def empirical_ccdf(values, thresholds) -> np.ndarray:
    """Fraction of ``values`` strictly above each threshold."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    return 1.0 - np.searchsorted(v, thresholds, side="right") / max(len(v), 1)


# --- link budget -------------------------------------------------------------

def link_budget(d_ur, d_us, d_rs, n_ris: int, mode: str = "random", wavelength: float = 0.01,
                rcs: float = 50.0) -> dict[str, np.ndarray]:
    """Received-to-transmitted power ratios of the four paths (linear scale).

    Power-only analysis without UE beamforming. The RIS gain is ``N_R^2``
    for a phase-conjugate profile and ``N_R`` for random phases; the element
    area is ``(lambda/4)^2``.
    """
    d_ur, d_us, d_rs = (np.asarray(d, dtype=float) for d in (d_ur, d_us, d_rs))
    if np.any(d_ur <= 0) or np.any(d_us <= 0) or np.any(d_rs <= 0):
        raise ValueError("distances must be positive")
    if mode == "random":
        g = float(n_ris)
    elif mode == "direct":
        g = float(n_ris) ** 2
    else:
        raise ValueError(f"unknown RIS profile mode {mode!r}")
    lam = wavelength
    area = (lam / 4) ** 2
    four_pi = 4 * np.pi
    p_r = g * lam**2 * area / (four_pi**2 * d_ur**4)
    p_d = g * lam**2 * rcs * area / (four_pi**4 * d_us**2 * d_ur**2 * d_rs**2)
    p_n = lam**2 * rcs / (four_pi**3 * d_us**4)
    p_r, p_d, p_n = np.broadcast_arrays(p_r, p_d, p_n)
    return {"R": p_r, "D": p_d, "O": p_d.copy(), "N": p_n}


def link_budget_sweep(case: str, rho, mode: str = "random", distance: float = 30.0,
                      n_ris: int = 2500, wavelength: float = 0.01, rcs: float = 50.0
                      ) -> dict[str, np.ndarray]:
    """Path losses in dB along a collinear sweep.

    Case ``"a"``: SP between RIS and UE, ``d_RS = rho d_UR`` with
    ``d_UR = distance``. Case ``"b"``: UE between RIS and SP,
    ``d_UR = rho d_RS`` with ``d_RS = distance``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any((rho <= 0) | (rho >= 1)):
        raise ValueError("rho must lie in (0, 1)")
    if case == "a":
        d_ur = np.full_like(rho, distance)
        d_rs = rho * distance
        d_us = d_ur - d_rs
    elif case == "b":
        d_rs = np.full_like(rho, distance)
        d_ur = rho * distance
        d_us = d_rs - d_ur
    else:
        raise ValueError(f"unknown link-budget case {case!r}")
    lb = link_budget(d_ur, d_us, d_rs, n_ris, mode, wavelength, rcs)
    return {"rho": rho, "PL_R": 10 * np.log10(lb["R"]), "PL_D": 10 * np.log10(lb["D"]),
            "PL_N": 10 * np.log10(lb["N"])}
