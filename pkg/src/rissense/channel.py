"""Array responses, RIS phase profiles, path gains and received-signal synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ChannelParams, UEState, channel_params


@dataclass(frozen=True)
class UpaConfig:
    """Uniform planar array in the local y-z plane (broadside = local x)."""

    n_az: int
    n_el: int
    spacing: float

    def __post_init__(self):
        if self.n_az < 1 or self.n_el < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def size(self) -> int:
        return self.n_az * self.n_el

    def element_indices(self):
        # row-major, azimuth index fastest
        q, p = np.divmod(np.arange(self.size), self.n_az)
        return p, q


def steering_vector(cfg: UpaConfig, angle, wavelength: float) -> np.ndarray:
    """UPA response for [az, el] angles; shape (..., 2) -> (..., n_az * n_el).

    Element (p, q) carries phase ``2*pi/wavelength * spacing *
    (p sin(az) cos(el) + q sin(el))``; entries are unit modulus so that
    ``||a||^2 = N``.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    angle = np.asarray(angle, dtype=float)
    az, el = angle[..., 0], angle[..., 1]
    p, q = cfg.element_indices()
    k = 2 * np.pi / wavelength * cfg.spacing
    phase = k * (np.sin(az)[..., None] * np.cos(el)[..., None] * p + np.sin(el)[..., None] * q)
    return np.exp(1j * phase)


def ris_response(profile, phi_l, phi_0, cfg: UpaConfig, wavelength: float):
    """RIS reflection coefficient ``a_R(phi_l)^T diag(omega) a_R(phi_0)``.

    ``profile`` may be a single profile (N,) or a stack (T, N); ``phi_l`` may
    hold several angles (L, 2). The result broadcasts to (T, L) / (T,) / ().
    """
    profile = np.asarray(profile)
    a_l = steering_vector(cfg, phi_l, wavelength)
    a_0 = steering_vector(cfg, phi_0, wavelength)
    return profile @ (a_l * a_0).T


@dataclass
class RisProfileSchedule:
    """Base RIS profiles for the T/2 transmission pairs.

    Transmission 2t-1 uses ``base[t]`` and transmission 2t uses ``-base[t]``
    (1-based), which makes the profiles sum to zero over each pair.
    """

    base: np.ndarray

    def __post_init__(self):
        self.base = np.atleast_2d(np.asarray(self.base, dtype=complex))
        if not np.allclose(np.abs(self.base), 1.0, atol=1e-12):
            raise ValueError("RIS profile entries must have unit modulus")

    @property
    def n_pairs(self) -> int:
        return self.base.shape[0]

    def expanded(self) -> np.ndarray:
        out = np.empty((2 * self.n_pairs, self.base.shape[1]), dtype=complex)
        out[0::2] = self.base
        out[1::2] = -self.base
        return out

    @classmethod
    def random(cls, n_pairs: int, n_elements: int, rng) -> "RisProfileSchedule":
        return cls(np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(n_pairs, n_elements))))

    @classmethod
    def directional(cls, n_pairs, phi_0, phi_target, cfg: UpaConfig, wavelength) -> "RisProfileSchedule":
        """Phase-conjugate profile steering the UE beam towards ``phi_target``."""
        w = np.conj(steering_vector(cfg, phi_0, wavelength) * steering_vector(cfg, phi_target, wavelength))
        return cls(np.tile(w, (n_pairs, 1)))


@dataclass
class PathGains:
    """Complex gains: ``alpha`` for l = 0..L (RIS paths), ``beta`` for l = 1..L."""

    alpha: np.ndarray
    beta: np.ndarray
    behind_ris: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _cosine_factor(points, ris_position, ris_normal):
    rel = np.atleast_2d(points) - ris_position
    d = np.linalg.norm(rel, axis=1)
    return rel @ ris_normal / d, d


def gain_magnitudes(scenario, ue_position, sps):
    """Squared amplitudes (|alpha|^2 for l=0..L, |beta|^2 for l=1..L) and a behind-RIS mask.

    Follows the large-scale amplitude models literally: a common prefactor
    ``E_s lambda^2 g_UR^(2 q0) / (16 (4 pi)^2 d_UR^2)`` times the l = 0 or
    l != 0 bracket. A negative cosine factor (point behind the RIS plane)
    zeroes the corresponding RIS gain.
    """
    sps = np.zeros((0, 3)) if sps is None else np.atleast_2d(np.asarray(sps, dtype=float))
    lam = scenario.wavelength
    es = scenario.energy_per_subcarrier
    q0 = scenario.q0
    x_r, n_r = scenario.ris.position, scenario.ris.normal
    x_u = np.asarray(ue_position, dtype=float)

    g_ur, d_ur = _cosine_factor(x_u, x_r, n_r)
    g_ur, d_ur = g_ur[0], d_ur[0]
    g_ur_pos = max(g_ur, 0.0)
    pref = es * lam**2 * g_ur_pos ** (2 * q0) / (16 * (4 * np.pi) ** 2 * d_ur**2)
    a0 = pref * g_ur_pos ** (2 * q0) * lam**2 / (4 * np.pi * d_ur**2)

    if len(sps):
        g_sr, d_sr = _cosine_factor(sps, x_r, n_r)
        d_su = np.linalg.norm(sps - x_u, axis=1)
        behind = g_sr < 0
        g_sr = np.where(behind, 0.0, g_sr)
        al = pref * g_sr ** (2 * q0) * lam**2 * scenario.rcs / ((4 * np.pi) ** 2 * d_sr**2 * d_su**2)
        b2 = es * lam**2 * scenario.rcs / ((4 * np.pi) ** 3 * d_su**4)
    else:
        behind = np.zeros(0, dtype=bool)
        al = np.zeros(0)
        b2 = np.zeros(0)
    alpha2 = np.concatenate([[a0], al])
    if g_ur < 0:
        behind = np.ones_like(behind)
    return alpha2, b2, behind


def path_gains(scenario, ue: UEState, sps, rng, params: ChannelParams | None = None) -> PathGains:
    """Complex path gains with phases ``-(2 pi f_c tau + nu_G)``.

    The common phase offset nu_G ~ U[0, 2 pi) is drawn once per call (epoch)
    and shared by every path.
    """
    if params is None:
        params = channel_params(ue, scenario.ris, sps)
    alpha2, beta2, behind = gain_magnitudes(scenario, ue.position, sps)
    nu_g = rng.uniform(0.0, 2 * np.pi)
    fc = scenario.carrier_frequency
    alpha = np.sqrt(alpha2) * np.exp(-1j * (2 * np.pi * fc * params.toa + nu_g))
    beta = np.sqrt(beta2) * np.exp(-1j * (2 * np.pi * fc * params.toa_bar + nu_g))
    return PathGains(alpha=alpha, beta=beta, behind_ris=behind)


def delay_response(tau, n_subcarriers: int, subcarrier_spacing: float) -> np.ndarray:
    """``d_s(tau) = exp(-j 2 pi (s-1) tau df)``; tau (...) -> (..., n_subcarriers)."""
    s = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * np.multiply.outer(np.asarray(tau, dtype=float), s) * subcarrier_spacing)


@dataclass
class RxSignalBlock:
    """Received samples indexed [transmission, subcarrier, antenna]."""

    samples: np.ndarray
    noise_psd: float

    @property
    def n_transmissions(self) -> int:
        return self.samples.shape[0]


def synthesize_rx(scenario, ue: UEState, sps, gains: PathGains, schedule: RisProfileSchedule,
                  precoders, rng=None, noise: bool = True, params: ChannelParams | None = None
                  ) -> RxSignalBlock:
    """Received OFDM block for every transmission and subcarrier.

    Sums the UE-RIS-(SP)-UE, UE-SP-RIS-UE and UE-SP-UE contributions for the
    per-transmission precoders ``precoders`` (T, N_U) and adds CN(0, N_0 I)
    noise unless ``noise`` is False.
    """
    sps = np.zeros((0, 3)) if sps is None else np.atleast_2d(np.asarray(sps, dtype=float))
    if params is None:
        params = channel_params(ue, scenario.ris, sps)
    omega = schedule.expanded()
    f = np.asarray(precoders, dtype=complex)
    n_t, n_u = f.shape
    if omega.shape[0] != n_t:
        raise ValueError(f"schedule has {omega.shape[0]} transmissions, precoders {n_t}")
    if n_u != scenario.ue_array.size or omega.shape[1] != scenario.ris_array.size:
        raise ValueError("array sizes do not match the scenario")
    n_sp = len(sps)
    if len(gains.alpha) != n_sp + 1 or len(gains.beta) != n_sp:
        raise ValueError("path gains do not match the number of SPs")

    lam = scenario.wavelength
    a_u = steering_vector(scenario.ue_array, params.aod_ue, lam)       # (L+1, N_U)
    nu = ris_response(omega, params.aod_ris, params.aod_ris[0], scenario.ris_array, lam)  # (T, L+1)
    d_c = delay_response(params.toa, scenario.n_subcarriers, scenario.subcarrier_spacing)   # (L+1, S)
    d_u = delay_response(params.toa_bar, scenario.n_subcarriers, scenario.subcarrier_spacing)

    proj = f @ a_u.T        # a_U(theta_l)^T f_t, (T, L+1)
    # coefficient of each rank-one term, vectors along antennas, delay profiles
    coef = [gains.alpha[None, :] * nu * proj[:, [0]]]
    vecs = [a_u]
    delays = [d_c]
    if n_sp:
        coef.append(gains.alpha[None, 1:] * nu[:, 1:] * proj[:, 1:])
        vecs.append(np.repeat(a_u[[0]], n_sp, axis=0))
        delays.append(d_c[1:])
        coef.append(gains.beta[None, :] * proj[:, 1:])
        vecs.append(a_u[1:])
        delays.append(d_u)
    coef = np.concatenate(coef, axis=1)
    vecs = np.concatenate(vecs, axis=0)
    delays = np.concatenate(delays, axis=0)
    y = (coef[:, None, :] * delays.T[None, :, :]) @ vecs

    n0 = scenario.noise_psd
    if noise:
        if rng is None:
            raise ValueError("rng required for noisy synthesis")
        y = y + np.sqrt(n0 / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return RxSignalBlock(samples=y, noise_psd=n0)
