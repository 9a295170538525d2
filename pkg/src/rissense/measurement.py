"""Noisy channel-parameter measurements, clutter and the D/O merge.

Measurement noise covariances are the inverse Fisher information of each
branch's noiseless single-path signal. All three branch signals are rank
one across (pair, antenna, subcarrier), so the Gram matrix of the Jacobian is
assembled from inner products of the three factors; a dense Jacobian route is
kept for cross-checking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import delay_response, gain_magnitudes, steering_vector
from .epoch import EpochSetup
from .geometry import SPEED_OF_LIGHT, ChannelParams, wrap_angle

#: positions of azimuth components, per measurement dimension
AZIMUTH_INDEX = {5: (0, 3), 3: (1,)}

_FD_STEP = 1e-6
_COND_LIMIT = 1e14


class SingularFIMError(np.linalg.LinAlgError):
    """The Fisher information is singular: some parameter is unobservable."""


@dataclass
class Measurement:
    """One channel-parameter vector with its covariance.

    ``z`` is ``[phi_az, phi_el, tau, theta_az, theta_el]`` for the RIS
    branches (D, O and merged R) and ``[tau_bar, theta_az, theta_el]`` for N.
    ``origin`` is the SP index, or -1 for clutter.
    """

    z: np.ndarray
    cov: np.ndarray
    branch: str
    origin: int = -1

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        want = 3 if self.branch == "N" else 5
        if self.z.shape != (want,) or self.cov.shape != (want, want):
            raise ValueError(f"branch {self.branch} expects dimension {want}")

    def to_dict(self) -> dict:
        return {"branch": self.branch, "origin": self.origin,
                "z": self.z.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Measurement":
        return cls(np.array(d["z"]), np.array(d["cov"]), d["branch"], d.get("origin", -1))


@dataclass
class ClutterModel:
    """Poisson clutter, uniform over the box ``[low, high]`` in measurement space."""

    mean: float
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        if self.mean < 0:
            raise ValueError("clutter mean must be nonnegative")
        if not (np.all(np.isfinite(self.low)) and np.all(np.isfinite(self.high))):
            raise ValueError("clutter box must be finite")
        if np.any(self.high <= self.low):
            raise ValueError("clutter box must have positive extent")

    @property
    def volume(self) -> float:
        return float(np.prod(self.high - self.low))

    @property
    def intensity(self) -> float:
        """Clutter intensity (expected count per unit measurement volume)."""
        return self.mean / self.volume

    def sample(self, rng) -> np.ndarray:
        n = rng.poisson(self.mean)
        return rng.uniform(self.low, self.high, size=(n, len(self.low)))


# --- Fisher information -------------------------------------------------------

@dataclass
class RankOneModel:
    """Noiseless branch signal ``A_t B_n C_s`` as a function of the parameters.

    ``factors(p)`` returns the three factor vectors; ``scales`` sets the
    finite-difference step of each parameter; ``n_obs`` leading parameters
    are the measured ones, the rest are nuisance gains.
    """

    factors: callable
    theta: np.ndarray
    scales: np.ndarray
    n_obs: int

    def signal(self, p=None) -> np.ndarray:
        a, b, c = self.factors(self.theta if p is None else p)
        return np.einsum("t,n,s->tns", a, b, c).ravel()


def branch_model(setup: EpochSetup, params: ChannelParams, l: int, gain: complex, branch: str
                 ) -> RankOneModel:
    """Single-path noiseless model of SP ``l`` (1-based path index) in one branch."""
    sc = setup.scenario
    lam = sc.wavelength
    n_t1 = setup.plan.n_t1
    f = setup.precoders
    w_perp = setup.combiner.perp
    n_sc, df = sc.n_subcarriers, sc.subcarrier_spacing
    sqrt_nu = np.sqrt(sc.ue_array.size)
    g_ris = setup.tx_gain_ris

    if branch in ("D", "O"):
        tau = params.toa[l]
        theta = np.array([*params.aod_ris[l], tau, *params.aod_ue[l], gain.real, gain.imag])
        scales = np.array([1.0, 1.0, tau, 1.0, 1.0, abs(gain), abs(gain)])
        if branch == "D":
            def factors(p):
                nu = setup.nu(p[0:2])[:n_t1, 0]
                a = (p[5] + 1j * p[6]) * nu * g_ris[:n_t1]
                b = w_perp.conj().T @ steering_vector(sc.ue_array, p[3:5], lam)
                return a, b, delay_response(p[2], n_sc, df)
        else:
            def factors(p):
                nu = setup.nu(p[0:2])[n_t1:, 0]
                proj = f[n_t1:] @ steering_vector(sc.ue_array, p[3:5], lam)
                a = (p[5] + 1j * p[6]) * sqrt_nu * nu * proj
                return a, np.ones(1, dtype=complex), delay_response(p[2], n_sc, df)
        return RankOneModel(factors, theta, scales, 5)
    if branch == "N":
        tau = params.toa_bar[l - 1]
        theta = np.array([tau, *params.aod_ue[l], gain.real, gain.imag])
        scales = np.array([tau, 1.0, 1.0, abs(gain), abs(gain)])

        def factors(p):
            a_u = steering_vector(sc.ue_array, p[1:3], lam)
            return (p[3] + 1j * p[4]) * (f @ a_u), a_u, delay_response(p[0], n_sc, df)
        return RankOneModel(factors, theta, scales, 3)
    raise ValueError(f"unknown branch {branch!r}")


def _finish(gram_scaled, model: RankOneModel, noise_var):
    fim = (2.0 / noise_var) * gram_scaled.real
    fim = 0.5 * (fim + fim.T)
    w = np.linalg.eigvalsh(fim)
    if w[0] <= 0 or w[-1] / w[0] > _COND_LIMIT:
        raise SingularFIMError("Fisher information is singular at this geometry")
    crb = np.linalg.inv(fim)
    crb = model.scales[:, None] * crb * model.scales[None, :]
    cov = crb[: model.n_obs, : model.n_obs]
    return 0.5 * (cov + cov.T)


def fim_covariance(model: RankOneModel, noise_var: float) -> np.ndarray:
    """CRLB of the observed parameters using the factored Jacobian.

    Each factor is differentiated by central differences with relative step
    1e-6 on the scaled parameters; the Gram matrix of the stacked-signal
    Jacobian is then a sum of products of factor inner products.
    """
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    p0, s = model.theta, model.scales
    if np.any(s <= 0):
        raise SingularFIMError("zero gain or delay scale: branch carries no signal")
    base = model.factors(p0)
    n = len(p0)
    # terms[k] = (i, derivative of factor i w.r.t. scaled parameter k)
    terms = []
    for k in range(n):
        step = np.zeros(n)
        step[k] = _FD_STEP * s[k]
        fp, fm = model.factors(p0 + step), model.factors(p0 - step)
        terms.append([(fp[i] - fm[i]) / (2 * _FD_STEP) for i in range(3)])
    gram_f = [np.vdot(base[i], base[i]) for i in range(3)]
    gram = np.zeros((n, n), dtype=complex)
    for k in range(n):
        for m in range(k, n):
            tot = 0j
            for i in range(3):
                for j in range(3):
                    prod = 1 + 0j
                    for q in range(3):
                        x = terms[k][q] if q == i else base[q]
                        y = terms[m][q] if q == j else base[q]
                        prod *= np.vdot(x, y) if (q == i or q == j) else gram_f[q]
                    tot += prod
            gram[k, m] = tot
            gram[m, k] = np.conj(tot)
    return _finish(gram, model, noise_var)


def fim_covariance_dense(model: RankOneModel, noise_var: float) -> np.ndarray:
    """Same as :func:`fim_covariance` with the full stacked-signal Jacobian."""
    p0, s = model.theta, model.scales
    n = len(p0)
    cols = []
    for k in range(n):
        step = np.zeros(n)
        step[k] = _FD_STEP * s[k]
        cols.append((model.signal(p0 + step) - model.signal(p0 - step)) / (2 * _FD_STEP))
    jac = np.column_stack(cols)
    return _finish(jac.conj().T @ jac, model, noise_var)


def true_measurement(params: ChannelParams, l: int, branch: str) -> np.ndarray:
    if branch == "N":
        return np.array([params.toa_bar[l - 1], *params.aod_ue[l]])
    return np.array([*params.aod_ris[l], params.toa[l], *params.aod_ue[l]])


def wrap_residual(dz) -> np.ndarray:
    """Residual with azimuth components wrapped to [-pi, pi)."""
    dz = np.array(dz, dtype=float)
    idx = list(AZIMUTH_INDEX[dz.shape[-1]])
    dz[..., idx] = wrap_angle(dz[..., idx])
    return dz


# --- measurement sets ---------------------------------------------------------

@dataclass
class EpochMeasurements:
    sets: dict = field(default_factory=lambda: {"D": [], "O": [], "N": []})
    dropped: int = 0


def delay_interval(setup: EpochSetup, box_low, box_high, branch: str) -> tuple[float, float]:
    """Exact delay range of SPs in the box.

    The path length is convex in the SP position, so its maximum sits on a
    box corner and its minimum is found by bounded minimization.
    """
    lo_b, hi_b = np.asarray(box_low, dtype=float), np.asarray(box_high, dtype=float)
    x_u, x_r = setup.ue.position, setup.scenario.ris.position
    if branch == "N":
        def length(x):
            return 2 * np.linalg.norm(np.atleast_2d(x) - x_u, axis=-1)
        x_min = np.clip(x_u, lo_b, hi_b)
    else:
        d_ur = np.linalg.norm(x_u - x_r)

        def length(x):
            x = np.atleast_2d(x)
            return d_ur + np.linalg.norm(x - x_r, axis=-1) + np.linalg.norm(x - x_u, axis=-1)
        start = np.clip(0.5 * (x_u + x_r), lo_b, hi_b)
        res = minimize(lambda x: length(x)[0], start, bounds=list(zip(lo_b, hi_b)), method="L-BFGS-B",
                       options={"ftol": 1e-15, "gtol": 1e-12})
        x_min = res.x
    corners = np.array(np.meshgrid(*zip(lo_b, hi_b), indexing="ij")).reshape(3, -1).T
    return float(length(x_min)[0] / SPEED_OF_LIGHT), float(length(corners).max() / SPEED_OF_LIGHT)


def measurement_bounds(setup: EpochSetup, box_low, box_high, branch: str, n_grid: int = 7):
    """Bounding box, in measurement space, of the image of the SP box.

    Angles are bounded over an ``n_grid`` lattice of the box; the delay range is exact.
    """
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in zip(box_low, box_high)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    p = setup.params(pts)
    if branch == "N":
        z = np.column_stack([p.toa_bar, p.aod_ue[1:]])
    else:
        z = np.column_stack([p.aod_ris[1:], p.toa[1:], p.aod_ue[1:]])
    lo, hi = z.min(axis=0), z.max(axis=0)
    k = 0 if branch == "N" else 2
    lo[k], hi[k] = delay_interval(setup, box_low, box_high, branch)
    return lo, hi


def clutter_bounds(setup: EpochSetup, box_low, box_high, branch: str, n_grid: int = 7):
    """Measurement-space box of the clutter: full angular field of view, delays of the SP box image."""
    lo, hi = measurement_bounds(setup, box_low, box_high, branch, n_grid)
    az = list(AZIMUTH_INDEX[len(lo)])
    el = [i + 1 for i in az]
    lo[az], hi[az] = -np.pi, np.pi
    lo[el], hi[el] = -np.pi / 2, np.pi / 2
    return lo, hi


def _mvn(rng, cov):
    return np.linalg.cholesky(cov) @ rng.standard_normal(len(cov))


def generate_measurements(setup: EpochSetup, sps, gains, dps: dict, rng, clutter: dict | None = None,
                          noise_scale: float = 1.0, clutter_cov: dict | None = None
                          ) -> EpochMeasurements:
    """Thinned, noisy parameter measurements plus clutter for the three branches.

    Parameters
    ----------
    setup : EpochSetup
    sps : (L, 3) array
        True SP positions.
    gains : PathGains
        Complex gains of the epoch (``alpha[l]``, ``beta[l-1]``).
    dps : dict
        Per-branch detection probabilities, arrays of length L.
    clutter : dict of ClutterModel, optional
        Per-branch clutter; omitted means no clutter.
    noise_scale : float
        Multiplies the noise standard deviation (0 gives noiseless values).
    clutter_cov : dict, optional
        Covariance attached to clutter measurements per branch.
    """
    sps = np.atleast_2d(np.asarray(sps, dtype=float))
    out = EpochMeasurements()
    if len(sps):
        params = setup.params(sps)
        noise_var = setup.scenario.noise_psd / 2
        for br in ("D", "O", "N"):
            hit = rng.uniform(size=len(sps)) < np.asarray(dps[br])
            for l in np.flatnonzero(hit) + 1:
                g = gains.beta[l - 1] if br == "N" else gains.alpha[l]
                try:
                    cov = fim_covariance(branch_model(setup, params, l, g, br), noise_var)
                    z = true_measurement(params, l, br) + noise_scale * _mvn(rng, cov)
                except (SingularFIMError, np.linalg.LinAlgError):
                    out.dropped += 1
                    continue
                out.sets[br].append(Measurement(wrap_residual(z), cov, br, int(l - 1)))
    if clutter:
        for br, model in clutter.items():
            for z in model.sample(rng):
                out.sets[br].append(Measurement(z, clutter_cov[br], br, -1))
    for br in out.sets:
        order = rng.permutation(len(out.sets[br]))
        out.sets[br] = [out.sets[br][i] for i in order]
    return out


def reference_covariances(setup: EpochSetup, point, rng=None) -> dict:
    """Branch covariances of a nominal SP at ``point``, used for clutter."""
    point = np.atleast_2d(point)
    params = setup.params(point)
    alpha2, beta2, _ = gain_magnitudes(setup.scenario, setup.ue.position, point)
    noise_var = setup.scenario.noise_psd / 2
    out = {}
    for br in ("D", "O", "N"):
        g = np.sqrt(beta2[0] if br == "N" else alpha2[1]) + 0j
        out[br] = fim_covariance(branch_model(setup, params, 1, g, br), noise_var)
    return out


# --- D/O merge ----------------------------------------------------------------

def merge_distance(zd: Measurement, zo: Measurement) -> float:
    d = wrap_residual(zd.z - zo.z)
    return 0.5 * float(d @ np.linalg.solve(zd.cov, d) + d @ np.linalg.solve(zo.cov, d))


def merge_double_bounce(z_d: list, z_o: list, threshold: float = 36.0) -> list:
    """Merge D and O measurements of the same SP into the R set.

    Candidate pairs below ``threshold`` are accepted greedily in ascending
    distance, each measurement used at most once. A merged pair becomes the
    average (azimuth-aware) with covariance ``(R_D + R_O) / 4``; every other
    measurement passes through unchanged.
    """
    cand = []
    for i, zd in enumerate(z_d):
        for j, zo in enumerate(z_o):
            dist = merge_distance(zd, zo)
            if dist < threshold:
                cand.append((dist, i, j))
    cand.sort()
    used_d, used_o, merged = set(), set(), []
    for _, i, j in cand:
        if i in used_d or j in used_o:
            continue
        used_d.add(i)
        used_o.add(j)
        zd, zo = z_d[i], z_o[j]
        z = wrap_residual(zd.z - 0.5 * wrap_residual(zd.z - zo.z))
        origin = zd.origin if zd.origin == zo.origin else -1
        merged.append(Measurement(z, 0.25 * (zd.cov + zo.cov), "R", origin))
    rest = [Measurement(m.z, m.cov, "R", m.origin) for i, m in enumerate(z_d) if i not in used_d]
    rest += [Measurement(m.z, m.cov, "R", m.origin) for j, m in enumerate(z_o) if j not in used_o]
    return merged + rest


# --- JSON lines -----------------------------------------------------------------

def dump_epoch(fh, run: int, epoch: int, sets: dict) -> None:
    rec = {"run": run, "epoch": epoch,
           "sets": {br: [m.to_dict() for m in ms] for br, ms in sets.items()}}
    fh.write(json.dumps(rec) + "\n")


def load_epochs(fh):
    for line in fh:
        if line.strip():
            rec = json.loads(line)
            rec["sets"] = {br: [Measurement.from_dict(d) for d in ms] for br, ms in rec["sets"].items()}
            yield rec
