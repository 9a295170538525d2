"""Point-target Poisson multi-Bernoulli filter over static SP positions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, norm

from ..geometry import Pose, UEState
from ..measurement import Measurement, wrap_residual
from .association import AssociationMatrix, association_marginals
from .model import delay_scale, invert_measurement, measurement_model, refine_position

log = logging.getLogger(__name__)


@dataclass
class Bernoulli:
    r: float
    mean: np.ndarray
    cov: np.ndarray

    def to_dict(self) -> dict:
        return {"r": float(self.r), "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass
class PMBPosterior:
    """Uniform Poisson intensity of weight ``mu`` over the box plus Bernoullis."""

    mu: float
    low: np.ndarray
    high: np.ndarray
    bernoullis: list = field(default_factory=list)

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.high) - np.asarray(self.low)))

    def box_mass(self, mean, cov) -> float:
        """Probability mass of ``N(mean, cov)`` inside the box (per-axis product)."""
        sd = np.sqrt(np.diag(cov))
        lo, hi = self.low, self.high
        return float(np.prod(norm.cdf((hi - mean) / sd) - norm.cdf((lo - mean) / sd)))

    def estimates(self, threshold: float = 0.5, dedup_gate: float | None = None) -> np.ndarray:
        """Means of Bernoullis that exist inside the box with probability above ``threshold``.

        With ``dedup_gate``, components are first merged with the filter's
        merge rule at that squared Mahalanobis distance, so twin components
        of one SP that split its existence are reported once.
        """
        bern = self.bernoullis
        if dedup_gate is not None:
            bern = merge_components(bern, dedup_gate)
        pts = [b.mean for b in bern if b.r * self.box_mass(b.mean, b.cov) > threshold]
        return np.array(pts).reshape(-1, 3)

    def to_dict(self) -> dict:
        return {"mu": float(self.mu), "bernoullis": [b.to_dict() for b in self.bernoullis]}


@dataclass(frozen=True)
class PMBConfig:
    p_survival: float = 0.99
    birth_mean: float = 0.1
    initial_mean: float = 8.0
    p_detect_intensity: float = 0.95
    gate_prob: float = 1.0 - 1e-6
    prune_threshold: float = 1e-3
    merge_threshold: float = 0.1
    max_exact: int = 10_000
    lbp_tol: float = 1e-6
    lbp_max_iter: int = 200


@dataclass
class UpdateDiagnostics:
    association: AssociationMatrix | None = None
    dropped_non_spd: int = 0
    births: int = 0


def cubature_points(mean, cov):
    """Third-degree spherical-radial cubature points, shape (2n, n)."""
    n = len(mean)
    s = np.linalg.cholesky(cov) * np.sqrt(n)
    return np.vstack([mean + s.T, mean - s.T])


def cubature_moments(mean, cov, h):
    """Predicted measurement mean, covariance and cross-covariance via cubature.

    Residuals are wrapped in azimuth before averaging.
    """
    pts = cubature_points(mean, cov)
    zs = h(pts)
    z0 = h(mean[None])[0]
    z_hat = z0 + wrap_residual(zs - z0).mean(axis=0)
    dz = wrap_residual(zs - z_hat)
    dx = pts - mean
    n2 = len(pts)
    return z_hat, dz.T @ dz / n2, dx.T @ dz / n2


def ckf_update(mean, cov, z, r, h):
    """Cubature Kalman update; returns ``(mean, cov, log_likelihood, d2)``."""
    z_hat, pzz, cxz = cubature_moments(mean, cov, h)
    s = pzz + r
    s = 0.5 * (s + s.T)
    s_inv = np.linalg.inv(s)
    nu = wrap_residual(np.asarray(z) - z_hat)
    d2 = float(nu @ s_inv @ nu)
    _, logdet = np.linalg.slogdet(s)
    k = cxz @ s_inv
    p = cov - k @ s @ k.T
    ll = -0.5 * (d2 + logdet + len(z) * np.log(2 * np.pi))
    return mean + k @ nu, 0.5 * (p + p.T), ll, d2


def _moment_match(weights, means, covs):
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    means = np.asarray(means)
    m = w @ means
    d = means - m
    p = np.einsum("k,kij->ij", w, np.asarray(covs)) + np.einsum("k,ki,kj->ij", w, d, d)
    return m, 0.5 * (p + p.T)


def _is_spd(p) -> bool:
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.isfinite(p)))


class PMBFilter:
    """PMB filter for one measurement branch (``"R"`` or ``"N"``).

    Measurements are handled in scaled units (delays multiplied by c) so the
    cubature and Gauss-Newton steps see well-conditioned covariances.
    """

    def __init__(self, branch: str, low, high, cfg: PMBConfig = PMBConfig()):
        if branch not in ("R", "N"):
            raise ValueError(f"filter branch must be R or N, got {branch!r}")
        self.branch = branch
        self.cfg = cfg
        self.scale = delay_scale(branch)
        self.posterior = PMBPosterior(cfg.initial_mean, np.asarray(low, float), np.asarray(high, float))
        self.diagnostics = UpdateDiagnostics()

    def predict(self) -> None:
        cfg = self.cfg
        post = self.posterior
        for b in post.bernoullis:
            b.r *= cfg.p_survival
        post.mu = cfg.p_survival * post.mu + cfg.birth_mean

    def update(self, ue: UEState, ris: Pose, measurements: list[Measurement], dp_fn,
               clutter_intensity: float) -> UpdateDiagnostics:
        """One PMB update.

        ``dp_fn`` maps (n, 3) positions to detection probabilities for the
        Bernoulli components; ``clutter_intensity`` is in physical units
        (per second of delay and per radian).
        """
        cfg = self.cfg
        post = self.posterior
        diag = UpdateDiagnostics()
        sc = self.scale
        br = self.branch
        dim = len(sc)
        gate = chi2.ppf(cfg.gate_prob, dim)
        clutter = clutter_intensity / np.prod(sc)

        def h(x):
            return measurement_model(x, ue, ris, br) * sc

        bern = post.bernoullis
        n, m = len(bern), len(measurements)
        dps = np.clip(np.asarray(dp_fn(np.array([b.mean for b in bern]).reshape(-1, 3)), float), 0.0, 1.0) \
            if n else np.zeros(0)

        zs = [mz.z * sc for mz in measurements]
        rs = [sc[:, None] * mz.cov * sc[None, :] for mz in measurements]

        log_miss = np.array([np.log(max(1.0 - b.r * d, 1e-300)) for b, d in zip(bern, dps)])
        log_w = np.full((n, m), -np.inf)
        upd = {}
        for i, b in enumerate(bern):
            if b.r * dps[i] <= 0:
                continue
            try:
                z_hat, pzz, cxz = cubature_moments(b.mean, b.cov, h)
            except (np.linalg.LinAlgError, ValueError):
                continue
            for j in range(m):
                s_mat = pzz + rs[j]
                s_mat = 0.5 * (s_mat + s_mat.T)
                try:
                    s_inv = np.linalg.inv(s_mat)
                except np.linalg.LinAlgError:
                    continue
                nu = wrap_residual(zs[j] - z_hat)
                d2 = float(nu @ s_inv @ nu)
                if d2 > gate:
                    continue
                _, logdet = np.linalg.slogdet(s_mat)
                log_w[i, j] = np.log(b.r * dps[i]) - 0.5 * (d2 + logdet + dim * np.log(2 * np.pi))
                k = cxz @ s_inv
                cov = b.cov - k @ s_mat @ k.T
                upd[i, j] = (b.mean + k @ nu, 0.5 * (cov + cov.T))

        # new-SP hypotheses from the Poisson intensity (Laplace approximation)
        density = cfg.p_detect_intensity * post.mu / post.volume
        log_new = np.empty(m)
        births = []
        for j, mz in enumerate(measurements):
            b_weight, birth = 0.0, None
            try:
                x0 = invert_measurement(mz.z, ue, ris, br, mz.cov)
                x, info = refine_position(mz.z, mz.cov, x0, ue, ris, br)
                cov = np.linalg.inv(info)
                res = wrap_residual(zs[j] - h(x[None])[0])
                r_inv = np.linalg.inv(rs[j])
                _, logdet_r = np.linalg.slogdet(rs[j])
                _, logdet_i = np.linalg.slogdet(info)
                log_l = (-0.5 * (res @ r_inv @ res + logdet_r + dim * np.log(2 * np.pi))
                         + 1.5 * np.log(2 * np.pi) - 0.5 * logdet_i)
                mass = post.box_mass(x, cov)
                if mass > 0 and _is_spd(cov):
                    b_weight = density * mass * np.exp(log_l)
                    birth = (x, 0.5 * (cov + cov.T))
            except (np.linalg.LinAlgError, ValueError):
                pass
            e = clutter + b_weight
            log_new[j] = np.log(e) if e > 0 else -np.inf
            births.append((b_weight / e if e > 0 else 0.0, birth))

        # a measurement with neither clutter nor birth support must come from a Bernoulli
        log_new = np.where(np.isfinite(log_new), log_new, -700.0)
        assoc = association_marginals(log_miss, log_w, log_new, cfg.max_exact, cfg.lbp_tol, cfg.lbp_max_iter)
        diag.association = assoc

        new_list = []
        for i, b in enumerate(bern):
            d = dps[i]
            r_miss = b.r * (1 - d) / (1 - b.r * d) if b.r * d < 1 else 0.0
            weights = [assoc.bern[i, 0] * r_miss]
            means, covs = [b.mean], [b.cov]
            for j in range(m):
                p = assoc.bern[i, j + 1]
                if p > 0 and (i, j) in upd:
                    weights.append(p)
                    means.append(upd[i, j][0])
                    covs.append(upd[i, j][1])
            r_post = float(sum(weights))
            if r_post <= 0:
                continue
            mean, cov = _moment_match(weights, means, covs)
            if not _is_spd(cov):
                diag.dropped_non_spd += 1
                log.debug("dropping Bernoulli with non-SPD covariance")
                continue
            new_list.append(Bernoulli(min(r_post, 1.0), mean, cov))
        for j, (r_new, birth) in enumerate(births):
            if birth is None:
                continue
            r = assoc.meas[j, 0] * r_new
            if r > cfg.prune_threshold:
                new_list.append(Bernoulli(float(min(r, 1.0)), birth[0], birth[1]))
                diag.births += 1

        post.mu *= 1.0 - cfg.p_detect_intensity
        post.bernoullis = merge_components(
            [b for b in new_list if b.r >= cfg.prune_threshold], cfg.merge_threshold)
        self.diagnostics = diag
        return diag


def merge_components(bernoullis: list, threshold: float) -> list:
    """Merge Bernoullis whose means are within ``threshold`` Mahalanobis distance.

    Distances use the covariance of the dominant (highest-existence)
    component; merged existence is ``1 - (1 - r1)(1 - r2)``.
    """
    rest = sorted(bernoullis, key=lambda b: -b.r)
    out = []
    while rest:
        lead = rest.pop(0)
        p_inv = np.linalg.inv(lead.cov)
        group, keep = [lead], []
        for b in rest:
            d = b.mean - lead.mean
            (group if d @ p_inv @ d < threshold else keep).append(b)
        rest = keep
        if len(group) == 1:
            out.append(lead)
            continue
        r = 1.0 - np.prod([1.0 - b.r for b in group])
        mean, cov = _moment_match([b.r for b in group], [b.mean for b in group], [b.cov for b in group])
        out.append(Bernoulli(float(r), mean, cov))
    return out
