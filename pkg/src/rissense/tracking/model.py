"""Measurement model from SP position to channel parameters, and its inverse."""

from __future__ import annotations

import numpy as np

from ..geometry import SPEED_OF_LIGHT, Pose, UEState, channel_params, unit_vector
from ..measurement import wrap_residual

DIM = {"R": 5, "N": 3}

#: delay components are converted to metres inside the filters
_DELAY_SCALE = {"R": np.array([1.0, 1.0, SPEED_OF_LIGHT, 1.0, 1.0]),
                "N": np.array([SPEED_OF_LIGHT, 1.0, 1.0])}


def delay_scale(branch: str) -> np.ndarray:
    return _DELAY_SCALE[_key(branch)]


def _key(branch):
    if branch in ("R", "D", "O"):
        return "R"
    if branch == "N":
        return "N"
    raise ValueError(f"unknown branch {branch!r}")


def measurement_model(sp, ue: UEState, ris: Pose, branch: str) -> np.ndarray:
    """Noiseless measurement of SP positions ``sp`` (3,) or (M, 3).

    R branch (and D / O): ``[phi_az, phi_el, tau, theta_az, theta_el]``;
    N branch: ``[tau_bar, theta_az, theta_el]``. Delays in seconds.
    """
    sp = np.asarray(sp, dtype=float)
    single = sp.ndim == 1
    p = channel_params(ue, ris, np.atleast_2d(sp))
    if _key(branch) == "R":
        z = np.column_stack([p.aod_ris[1:], p.toa[1:], p.aod_ue[1:]])
    else:
        z = np.column_stack([p.toa_bar, p.aod_ue[1:]])
    return z[0] if single else z


def _angle_jacobian(v, rot):
    """d[az, el]/dx for local vector ``v = rot (x - origin)``."""
    x, y, z = v
    rho2 = x * x + y * y
    r2 = rho2 + z * z
    rho = np.sqrt(rho2)
    d_az = np.array([-y, x, 0.0]) / rho2
    d_el = (np.array([0.0, 0.0, r2]) - z * v) / (r2 * rho)
    return np.vstack([d_az, d_el]) @ rot


def measurement_jacobian(sp, ue: UEState, ris: Pose, branch: str) -> np.ndarray:
    """Analytic Jacobian of :func:`measurement_model` w.r.t. the SP position."""
    sp = np.asarray(sp, dtype=float)
    rot_u = ue.rotation
    d_us = sp - ue.position
    u_us = d_us / np.linalg.norm(d_us)
    j_theta = _angle_jacobian(rot_u @ d_us, rot_u)
    if _key(branch) == "N":
        return np.vstack([2 * u_us / SPEED_OF_LIGHT, j_theta])
    d_rs = sp - ris.position
    u_rs = d_rs / np.linalg.norm(d_rs)
    j_phi = _angle_jacobian(ris.rotation @ d_rs, ris.rotation)
    return np.vstack([j_phi, (u_rs + u_us) / SPEED_OF_LIGHT, j_theta])


def invert_measurement(z, ue: UEState, ris: Pose, branch: str, cov=None) -> np.ndarray:
    """Closed-form SP position consistent with a measurement.

    N: range ``c tau_bar / 2`` along the UE bearing. R: the delay fixes the
    sum of the RIS-SP and SP-UE distances; intersect that ellipsoid with the
    more precise of the two bearings (by the trace of its covariance block).
    """
    z = np.asarray(z, dtype=float)
    x_u, x_r = ue.position, ris.position
    if _key(branch) == "N":
        dirn = ue.rotation.T @ unit_vector(z[1:3])
        return x_u + 0.5 * SPEED_OF_LIGHT * z[0] * dirn
    d_ur = np.linalg.norm(x_u - x_r)
    total = SPEED_OF_LIGHT * z[2] - d_ur          # |x - x_R| + |x - x_U|
    use_ue = True
    if cov is not None:
        cov = np.asarray(cov)
        use_ue = np.trace(cov[3:5, 3:5]) <= np.trace(cov[0:2, 0:2])
    if use_ue:
        origin, other, dirn = x_u, x_r, ue.rotation.T @ unit_vector(z[3:5])
    else:
        origin, other, dirn = x_r, x_u, ris.rotation.T @ unit_vector(z[0:2])
    v = origin - other
    denom = 2 * (total + v @ dirn)
    s = (total**2 - v @ v) / denom if denom > 1e-9 else 0.0
    return origin + max(s, 1e-3) * dirn


def refine_position(z, cov, x0, ue: UEState, ris: Pose, branch: str, n_iter: int = 10):
    """Gauss-Newton fit of the SP position; returns ``(x, info)`` with ``info = J^T R^-1 J``."""
    sc = delay_scale(branch)
    zs = np.asarray(z) * sc
    r_inv = np.linalg.inv(sc[:, None] * np.asarray(cov) * sc[None, :])
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(n_iter):
        try:
            jac = measurement_jacobian(x, ue, ris, branch) * sc[:, None]
            res = wrap_residual(zs - measurement_model(x, ue, ris, branch) * sc)
        except ValueError:
            break
        info = jac.T @ r_inv @ jac
        try:
            dx = np.linalg.solve(info, jac.T @ r_inv @ res)
        except np.linalg.LinAlgError:
            break
        # keep steps bounded so a poor start cannot jump through the UE or RIS
        norm = np.linalg.norm(dx)
        if norm > 10.0:
            dx *= 10.0 / norm
        x = x + dx
        if norm < 1e-6:
            break
    jac = measurement_jacobian(x, ue, ris, branch) * sc[:, None]
    return x, jac.T @ r_inv @ jac

