"""Coordinate frames, per-path channel parameters and the UE trajectory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3e8

_STRAIGHT_LIMIT = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when two of the UE, RIS and SP positions coincide."""


def wrap_angle(angle):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(angle, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def yaw_rotation(heading: float) -> np.ndarray:
    """Global-to-local rotation of a body whose local x-axis points along `heading`."""
    c, s = np.cos(heading), np.sin(heading)
    # rows are the local axes expressed in global coordinates
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def direction_angles(v):
    """Azimuth/elevation of (local) vectors, shape (..., 3) -> (..., 2)."""
    v = np.asarray(v, dtype=float)
    az = np.arctan2(v[..., 1], v[..., 0])
    # arctan2 stays accurate near the poles where arcsin(z / r) does not
    el = np.arctan2(v[..., 2], np.hypot(v[..., 0], v[..., 1]))
    return np.stack([az, el], axis=-1)


def unit_vector(angles):
    """Inverse of :func:`direction_angles` for unit range."""
    angles = np.asarray(angles, dtype=float)
    az, el = angles[..., 0], angles[..., 1]
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class UEState:
    """Monostatic sensor state at one epoch."""

    position: np.ndarray
    heading: float
    speed: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if self.speed < 0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))
        object.__setattr__(self, "speed", float(self.speed))

    @property
    def rotation(self) -> np.ndarray:
        return yaw_rotation(self.heading)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, [self.heading, self.speed]])


@dataclass(frozen=True)
class Pose:
    """Position plus global-to-local rotation of a rigid array."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-12, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) <= 0:
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def at(cls, position, rotation=None) -> "Pose":
        return cls(position, np.eye(3) if rotation is None else rotation)

    @property
    def normal(self) -> np.ndarray:
        """Array broadside direction (local x-axis) in global coordinates."""
        return self.rotation[0].copy()

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation.T


@dataclass(frozen=True)
class ChannelParams:
    """Geometric channel parameters of one epoch.

    Index 0 of the controlled arrays is the UE-RIS-UE path; index l >= 1 the
    paths through scattering point l. The uncontrolled delays are stored for
    l = 1..L only, so ``toa_bar[l - 1]`` pairs with ``toa[l]``.
    """

    toa: np.ndarray
    toa_bar: np.ndarray
    aod_ris: np.ndarray
    aod_ue: np.ndarray

    @property
    def n_sp(self) -> int:
        return len(self.toa_bar)


def _check_distinct(d, what):
    if np.any(np.asarray(d) < 1e-9):
        raise DegenerateGeometryError(f"coincident {what} positions")


def channel_params(ue, ris: Pose, sp=None, ue_rotation=None) -> ChannelParams:
    """Delays and angles of the UE-RIS path and of every SP path.

    Parameters
    ----------
    ue : UEState or array_like
        UE state, or a bare position (then ``ue_rotation`` is required).
    ris : Pose
        RIS position and orientation.
    sp : array_like, optional
        One SP position (3,) or several (L, 3). Omitted: only l = 0 returned.
    ue_rotation : ndarray, optional
        Global-to-local UE rotation; defaults to the yaw of ``ue.heading``.
    """
    if isinstance(ue, UEState):
        x_u = ue.position
        rot_u = ue.rotation if ue_rotation is None else np.asarray(ue_rotation, dtype=float)
    else:
        x_u = np.asarray(ue, dtype=float).reshape(3)
        if ue_rotation is None:
            raise ValueError("ue_rotation is required when ue is a bare position")
        rot_u = np.asarray(ue_rotation, dtype=float)
    x_r = ris.position
    sps = np.zeros((0, 3)) if sp is None else np.atleast_2d(np.asarray(sp, dtype=float))

    d_ur = np.linalg.norm(x_u - x_r)
    _check_distinct(d_ur, "UE and RIS")
    d_rs = np.linalg.norm(sps - x_r, axis=1)
    d_su = np.linalg.norm(sps - x_u, axis=1)
    _check_distinct(d_rs, "SP and RIS")
    _check_distinct(d_su, "SP and UE")

    toa = np.concatenate([[2 * d_ur], d_ur + d_rs + d_su]) / SPEED_OF_LIGHT
    toa_bar = 2 * d_su / SPEED_OF_LIGHT

    at_ris = np.vstack([x_u, sps]) - x_r
    at_ue = np.vstack([x_r, sps]) - x_u
    aod_ris = direction_angles(at_ris @ ris.rotation.T)
    aod_ue = direction_angles(at_ue @ rot_u.T)
    return ChannelParams(toa=toa, toa_bar=toa_bar, aod_ris=aod_ris, aod_ue=aod_ue)


def constant_turn_step(state: UEState, turn_rate: float, dt: float) -> UEState:
    """Advance a UE state by one step of the planar constant-turn model."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    h, v = state.heading, state.speed
    wdt = turn_rate * dt
    if abs(wdt) < _STRAIGHT_LIMIT:
        # second-order expansion of the arc about omega = 0
        dx = v * dt * (np.cos(h) - 0.5 * wdt * np.sin(h))
        dy = v * dt * (np.sin(h) + 0.5 * wdt * np.cos(h))
    else:
        r = v / turn_rate
        dx = r * (np.sin(h + wdt) - np.sin(h))
        dy = r * (np.cos(h) - np.cos(h + wdt))
    pos = state.position + np.array([dx, dy, 0.0])
    return UEState(pos, h + wdt, v)


def trajectory(initial: UEState, turn_rate: float, dt: float, n_steps: int) -> list[UEState]:
    """States s_0 .. s_K of the constant-turn model (length n_steps + 1)."""
    states = [initial]
    for _ in range(n_steps):
        states.append(constant_turn_step(states[-1], turn_rate, dt))
    return states
