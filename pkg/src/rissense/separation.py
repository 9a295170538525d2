"""Separation of RIS / non-RIS signals and of the two double-bounce paths.

The RIS sign flip within each transmission pair isolates the RIS-controlled
paths (difference) from the UE-SP-UE paths (sum). Inside the RIS part, T1
transmissions beam towards the RIS and a combiner orthogonal to the RIS
direction rejects the UE-RIS-UE path; T2 transmissions put a null on the RIS
so that the projection onto the RIS direction keeps only UE-SP-RIS-UE paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import RxSignalBlock, UpaConfig, steering_vector


@dataclass
class PrecoderPlan:
    """Per-pair precoders: ``t1`` towards the RIS, ``t2`` with a null on it."""

    t1: np.ndarray
    t2: np.ndarray

    @property
    def n_t1(self) -> int:
        return len(self.t1)

    @property
    def n_t2(self) -> int:
        return len(self.t2)

    def base(self) -> np.ndarray:
        """Precoders of the T/2 transmission pairs, shape (T/2, N_U)."""
        return np.concatenate([self.t1, self.t2], axis=0)

    def expanded(self) -> np.ndarray:
        """Per-transmission precoders (T, N_U); both members of a pair share one."""
        return np.repeat(self.base(), 2, axis=0)


@dataclass
class Combiner:
    """Unitary combiner whose first column is the normalized RIS direction."""

    matrix: np.ndarray

    @property
    def first(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def perp(self) -> np.ndarray:
        return self.matrix[:, 1:]


@dataclass
class SeparatedSignals:
    y_d: np.ndarray          # (T1, N_SC, N_U - 1)
    y_o: np.ndarray          # (T2, N_SC)
    y_n: np.ndarray          # (T/2, N_SC, N_U)
    noise_var: float         # per complex sample, every branch


def split_t1_t2(n_pairs: int, split_ratio: float = 1.0) -> tuple[int, int]:
    n_t1 = int(round(n_pairs * split_ratio / (1.0 + split_ratio)))
    return n_t1, n_pairs - n_t1


def build_combiner(a_u0) -> Combiner:
    """Complete ``a_u0 / ||a_u0||`` to a unitary matrix via QR."""
    u = np.asarray(a_u0, dtype=complex)
    u = u / np.linalg.norm(u)
    n = len(u)
    if n < 2:
        raise ValueError("a combiner needs at least two antennas")
    basis = np.column_stack([u, np.eye(n, dtype=complex)])
    # drop the unit vector most aligned with u so the remaining set stays full rank
    drop = 1 + int(np.argmax(np.abs(u)))
    basis = np.delete(basis, drop, axis=1)
    q, _ = np.linalg.qr(basis)
    w = q.copy()
    w[:, 0] = u
    return Combiner(w)


def _random_unit(rng, n, count):
    g = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def build_precoder_plan(theta_0, cfg: UpaConfig, n_transmissions: int, wavelength: float,
                        split_ratio: float = 1.0, rng=None, t1_mode: str = "directional") -> PrecoderPlan:
    """Precoders for the T/2 transmission pairs.

    T1 pairs use the matched beam ``conj(a_U(theta_0)) / ||a_U||`` (or random
    unit vectors with ``t1_mode="random"``); the T2 pairs use random unit
    vectors projected so that ``a_U(theta_0)^T f = 0``, i.e. nothing is
    radiated towards the RIS.
    """
    if cfg.size < 2:
        raise ValueError("a null towards the RIS needs N_U >= 2")
    n_pairs = n_transmissions // 2
    if n_pairs < 2:
        raise ValueError("need at least two transmission pairs")
    n_t1, n_t2 = split_t1_t2(n_pairs, split_ratio)
    if rng is None:
        rng = np.random.default_rng()
    a0 = steering_vector(cfg, theta_0, wavelength)
    if t1_mode == "directional":
        t1 = np.tile(np.conj(a0) / np.linalg.norm(a0), (n_t1, 1))
    elif t1_mode == "random":
        t1 = _random_unit(rng, cfg.size, n_t1)
    else:
        raise ValueError(f"unknown T1 precoder mode {t1_mode!r}")
    # a0^T f = 0  <=>  f orthogonal to conj(a0)
    u = np.conj(a0) / np.linalg.norm(a0)
    g = _random_unit(rng, cfg.size, n_t2)
    g = g - np.outer(g @ np.conj(u), u)
    t2 = g / np.linalg.norm(g, axis=1, keepdims=True)
    return PrecoderPlan(t1=t1, t2=t2)


def split_ris_nonris(rx: RxSignalBlock) -> tuple[np.ndarray, np.ndarray]:
    """Half-difference and half-sum over transmission pairs.

    Returns ``(y_R, y_N)`` with shape (T/2, N_SC, N_U). The difference is
    taken as first-minus-second member of the pair, so y_R carries the RIS
    paths with the sign of the base profile.
    """
    y = rx.samples
    if y.shape[0] % 2:
        raise ValueError("number of transmissions must be even")
    first, second = y[0::2], y[1::2]
    return (first - second) / 2, (first + second) / 2


def extract_directional(y_r, combiner: Combiner, n_t1: int) -> np.ndarray:
    """``W_perp^H y_R`` over the first T1 pairs (UE-RIS-SP-UE observation)."""
    return np.einsum("nm,tsn->tsm", combiner.perp.conj(), y_r[:n_t1])


def extract_orthogonal(y_r, combiner: Combiner, n_t1: int) -> np.ndarray:
    """Projection of the last T2 pairs on the RIS direction (UE-SP-RIS-UE)."""
    return y_r[n_t1:] @ combiner.first.conj()


def separate(rx: RxSignalBlock, plan: PrecoderPlan, combiner: Combiner) -> SeparatedSignals:
    y_r, y_n = split_ris_nonris(rx)
    return SeparatedSignals(
        y_d=extract_directional(y_r, combiner, plan.n_t1),
        y_o=extract_orthogonal(y_r, combiner, plan.n_t1),
        y_n=y_n,
        noise_var=rx.noise_psd / 2,
    )
