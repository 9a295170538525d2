"""Generalized covariance intersection of two PMB posteriors."""

from __future__ import annotations

import copy

import numpy as np

from .pmb import Bernoulli, PMBPosterior


def ci_gaussian(m1, p1, m2, p2, w1: float, w2: float):
    """Covariance-intersection Gaussian and the log GCI normalizer.

    Returns ``(mean, cov, log_g)`` with ``g = int N(x; m1, P1)^w1 N(x; m2, P2)^w2 dx``.
    """
    i1, i2 = np.linalg.inv(p1), np.linalg.inv(p2)
    info = w1 * i1 + w2 * i2
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (w1 * i1 @ m1 + w2 * i2 @ m2)
    n = len(m1)
    # log of the unnormalized product evaluated in closed form
    _, ld1 = np.linalg.slogdet(p1)
    _, ld2 = np.linalg.slogdet(p2)
    _, ldf = np.linalg.slogdet(cov)
    quad = w1 * m1 @ i1 @ m1 + w2 * m2 @ i2 @ m2 - mean @ info @ mean
    log_g = (0.5 * n * (1 - w1 - w2) * np.log(2 * np.pi) - 0.5 * (w1 * ld1 + w2 * ld2)
             + 0.5 * ldf - 0.5 * quad)
    return mean, cov, float(log_g)


def gci_existence(r1: float, r2: float, w1: float, w2: float, log_g: float) -> float:
    """Fused existence of two matched Bernoullis."""
    num = np.exp(w1 * np.log(max(r1, 1e-300)) + w2 * np.log(max(r2, 1e-300)) + log_g)
    den = (1 - r1) ** w1 * (1 - r2) ** w2 + num
    return float(num / den) if den > 0 else 1.0


def damp_existence(r: float, w: float) -> float:
    """Existence of a Bernoulli without a counterpart: ``r^w / (r^w + (1-r)^w)``."""
    a, b = r**w, (1 - r) ** w
    return float(a / (a + b))


def gci_fuse(post_r: PMBPosterior, post_n: PMBPosterior, w_r: float = 0.5, w_n: float = 0.5,
             gate: float = 36.0) -> PMBPosterior:
    """Fuse two PMB posteriors with GCI weights ``w_r + w_n = 1``.

    Bernoullis are paired one-to-one among gated candidates (Mahalanobis
    distance between means with metric ``(P_R + P_N)^-1`` below ``gate``),
    taking pairs in descending ``r_R r_N`` and then ascending distance.
    Paired components are fused by covariance intersection with the GCI
    existence rule. A leftover component that gates with an already paired
    counterpart and with that pair's member from its own posterior is a
    duplicate of that SP and is absorbed by the pair; the remaining unpaired
    ones keep their density and get damped existence. The uniform
    intensities combine geometrically.
    """
    if not (0.0 <= w_r <= 1.0 and 0.0 <= w_n <= 1.0) or abs(w_r + w_n - 1.0) > 1e-12:
        raise ValueError(f"fusion weights must be in [0, 1] and sum to 1, got {w_r}, {w_n}")
    br, bn = post_r.bernoullis, post_n.bernoullis
    cand = []
    for i, a in enumerate(br):
        for j, b in enumerate(bn):
            d = a.mean - b.mean
            dist = float(d @ np.linalg.solve(a.cov + b.cov, d))
            if dist < gate:
                cand.append((-a.r * b.r, dist, i, j))
    cand.sort()
    used_r, used_n, fused, pairs = set(), set(), [], []
    for _, _, i, j in cand:
        if i in used_r or j in used_n:
            continue
        used_r.add(i)
        used_n.add(j)
        pairs.append((i, j))
        a, b = br[i], bn[j]
        if w_r == 1.0 or w_n == 1.0:
            keep = a if w_r == 1.0 else b
            fused.append(copy.deepcopy(keep))
            continue
        mean, cov, log_g = ci_gaussian(a.mean, a.cov, b.mean, b.cov, w_r, w_n)
        fused.append(Bernoulli(gci_existence(a.r, b.r, w_r, w_n, log_g), mean, cov))
    paired_r, paired_n = dict(pairs), {j: i for i, j in pairs}

    def twin(a, b):
        d = a.mean - b.mean
        return float(d @ np.linalg.solve(a.cov + b.cov, d)) < gate

    for _, _, i, j in cand:
        # duplicates: gated with a paired counterpart and with that pair's own-side member
        if i not in paired_r and j in paired_n and twin(br[i], br[paired_n[j]]):
            used_r.add(i)
        if j not in paired_n and i in paired_r and twin(bn[j], bn[paired_r[i]]):
            used_n.add(j)
    for i, a in enumerate(br):
        if i not in used_r:
            fused.append(Bernoulli(damp_existence(a.r, w_r), a.mean.copy(), a.cov.copy()))
    for j, b in enumerate(bn):
        if j not in used_n:
            fused.append(Bernoulli(damp_existence(b.r, w_n), b.mean.copy(), b.cov.copy()))
    mu = post_r.mu**w_r * post_n.mu**w_n
    return PMBPosterior(mu, post_r.low.copy(), post_r.high.copy(), fused)
