"""Marginal data-association probabilities for the point-target PMB update.

Weights are supplied in the log domain as

* ``log_miss[i]``: Bernoulli i produced no measurement,
* ``log_w[i, j]``: Bernoulli i produced measurement j (``-inf`` if gated out),
* ``log_new[j]``: measurement j is clutter or a new SP.

A global hypothesis assigns each Bernoulli either a miss or a distinct
measurement; unassigned measurements take their ``new`` weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MAX_EXACT_HYPOTHESES = 10_000


@dataclass
class AssociationMatrix:
    """Association marginals.

    ``bern[i, 0]`` is the miss probability of Bernoulli i, ``bern[i, j + 1]``
    the probability that it generated measurement j. ``meas[j, 0]`` is the
    probability that measurement j is new/clutter and ``meas[j, i + 1]`` that
    it came from Bernoulli i.
    """

    bern: np.ndarray
    meas: np.ndarray
    method: str = "exact"


def _log_ratios(log_miss, log_w, log_new):
    return log_w - log_miss[:, None] - log_new[None, :]


def count_hypotheses(log_psi, limit=MAX_EXACT_HYPOTHESES + 1) -> int:
    """Number of global hypotheses (capped at ``limit``)."""
    n, m = log_psi.shape
    allowed = [np.flatnonzero(np.isfinite(log_psi[i])) for i in range(n)]
    count = 0
    stack = [(0, frozenset())]
    while stack:
        i, used = stack.pop()
        if i == n:
            count += 1
            if count >= limit:
                return count
            continue
        stack.append((i + 1, used))
        for j in allowed[i]:
            if j not in used:
                stack.append((i + 1, used | {j}))
    return count


def exact_marginals(log_miss, log_w, log_new) -> AssociationMatrix:
    """Marginals by enumerating every global hypothesis."""
    log_psi = _log_ratios(np.asarray(log_miss, float), np.asarray(log_w, float), np.asarray(log_new, float))
    n, m = log_psi.shape
    allowed = [np.flatnonzero(np.isfinite(log_psi[i])) for i in range(n)]
    logs, assigns = [], []

    def rec(i, used, acc, assign):
        if i == n:
            logs.append(acc)
            assigns.append(tuple(assign))
            return
        assign.append(-1)
        rec(i + 1, used, acc, assign)
        assign.pop()
        for j in allowed[i]:
            if j not in used:
                used.add(j)
                assign.append(j)
                rec(i + 1, used, acc + log_psi[i, j], assign)
                assign.pop()
                used.discard(j)

    rec(0, set(), 0.0, [])
    logs = np.asarray(logs)
    prob = np.exp(logs - logsumexp(logs))
    bern = np.zeros((n, m + 1))
    meas = np.zeros((m, n + 1))
    for p, a in zip(prob, assigns):
        for i, j in enumerate(a):
            bern[i, j + 1] += p
            if j >= 0:
                meas[j, i + 1] += p
    meas[:, 0] = 1.0 - meas[:, 1:].sum(axis=1)
    meas[:, 0] = np.clip(meas[:, 0], 0.0, 1.0)
    return AssociationMatrix(bern, meas, "exact")


def lbp_marginals(log_miss, log_w, log_new, tol: float = 1e-6, max_iter: int = 200) -> AssociationMatrix:
    """Loopy belief propagation on the bipartite association graph.

    Message passing between Bernoulli and measurement nodes in the log
    domain, iterated until the largest message change is below ``tol``.
    """
    log_psi = _log_ratios(np.asarray(log_miss, float), np.asarray(log_w, float), np.asarray(log_new, float))
    n, m = log_psi.shape
    log_mu = np.zeros((n, m))                  # measurement j -> Bernoulli i
    log_nu = np.full((n, m), -np.inf)          # Bernoulli i -> measurement j
    for _ in range(max_iter):
        new_nu = log_psi - np.logaddexp(0.0, _loo_logsumexp(log_psi + log_mu, axis=1))
        new_mu = -np.logaddexp(0.0, _loo_logsumexp(new_nu, axis=0))
        delta = np.max(np.abs(np.exp(new_mu) - np.exp(log_mu))) if n and m else 0.0
        log_mu, log_nu = new_mu, new_nu
        if delta < tol:
            break
    bern_log = np.column_stack([np.zeros(n), log_psi + log_mu])
    bern = np.exp(bern_log - logsumexp(bern_log, axis=1, keepdims=True))
    meas_log = np.column_stack([np.zeros(m), log_nu.T])
    meas = np.exp(meas_log - logsumexp(meas_log, axis=1, keepdims=True))
    return AssociationMatrix(bern, meas, "lbp")


def _loo_logsumexp(a, axis):
    """``out[..., k] = logsumexp`` over the other entries along ``axis``."""
    a = np.moveaxis(a, axis, -1)
    k = a.shape[-1]
    rep = np.broadcast_to(a[..., None, :], a.shape + (k,)).copy()
    idx = np.arange(k)
    rep[..., idx, idx] = -np.inf
    out = logsumexp(rep, axis=-1) if k > 1 else np.full(a.shape, -np.inf)
    return np.moveaxis(out, -1, axis)


def _clusters(gate: np.ndarray):
    """Connected components of the Bernoulli-measurement gating graph."""
    n, m = gate.shape
    parent = list(range(n + m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in zip(*np.nonzero(gate)):
        ra, rb = find(i), find(n + j)
        if ra != rb:
            parent[ra] = rb
    groups = {}
    for k in range(n + m):
        groups.setdefault(find(k), []).append(k)
    out = []
    for members in groups.values():
        bi = [k for k in members if k < n]
        mj = [k - n for k in members if k >= n]
        out.append((np.array(bi, dtype=int), np.array(mj, dtype=int)))
    return out


def association_marginals(log_miss, log_w, log_new, max_exact: int = MAX_EXACT_HYPOTHESES,
                          tol: float = 1e-6, max_iter: int = 200) -> AssociationMatrix:
    """Cluster the problem and solve each cluster exactly or by LBP."""
    log_miss = np.asarray(log_miss, float)
    log_new = np.asarray(log_new, float)
    log_w = np.asarray(log_w, float).reshape(len(log_miss), len(log_new))
    n, m = log_w.shape
    bern = np.zeros((n, m + 1))
    meas = np.zeros((m, n + 1))
    method = "exact"
    for bi, mj in _clusters(np.isfinite(log_w)):
        if len(mj) == 0:
            bern[bi, 0] = 1.0
            continue
        if len(bi) == 0:
            meas[mj, 0] = 1.0
            continue
        sub = (log_miss[bi], log_w[np.ix_(bi, mj)], log_new[mj])
        psi = _log_ratios(*sub)
        if count_hypotheses(psi, max_exact + 1) <= max_exact:
            res = exact_marginals(*sub)
        else:
            res = lbp_marginals(*sub, tol=tol, max_iter=max_iter)
            method = "lbp"
        bern[np.ix_(bi, np.concatenate([[0], mj + 1]))] = res.bern
        meas[np.ix_(mj, np.concatenate([[0], bi + 1]))] = res.meas
    return AssociationMatrix(bern, meas, method)
