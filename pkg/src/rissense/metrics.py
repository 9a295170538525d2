"""GOSPA distance between estimated and true SP sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class GospaConfig:
    p: float = 2.0
    c: float = 20.0
    alpha: float = 2.0

    def __post_init__(self):
        if self.p < 1 or self.c <= 0 or not 0 < self.alpha <= 2:
            raise ValueError("GOSPA needs p >= 1, c > 0 and 0 < alpha <= 2")


@dataclass
class GospaResult:
    total: float
    localization: float
    missed: int
    false: int


def gospa(estimates, truth, cfg: GospaConfig = GospaConfig()) -> GospaResult:
    """GOSPA with optimal assignment on the cut-off distance matrix.

    ``localization`` is the p-th power sum over assigned pairs (before the
    1/p root), so ``total**p == localization + c**p / alpha * (missed + false)``
    for ``alpha = 2``.
    """
    x = np.asarray(estimates, dtype=float).reshape(-1, 3) if np.size(estimates) else np.zeros((0, 3))
    y = np.asarray(truth, dtype=float).reshape(-1, 3) if np.size(truth) else np.zeros((0, 3))
    p, c, alpha = cfg.p, cfg.c, cfg.alpha
    nx, ny = len(x), len(y)
    pen = c**p / alpha
    if nx == 0 or ny == 0:
        return GospaResult(float((pen * (nx + ny)) ** (1 / p)), 0.0, ny, nx)
    d = np.minimum(np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1), c)
    cost = d**p
    rows, cols = linear_sum_assignment(cost)
    # with alpha = 2 a pair at the cut-off costs as much as a miss plus a false estimate
    assigned = d[rows, cols] < c
    loc = float(cost[rows, cols][assigned].sum())
    n_assigned = int(assigned.sum())
    missed = ny - n_assigned
    false = nx - n_assigned
    total_p = cost[rows, cols].sum() + pen * abs(nx - ny)
    return GospaResult(float(total_p ** (1 / p)), loc, missed, false)
