"""Rank-quality and regression metrics for screening evaluations.

Kendall tau here is the tie-adjusted tau-b, computed with a merge-sort
swap count (O(n log n)).  The screening metrics count how many oracle
evaluations a predicted ranking would cost (N_OL), how sub-optimal the
predicted best is by rank (N_sub), and by value (J_sub).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class MetricError(ValueError):
    pass


class UndefinedTauError(MetricError):
    pass


def _merge_count(y: list, buf: list, lo: int, hi: int) -> int:
    """Sort y[lo:hi] in place, returning the number of inversions."""
    if hi - lo <= 1:
        return 0
    mid = (lo + hi) // 2
    swaps = _merge_count(y, buf, lo, mid) + _merge_count(y, buf, mid, hi)
    i, j, k = lo, mid, lo
    while i < mid and j < hi:
        if y[j] < y[i]:
            buf[k] = y[j]
            swaps += mid - i
            j += 1
        else:
            buf[k] = y[i]
            i += 1
        k += 1
    buf[k:hi] = y[i:mid] if i < mid else y[j:hi]
    y[lo:hi] = buf[lo:hi]
    return swaps


def _tie_term(values) -> int:
    total = 0
    run = 1
    for prev, cur in zip(values, values[1:]):
        if cur == prev:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-adjusted rank agreement in [-1, 1] (Knight's algorithm)."""
    if len(x) != len(y):
        raise MetricError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise MetricError("need at least two observations")
    pairs = sorted(zip(x, y))
    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]

    n0 = n * (n - 1) // 2
    n1 = _tie_term(xs)
    n3 = _tie_term(pairs)
    n2 = _tie_term(sorted(ys))

    if n0 == n1 or n0 == n2:
        raise UndefinedTauError("tau undefined: one input is entirely tied")

    # discordant swaps, counted while merge-sorting y in x-then-y order;
    # pairs tied in x were pre-sorted by y so they contribute no swaps
    swaps = _merge_count(ys, ys.copy(), 0, n)
    concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps
    return concordant_minus_discordant / math.sqrt((n0 - n1) * (n0 - n2))


def _check_pair(J, J_hat):
    J = np.asarray(J, dtype=np.float64)
    J_hat = np.asarray(J_hat, dtype=np.float64)
    if J.size == 0:
        raise MetricError("empty input")
    if J.shape != J_hat.shape:
        raise MetricError(f"shape mismatch: {J.shape} vs {J_hat.shape}")
    return J, J_hat


def n_ol(J, J_hat) -> int:
    """How many graphs the predictor ranks above the true optimum.

    N_OL + 1 is the number of top-ranked candidates the oracle must check
    to certify the true best.  Argmax ties break to the lowest index.
    """
    J, J_hat = _check_pair(J, J_hat)
    i_star = int(np.argmax(J))
    return int(np.sum(J_hat > J_hat[i_star]))


def n_sub(J, J_hat) -> int:
    """How many graphs truly outperform the predicted optimum."""
    J, J_hat = _check_pair(J, J_hat)
    i_hat_star = int(np.argmax(J_hat))
    return int(np.sum(J > J[i_hat_star]))


def j_sub(J, J_hat) -> float:
    """True value of the predicted optimum relative to the true optimum."""
    J, J_hat = _check_pair(J, J_hat)
    J_max = float(np.max(J))
    if J_max <= 0:
        raise MetricError("j_sub requires a positive true maximum")
    return float(J[int(np.argmax(J_hat))]) / J_max


def regression_report(J, J_hat) -> dict:
    J, J_hat = _check_pair(J, J_hat)
    if J.size < 2:
        raise MetricError("need at least two observations")
    resid = J - J_hat
    mse = float(np.mean(resid ** 2))
    ss_tot = float(np.sum((J - J.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("R^2 undefined: true values have zero variance")
    return {
        "MSE": mse,
        "MAE": float(np.mean(np.abs(resid))),
        "RMSE": math.sqrt(mse),
        "R2": 1.0 - float(np.sum(resid ** 2)) / ss_tot,
    }


@dataclass(frozen=True)
class ScenarioEval:
    """Rank metrics for one scenario's graph population."""

    scenario_id: int
    group: str                  # population tag, e.g. "S3" or "M3"
    n_graphs: int
    tau: Optional[float]
    N_OL: int
    N_sub: int
    J_sub: float

    @classmethod
    def from_values(cls, scenario_id: int, group: str, J, J_hat) -> "ScenarioEval":
        try:
            tau = kendall_tau(list(J), list(J_hat))
        except UndefinedTauError:
            tau = None
        return cls(
            scenario_id=scenario_id,
            group=group,
            n_graphs=len(J),
            tau=tau,
            N_OL=n_ol(J, J_hat),
            N_sub=n_sub(J, J_hat),
            J_sub=j_sub(J, J_hat),
        )


def write_scenario_evals(rows: Sequence[ScenarioEval], path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario_id", "group", "n_graphs", "tau", "N_OL", "N_sub", "J_sub"]
        )
        for r in rows:
            writer.writerow(
                [r.scenario_id, r.group, r.n_graphs,
                 "" if r.tau is None else repr(r.tau),
                 r.N_OL, r.N_sub, repr(r.J_sub)]
            )
