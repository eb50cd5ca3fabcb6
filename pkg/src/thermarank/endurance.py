"""Endurance labels: maximize time-to-limit over admissible flow schedules.

Direct approach: piecewise-constant fractions at every fork, reparameterized
through a floored softmax so the simplex constraint always holds, searched
with multi-start Nelder-Mead.  The uniform schedule is always evaluated, so
the label can never fall below the uniform baseline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .architectures import Architecture, FeatureGraph, Scenario, node_features
from .plant import (
    F_MIN,
    ControlSchedule,
    IntegrationError,
    PlantParams,
    default_params,
    plant_topology,
    simulate,
    uniform_schedule,
)


@dataclass(frozen=True)
class OlocConfig:
    n_intervals: int = 4
    max_evals: int = 400
    restarts: int = 3
    seed: int = 0
    convergence_tol: float = 0.5    # s

    def __post_init__(self):
        if min(self.n_intervals, self.max_evals, self.restarts + 1) < 1:
            raise ValueError("oloc config values must be positive")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True)
class Label:
    J: float                        # s, optimized endurance
    best_controls: ControlSchedule
    evals_used: int


@dataclass(frozen=True)
class LabeledInstance:
    arch: Architecture
    scenario: Scenario
    fg: FeatureGraph
    label: Label


@dataclass(frozen=True)
class SkipRecord:
    arch_key: str
    scenario_id: int
    reason: str


def baseline_uniform(arch: Architecture, cfg: OlocConfig) -> ControlSchedule:
    return uniform_schedule(arch, cfg.n_intervals)


def _schedule_from_theta(
    theta: np.ndarray, split_sizes, n_intervals: int
) -> ControlSchedule:
    """Map free parameters to floored-softmax fraction tables.

    Each fork/interval has k-1 free logits (last logit pinned at 0);
    fractions are F_MIN + (1 - k F_MIN) softmax.
    """
    tables = []
    pos = 0
    for k in split_sizes:
        logits = np.zeros((n_intervals, k))
        width = k - 1
        for t in range(n_intervals):
            logits[t, :width] = theta[pos:pos + width]
            pos += width
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        soft = z / z.sum(axis=1, keepdims=True)
        tables.append(F_MIN + (1.0 - k * F_MIN) * soft)
    return ControlSchedule(n_intervals, tuple(tables))


def _item_seed(base_seed: int, arch_key: str, scenario_id: int) -> int:
    digest = hashlib.sha256(
        f"{base_seed}|{arch_key}|{scenario_id}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


def optimize_endurance(
    arch: Architecture,
    scenario: Scenario,
    params: Optional[PlantParams] = None,
    cfg: OlocConfig = OlocConfig(),
) -> Label:
    """Best evaluated endurance over the schedule space; seeded and repeatable."""
    p = params or default_params()
    topo = plant_topology(arch)
    n_dim = sum(k - 1 for k in topo.split_sizes) * cfg.n_intervals
    loads = np.asarray(scenario.loads)

    if n_dim == 0:
        u = baseline_uniform(arch, cfg)
        result = simulate(arch, loads, u, p)
        return Label(J=result.t_end, best_controls=u, evals_used=1)

    evals = 0
    best_J = -np.inf
    best_theta = np.zeros(n_dim)

    def objective(theta):
        nonlocal evals, best_J, best_theta
        evals += 1
        u = _schedule_from_theta(theta, topo.split_sizes, cfg.n_intervals)
        t_end = simulate(arch, loads, u, p).t_end
        if t_end > best_J:
            best_J = t_end
            best_theta = theta.copy()
        return -t_end

    rng = np.random.default_rng(
        _item_seed(cfg.seed, arch.key, scenario.scenario_id)
    )
    n_starts = 1 + cfg.restarts
    budget = max(n_dim + 2, cfg.max_evals // n_starts)
    starts = [np.zeros(n_dim)]
    starts += [rng.normal(scale=1.0, size=n_dim) for _ in range(cfg.restarts)]

    # the uniform baseline is always scored, even if the budget is tiny
    objective(starts[0])
    for x0 in starts:
        remaining = cfg.max_evals - evals
        if remaining < n_dim + 2:
            break
        minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": min(budget, remaining),
                "xatol": 1e-3,
                "fatol": cfg.convergence_tol,
                "adaptive": False,
            },
        )

    u_best = _schedule_from_theta(best_theta, topo.split_sizes, cfg.n_intervals)
    return Label(J=float(best_J), best_controls=u_best, evals_used=evals)


def label_one(
    arch: Architecture,
    scenario: Scenario,
    params: Optional[PlantParams] = None,
    cfg: OlocConfig = OlocConfig(),
) -> LabeledInstance:
    per_arch = Scenario(scenario.scenario_id, scenario.loads[: arch.n_cphx])
    label = optimize_endurance(arch, per_arch, params, cfg)
    return LabeledInstance(arch, per_arch, node_features(arch, per_arch), label)


def label_population(
    archs: list[Architecture],
    scenarios: list[Scenario],
    params: Optional[PlantParams] = None,
    cfg: OlocConfig = OlocConfig(),
    workers: int = 1,
    progress=None,
) -> tuple[list[LabeledInstance], list[SkipRecord]]:
    """Label the architecture x scenario cross product.

    Scenario load vectors may be longer than an architecture needs; the
    leading n entries are used.  Output order is architecture-major in
    canonical-key order regardless of worker scheduling.  Failed items
    become skip records instead of rows.
    """
    if not archs or not scenarios:
        raise ValueError("need at least one architecture and one scenario")
    p = params or default_params()
    ordered = sorted(archs, key=lambda a: a.key)
    items = [(a, s) for a in ordered for s in scenarios]

    def run(item):
        arch, scenario = item
        try:
            inst = label_one(arch, scenario, p, cfg)
        except IntegrationError as exc:
            return SkipRecord(arch.key, scenario.scenario_id, str(exc))
        if progress is not None:
            progress(
                f"labeled {arch.key} {scenario.scenario_id} "
                f"J={inst.label.J:.3f} evals={inst.label.evals_used}"
            )
        return inst

    if workers <= 1:
        results = [run(item) for item in items]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))

    labeled = [r for r in results if isinstance(r, LabeledInstance)]
    skipped = [r for r in results if isinstance(r, SkipRecord)]
    return labeled, skipped
