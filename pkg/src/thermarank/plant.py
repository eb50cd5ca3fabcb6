"""Lumped-parameter thermal plant with event-detecting RK4 integration.

Model, per cold plate i:

    C_w dT_w,i/dt = P_i - hA_i (T_w,i - Tf_i)

with a quasi-steady fluid stream: mdot_i c_p (T_out,i - T_in,i) =
hA_i (T_w,i - Tf_i), Tf_i = (T_in,i + T_out,i)/2, the inlet coming from
the upstream outlet (branch heads draw from the tank).  Convection scales
with flow, hA_i = hA0 (mdot_i/mdot_total)^flow_exponent.  Branch outlets
mix flow-weighted, reject heat through a fixed-effectiveness liquid-liquid
exchanger to the sink, and return to the tank:

    C_t dT_t/dt = mdot_total c_p (T_ret - T_t)

Endurance is the first time any wall temperature crosses T_max, located by
linear interpolation inside the crossing step.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from numba import njit

from .architectures import Architecture, Branch

F_MIN = 0.02  # smallest admissible outflow fraction at any fork

_STATUS_OK = 0
_STATUS_EVENT = 1
_STATUS_NONFINITE = 2


class ControlError(ValueError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, time: float, node: int):
        self.time = time
        self.node = node
        super().__init__(
            f"non-finite state at t={time:.3f} s (wall node {node})"
        )


@dataclass(frozen=True)
class PlantParams:
    """Plant constants in SI units (temperatures in deg C, loads in W)."""

    m_dot_total: float = 1.0        # kg/s
    c_p: float = 2000.0             # J/(kg K)
    C_w: float = 5.0e4              # J/K per cold-plate wall
    C_t: float = 5.0e5              # J/K tank
    hA0: float = 500.0              # W/K at full flow
    flow_exponent: float = 0.8
    eps_llhx: float = 0.35
    T_sink: float = 15.0
    T_init: float = 15.0
    T_max: float = 45.0
    horizon: float = 2000.0         # s
    dt: float = 0.5                 # s

    def __post_init__(self):
        positive = (
            "m_dot_total", "c_p", "C_w", "C_t", "hA0", "horizon", "dt",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.eps_llhx <= 1:
            raise ValueError("eps_llhx must lie in (0, 1]")
        if self.T_init >= self.T_max:
            raise ValueError("T_init must be below T_max")

    @classmethod
    def from_file(cls, path: str) -> "PlantParams":
        """Load from a flat ``key = value`` text file (# comments allowed)."""
        known = {f.name for f in fields(cls)}
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = float(raw)
        return cls(**values)

    def to_file(self, path: str) -> None:
        with open(path, "w") as fh:
            for f in fields(self):
                fh.write(f"{f.name} = {getattr(self, f.name)!r}\n")


def default_params() -> PlantParams:
    """Defaults, honoring the THERMARANK_PLANT_CONFIG env var if set."""
    path = os.environ.get("THERMARANK_PLANT_CONFIG")
    if path:
        return PlantParams.from_file(path)
    return PlantParams()


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant outflow fractions at every fork point.

    ``fractions`` holds one (n_intervals, n_children) array per fork, in
    the order reported by :func:`split_points`.  Per fork and interval the
    fractions sum to one and stay above F_MIN.
    """

    n_intervals: int
    fractions: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ControlError("n_intervals must be >= 1")
        for arr in self.fractions:
            if arr.shape[0] != self.n_intervals:
                raise ControlError("fraction table rows must match n_intervals")
            if np.any(arr < F_MIN - 1e-12):
                raise ControlError(f"fractions must be >= {F_MIN}")
            if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
                raise ControlError("fractions must sum to 1 per interval")


@dataclass(frozen=True)
class SimResult:
    t_end: float
    binding_node: Optional[int]
    times: np.ndarray
    tank_temps: np.ndarray
    wall_temps: np.ndarray          # (n_samples, n_cphx), columns by load index
    energy_residual: float
    final_walls: np.ndarray
    final_tank: float
    energy_in: float
    energy_rejected: float


# ---------------------------------------------------------------------------
# tree flattening for simulation

@dataclass(frozen=True)
class PlantTopology:
    """Array view of an architecture's coolant tree, indexed by load index."""

    n: int
    upstream: np.ndarray            # int32, -1 means fed by the tank
    is_leaf: np.ndarray             # bool
    topo_order: np.ndarray          # int32, upstream before downstream
    split_sizes: tuple[int, ...]    # children count per fork point


def split_points(arch: Architecture) -> list[int]:
    """Children counts of every fork, tank split first then tree order."""
    return plant_topology(arch).split_sizes  # type: ignore[return-value]


def plant_topology(arch: Architecture) -> PlantTopology:
    n = arch.n_cphx
    upstream = np.full(n, -1, dtype=np.int32)
    is_leaf = np.ones(n, dtype=np.bool_)
    order: list[int] = []
    sizes: list[int] = []

    def walk_set(branches: tuple[Branch, ...], feed: int):
        ordered = sorted(branches, key=lambda b: b.key)
        if len(ordered) >= 2:
            sizes.append(len(ordered))
        for branch in ordered:
            walk_branch(branch, feed)

    def walk_branch(branch: Branch, feed: int):
        for seg in branch.segments:
            upstream[seg.index] = feed
            order.append(seg.index)
            if feed >= 0:
                is_leaf[feed] = False
            feed = seg.index
            if seg.split is not None:
                walk_set(seg.split, feed)

    walk_set(arch.branches, -1)
    return PlantTopology(
        n, upstream, is_leaf, np.asarray(order, dtype=np.int32), tuple(sizes)
    )


def uniform_schedule(arch: Architecture, n_intervals: int) -> ControlSchedule:
    """Equal fractions at every fork in every interval."""
    tables = tuple(
        np.full((n_intervals, k), 1.0 / k) for k in plant_topology(arch).split_sizes
    )
    return ControlSchedule(n_intervals, tables)


def flow_distribution(
    arch: Architecture, u: ControlSchedule, interval: int
) -> np.ndarray:
    """Mass flow (kg/s) per cold plate at unit total flow times m_dot."""
    if interval >= u.n_intervals:
        raise ControlError(f"interval {interval} out of range")
    return _flow_fractions(arch, u)[interval]


def _flow_fractions(arch: Architecture, u: ControlSchedule) -> np.ndarray:
    """(n_intervals, n) table of flow fractions of the total."""
    topo = plant_topology(arch)
    if len(u.fractions) != len(topo.split_sizes):
        raise ControlError(
            f"schedule has {len(u.fractions)} fork tables, architecture has "
            f"{len(topo.split_sizes)} forks"
        )
    for arr, k in zip(u.fractions, topo.split_sizes):
        if arr.shape[1] != k:
            raise ControlError("fork table width does not match children count")

    out = np.zeros((u.n_intervals, topo.n))
    cursor = 0

    def walk_set(branches, incoming: np.ndarray):
        nonlocal cursor
        ordered = sorted(branches, key=lambda b: b.key)
        if len(ordered) >= 2:
            table = u.fractions[cursor]
            cursor += 1
            for child, branch in enumerate(ordered):
                walk_branch(branch, incoming * table[:, child])
        else:
            walk_branch(ordered[0], incoming)

    def walk_branch(branch, incoming: np.ndarray):
        for seg in branch.segments:
            out[:, seg.index] = incoming
            if seg.split is not None:
                walk_set(seg.split, incoming)

    walk_set(arch.branches, np.ones(u.n_intervals))
    return out


# ---------------------------------------------------------------------------
# integration kernel

@njit(cache=True, nogil=True)
def _rhs(Tw, Tt, flows, hA, P, upstream, topo_order, is_leaf,
         c_p, C_w, C_t, eps, T_sink, m_dot, Tout, dTw):  # pragma: no cover
    n = Tw.shape[0]
    for idx in range(n):
        i = topo_order[idx]
        up = upstream[i]
        Tin = Tt if up < 0 else Tout[up]
        mc = flows[i] * c_p
        h = hA[i]
        Tout[i] = (Tin * (mc - 0.5 * h) + h * Tw[i]) / (mc + 0.5 * h)
        q = h * (Tw[i] - 0.5 * (Tin + Tout[i]))
        dTw[i] = (P[i] - q) / C_w
    mix = 0.0
    for i in range(n):
        if is_leaf[i]:
            mix += flows[i] * Tout[i]
    mix /= m_dot
    Tret = mix - eps * (mix - T_sink)
    q_rej = m_dot * c_p * (mix - Tret)
    dTt = m_dot * c_p * (Tret - Tt) / C_t
    return dTt, q_rej


@njit(cache=True, nogil=True)
def _integrate(flow_table, hA_table, P, upstream, topo_order, is_leaf,
               c_p, C_w, C_t, eps, T_sink, T_init, T_max, m_dot,
               dt, n_steps, steps_per_interval,
               record_stride):  # pragma: no cover
    n = P.shape[0]
    Tw = np.full(n, T_init)
    Tt = T_init
    E_in = 0.0
    E_rej = 0.0

    n_rec = n_steps // record_stride + 1 if record_stride > 0 else 1
    rec_t = np.zeros(n_rec)
    rec_tank = np.zeros(n_rec)
    rec_wall = np.zeros((n_rec, n))
    if record_stride > 0:
        rec_tank[0] = Tt
        rec_wall[0, :] = Tw
    rec = 1

    Tout = np.zeros(n)
    k1w = np.zeros(n)
    k2w = np.zeros(n)
    k3w = np.zeros(n)
    k4w = np.zeros(n)
    tmp = np.zeros(n)
    P_sum = P.sum()

    status = _STATUS_OK
    t_end = dt * n_steps
    binding = -1

    for step in range(n_steps):
        interval = step // steps_per_interval
        flows = flow_table[interval]
        hA = hA_table[interval]

        k1t, q1 = _rhs(Tw, Tt, flows, hA, P, upstream, topo_order, is_leaf,
                       c_p, C_w, C_t, eps, T_sink, m_dot, Tout, k1w)
        for i in range(n):
            tmp[i] = Tw[i] + 0.5 * dt * k1w[i]
        k2t, q2 = _rhs(tmp, Tt + 0.5 * dt * k1t, flows, hA, P, upstream,
                       topo_order, is_leaf, c_p, C_w, C_t, eps, T_sink,
                       m_dot, Tout, k2w)
        for i in range(n):
            tmp[i] = Tw[i] + 0.5 * dt * k2w[i]
        k3t, q3 = _rhs(tmp, Tt + 0.5 * dt * k2t, flows, hA, P, upstream,
                       topo_order, is_leaf, c_p, C_w, C_t, eps, T_sink,
                       m_dot, Tout, k3w)
        for i in range(n):
            tmp[i] = Tw[i] + dt * k3w[i]
        k4t, q4 = _rhs(tmp, Tt + dt * k3t, flows, hA, P, upstream,
                       topo_order, is_leaf, c_p, C_w, C_t, eps, T_sink,
                       m_dot, Tout, k4w)

        theta_min = 2.0
        for i in range(n):
            prev = Tw[i]
            Tw[i] = Tw[i] + dt / 6.0 * (k1w[i] + 2 * k2w[i] + 2 * k3w[i] + k4w[i])
            if not math.isfinite(Tw[i]):
                status = _STATUS_NONFINITE
                t_end = dt * (step + 1)
                binding = i
                break
            if Tw[i] > T_max and prev <= T_max:
                theta = (T_max - prev) / (Tw[i] - prev)
                if theta < theta_min:
                    theta_min = theta
                    binding = i
        if status == _STATUS_NONFINITE:
            break
        Tt_prev = Tt
        Tt = Tt + dt / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
        E_in_prev = E_in
        E_rej_prev = E_rej
        E_in = E_in + dt * P_sum
        E_rej = E_rej + dt / 6.0 * (q1 + 2 * q2 + 2 * q3 + q4)

        if theta_min <= 1.0:
            # linear interpolation of every state inside the crossing step
            status = _STATUS_EVENT
            t_end = dt * step + theta_min * dt
            for i in range(n):
                prev = Tw[i] - dt / 6.0 * (k1w[i] + 2 * k2w[i] + 2 * k3w[i] + k4w[i])
                Tw[i] = prev + theta_min * (Tw[i] - prev)
            Tt = Tt_prev + theta_min * (Tt - Tt_prev)
            E_in = E_in_prev + theta_min * (E_in - E_in_prev)
            E_rej = E_rej_prev + theta_min * (E_rej - E_rej_prev)
            if record_stride > 0 and rec < n_rec:
                rec_t[rec] = t_end
                rec_tank[rec] = Tt
                rec_wall[rec, :] = Tw
                rec += 1
            break

        if record_stride > 0 and (step + 1) % record_stride == 0 and rec < n_rec:
            rec_t[rec] = dt * (step + 1)
            rec_tank[rec] = Tt
            rec_wall[rec, :] = Tw
            rec += 1

    return (status, t_end, binding, Tw, Tt, E_in, E_rej,
            rec_t[:rec], rec_tank[:rec], rec_wall[:rec])


def simulate(
    arch: Architecture,
    loads_kw,
    u: ControlSchedule,
    params: Optional[PlantParams] = None,
    record_stride: int = 0,
) -> SimResult:
    """Integrate the plant; endurance is the first wall-limit crossing.

    ``loads_kw`` is one heat load per cold plate, in kW.  Pass a positive
    ``record_stride`` to sample trajectories every that many steps.
    """
    p = params or default_params()
    loads = np.asarray(loads_kw, dtype=np.float64)
    if loads.shape != (arch.n_cphx,):
        raise ValueError(
            f"expected {arch.n_cphx} loads, got shape {loads.shape}"
        )
    topo = plant_topology(arch)
    fracs = _flow_fractions(arch, u)

    steps_per_interval = p.horizon / u.n_intervals / p.dt
    if abs(steps_per_interval - round(steps_per_interval)) > 1e-9:
        raise ValueError("dt must divide horizon / n_intervals")
    steps_per_interval = int(round(steps_per_interval))
    n_steps = steps_per_interval * u.n_intervals

    flow_table = fracs * p.m_dot_total
    hA_table = p.hA0 * fracs ** p.flow_exponent

    (status, t_end, binding, Tw, Tt, E_in, E_rej,
     rec_t, rec_tank, rec_wall) = _integrate(
        flow_table, hA_table, loads * 1000.0,
        topo.upstream, topo.topo_order, topo.is_leaf,
        p.c_p, p.C_w, p.C_t, p.eps_llhx, p.T_sink, p.T_init, p.T_max,
        p.m_dot_total, p.dt, n_steps, steps_per_interval,
        record_stride,
    )
    if status == _STATUS_NONFINITE:
        raise IntegrationError(t_end, int(binding))

    stored = p.C_t * (Tt - p.T_init) + p.C_w * np.sum(Tw - p.T_init)
    residual = abs((E_in - E_rej) - stored) / max(E_in, 1e-12)

    return SimResult(
        t_end=float(t_end),
        binding_node=int(binding) if status == _STATUS_EVENT else None,
        times=rec_t,
        tank_temps=rec_tank,
        wall_temps=rec_wall,
        energy_residual=float(residual),
        final_walls=Tw,
        final_tank=float(Tt),
        energy_in=float(E_in),
        energy_rejected=float(E_rej),
    )


def energy_residual(result: SimResult) -> float:
    return result.energy_residual


def export_trajectories(result: SimResult, path: str) -> None:
    """CSV dump: time, tank temperature, wall temperatures by load index."""
    n = result.wall_temps.shape[1]
    header = "time_s,T_tank_C," + ",".join(f"T_w{i}_C" for i in range(n))
    table = np.column_stack(
        [result.times, result.tank_temps, result.wall_temps]
    )
    np.savetxt(path, table, delimiter=",", header=header, comments="")
