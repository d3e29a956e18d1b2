"""Closed-loop simulation of the network under a worst-case load disturbance.

Each step: every bus commits ``u_i`` from its own state, the adversary then
picks a vertex of ``D`` from the target bus's state and input, and all buses
advance together through the full discrete model.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .controllers import (CONTROLLERS, CostSpec, EmptyRegulationMap,
                          RegulationMap, interval, lqr_control, onestep_mpc_control,
                          quadratic_minimizer, rmpc_control, solve_riccati)
from .polytope import PolytopeError, polygon, reduce, vertices

log = logging.getLogger(__name__)


class DimensionUnsupported(PolytopeError):
    pass


class MissingRciError(ValueError):
    pass


@dataclass
class SimConfig:
    horizon: float = 2.0
    step: float = 0.05
    target_bus: int = 0  # generator index
    controller: str = "rmpc"
    inits: int = 8
    initial_states: list = None  # explicit target-bus starts; overrides ``inits``
    seed: int = 0
    cost: CostSpec = field(default_factory=CostSpec)

    @property
    def n_steps(self):
        n = self.horizon / self.step
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("horizon must be a positive integer multiple of step")
        return int(round(n))


@dataclass
class TrajectoryLog:
    times: np.ndarray  # (T+1,)
    states: np.ndarray  # (T+1, N, 2)
    inputs: np.ndarray  # (T, N)
    disturbances: np.ndarray  # (T, n_loads)
    safe: np.ndarray  # (T+1, N) bool
    invariant: np.ndarray  # (T+1, N) bool
    events: list
    bus_ids: tuple
    load_ids: tuple
    init_index: int = 0

    def first_violation(self):
        """Per bus: first time index outside the safe set, or None."""
        out = []
        for i in range(self.safe.shape[1]):
            bad = np.nonzero(~self.safe[:, i])[0]
            out.append(int(bad[0]) if bad.size else None)
        return out

    @property
    def violations(self):
        return int((~self.safe).any(axis=0).sum())


def adversarial_disturbance(x, u, sub, X, D_vertices):
    """Vertex of ``D`` that pushes the target's nominal successor furthest out.

    Score is the largest normalized constraint value of ``X`` at
    ``A1 x + B1 u + E d``; ties go to the lowest vertex index.
    """
    base = sub.A1 @ np.asarray(x, dtype=float) + sub.B1[:, 0] * u
    succ = base[None, :] + D_vertices @ sub.E.T
    norms = np.linalg.norm(X.A, axis=1)
    score = ((succ @ X.A.T - X.b) / norms).max(axis=1)
    best = score.max()
    k = int(np.nonzero(score >= best)[0][0])
    return D_vertices[k].copy()


def boundary_samples(S, count):
    """``count`` points evenly spaced by arc length along the boundary of ``S``."""
    if S.dim != 2:
        raise DimensionUnsupported("boundary sampling is defined for 2-D sets only")
    V = polygon(S)
    edges = np.roll(V, -1, axis=0) - V
    lengths = np.linalg.norm(edges, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    per = cum[-1]
    pts = []
    for s in np.arange(count) * per / count:
        e = min(int(np.searchsorted(cum, s, side="right")) - 1, len(V) - 1)
        t = (s - cum[e]) / lengths[e] if lengths[e] > 0 else 0.0
        pts.append(V[e] + t * edges[e])
    return np.array(pts)


class ClosedLoop:
    """Controller bank over a discrete network model."""

    def __init__(self, dm, X_sets, U_sets, D, S_sets=None, cost=CostSpec()):
        self.dm = dm
        self.subs = list(dm.subsystems)
        self.X = [reduce(X) for X in X_sets]
        self.U = list(U_sets)
        self.D = D
        self.cost = cost
        self.S = list(S_sets) if S_sets is not None else None
        self.reg = RegulationMap(self.subs, self.S, self.U, D) if S_sets is not None else None
        self._lqr = None
        self.D_vertices = vertices(D) if D.dim else np.zeros((1, 0))

    @property
    def lqr_gains(self):
        if self._lqr is None:
            self._lqr = [solve_riccati(s.A1, s.B1, self.cost) for s in self.subs]
        return self._lqr

    def control(self, name, i, x, events, t_index):
        sub = self.subs[i]
        if name == "rmpc":
            if self.reg is None:
                raise MissingRciError("rmpc needs invariant sets")
            try:
                return rmpc_control(self.reg, i, x, self.cost)
            except EmptyRegulationMap:
                events.append((t_index, sub.bus_id, "empty_regulation_map"))
                u = quadratic_minimizer(sub.A1, sub.B1, np.asarray(x, float), self.cost)
                lo, hi = interval(self.U[i])
                return float(min(max(u, lo), hi))
        if name == "mpc1":
            return onestep_mpc_control(sub, self.X[i], self.U[i], x, self.cost)
        if name == "lqr":
            return lqr_control(self.lqr_gains[i], self.U[i], x)
        raise ValueError(f"unknown controller {name!r}; choose from {CONTROLLERS}")


def simulate(loop, cfg, x0):
    """Run one trajectory from the stacked initial state ``x0``."""
    if cfg.controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {cfg.controller!r}")
    if abs(cfg.step - loop.dm.h) > 1e-12:
        raise ValueError(f"simulation step {cfg.step} differs from model step {loop.dm.h}")
    T = cfg.n_steps
    N = len(loop.subs)
    nd = loop.D_vertices.shape[1]
    states = np.zeros((T + 1, N, 2))
    inputs = np.zeros((T, N))
    dist = np.zeros((T, nd))
    events = []
    x = np.asarray(x0, dtype=float).copy()
    states[0] = x.reshape(N, 2)
    tgt = cfg.target_bus
    for t in range(T):
        xs = x.reshape(N, 2)
        u = np.array([loop.control(cfg.controller, i, xs[i], events, t) for i in range(N)])
        d = (adversarial_disturbance(xs[tgt], u[tgt], loop.subs[tgt], loop.X[tgt],
                                     loop.D_vertices) if nd else np.zeros(0))
        x = loop.dm.step(x, u, d)
        inputs[t], dist[t] = u, d
        states[t + 1] = x.reshape(N, 2)
    safe, inv = flags(states, loop.X, loop.S)
    return TrajectoryLog(times=np.arange(T + 1) * cfg.step, states=states, inputs=inputs,
                         disturbances=dist, safe=safe, invariant=inv, events=events,
                         bus_ids=tuple(loop.dm.generator_ids),
                         load_ids=tuple(loop.dm.load_ids))


def flags(states, X_sets, S_sets, tol=1e-9):
    """Membership flags in the safe sets and (if given) the invariant sets."""
    T1, N, _ = states.shape
    safe = np.zeros((T1, N), dtype=bool)
    inv = np.zeros((T1, N), dtype=bool)
    for i in range(N):
        safe[:, i] = X_sets[i].contains(states[:, i, :], tol)
        if S_sets is not None:
            inv[:, i] = S_sets[i].contains(states[:, i, :], tol)
    return safe, inv


def initial_conditions(loop, cfg):
    """Target-bus starting points; other buses start at the origin."""
    if cfg.initial_states is not None:
        pts = np.atleast_2d(np.asarray(cfg.initial_states, dtype=float))
    else:
        src = loop.S[cfg.target_bus] if loop.S is not None else loop.X[cfg.target_bus]
        pts = boundary_samples(src, cfg.inits)
    N = len(loop.subs)
    out = []
    for p in pts:
        x0 = np.zeros(2 * N)
        x0[2 * cfg.target_bus:2 * cfg.target_bus + 2] = p
        out.append(x0)
    return out


def run_experiment(loop, cfg):
    logs = []
    for k, x0 in enumerate(initial_conditions(loop, cfg)):
        lg = simulate(loop, cfg, x0)
        lg.init_index = k
        logs.append(lg)
    return logs


def write_trajectories(path, logs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["init", "t", "bus", "delta_rad", "omega_rad_s",
                    "u_pu", "safe", "invariant"])
        for lg in logs:
            T = len(lg.times)
            for t in range(T):
                for i, bus in enumerate(lg.bus_ids):
                    u = lg.inputs[t, i] if t < T - 1 else ""
                    w.writerow([lg.init_index, f"{lg.times[t]:.6g}", bus,
                                repr(float(lg.states[t, i, 0])),
                                repr(float(lg.states[t, i, 1])),
                                repr(float(u)) if u != "" else "",
                                int(lg.safe[t, i]), int(lg.invariant[t, i])])


def write_disturbances(path, logs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        load_ids = logs[0].load_ids if logs else ()
        w.writerow(["init", "t"] + [f"d_{b}" for b in load_ids])
        for lg in logs:
            for t in range(len(lg.times) - 1):
                w.writerow([lg.init_index, f"{lg.times[t]:.6g}"]
                           + [repr(float(v)) for v in lg.disturbances[t]])


def read_trajectories(path):
    """Rows of a trajectory CSV as dicts with numeric fields parsed."""
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            r["init"] = int(r["init"])
            r["t"] = float(r["t"])
            r["delta_rad"] = float(r["delta_rad"])
            r["omega_rad_s"] = float(r["omega_rad_s"])
            r["u_pu"] = float(r["u_pu"]) if r["u_pu"] else None
            r["safe"] = r["safe"] == "1"
            r["invariant"] = r["invariant"] == "1"
            rows.append(r)
    return rows
