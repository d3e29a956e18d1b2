"""Robust controlled-invariant sets by backward reachability.

``centralized_rci`` iterates one-step admissible sets on the full state;
``distributed_rci`` does the same per generator, treating neighbours' states
and inputs as bounded disturbances whose bounds come from a consensus sweep
(``consensus_coupling``).
"""

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .polytope import (HPolytope, contains_scaled, image_supports, intersect,
                       product_all, project, reduce, support)

log = logging.getLogger(__name__)

CONVERGED = "converged"
EMPTY_FAILURE = "empty_failure"
INCONCLUSIVE = "inconclusive"


class NotControllableError(ValueError):
    pass


class EmptyCouplingError(RuntimeError):
    def __init__(self, bus, k, sweep):
        super().__init__(f"eroded target of bus {bus} is empty "
                         f"(k={k}, sweep={sweep})")
        self.bus = bus
        self.k = k
        self.sweep = sweep


class MaxSweepsError(RuntimeError):
    pass


class StepBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IterationConfig:
    epsilon: float = 1e-3
    k_max: int = 200
    l_max: int = 50
    history: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 1 or self.l_max < 1:
            raise ValueError("k_max and l_max must be at least 1")


@dataclass
class RciResult:
    status: str
    sets: list
    k_used: int
    consensus_iterations: list = field(default_factory=list)
    sweep_changes: list = field(default_factory=list)
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    failed_bus: object = None

    @property
    def converged(self):
        return self.status == CONVERGED


@dataclass
class CouplingSets:
    """Assumed neighbour-state sets (one factor per neighbour) and input sets."""

    state_factors: list  # per bus: list of neighbour HPolytopes
    input_sets: list  # per bus: HPolytope of neighbour inputs

    def state_set(self, i):
        return product_all(self.state_factors[i])


@dataclass
class ConsensusResult:
    coupling: CouplingSets
    next_sets: list  # X_i^(k+1) computed against ``coupling``
    sweeps: int
    converged: bool
    delta_changes: list  # max |change| of delta-limits between sweeps


def controllable(A, B, tol=1e-9):
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks), tol=tol) == n


def _worker_count(jobs):
    env = os.environ.get("RCIGRID_THREADS")
    try:
        cap = int(env) if env else 1
    except ValueError:
        cap = 1
    return max(1, min(cap, jobs))


def _parallel_map(fn, items):
    items = list(items)
    workers = _worker_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def lifted_preimage(target, A, B, U):
    """``{x : exists u in U, A x + B u in target}`` via projection."""
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    if target.is_empty_marker:
        return HPolytope.empty(n)
    F, g = target.A, target.b
    rows = np.vstack([np.hstack([F @ A, F @ B]),
                      np.hstack([np.zeros((U.nrows, n)), U.A])])
    M = HPolytope(rows, np.concatenate([g, U.b]))
    return project(M, range(n))


def preimage_step(target, A, B, U, E=None, D=None):
    """One backward step: erode by ``E D``, lift over ``u``, project to ``x``."""
    if target.is_empty_marker:
        return target
    if E is not None and D is not None and D.dim:
        P = reduce(HPolytope(target.A, target.b - image_supports(E, D, target.A)))
    else:
        P = target
    if P.is_empty_marker:
        return HPolytope.empty(A.shape[0])
    return lifted_preimage(P, A, B, U)


def centralized_rci(A, B, E, X, U, D, cfg=IterationConfig()):
    """Largest approximate RCI of ``x+ = A x + B u + E d`` inside ``X``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    E = np.asarray(E, dtype=float).reshape(A.shape[0], -1)
    if not controllable(A, B):
        raise NotControllableError("(A, B) is not controllable")
    Xk = reduce(X)
    history = [Xk] if cfg.history else []
    if Xk.is_empty_marker:
        return RciResult(EMPTY_FAILURE, [Xk], 0, history=history)
    for k in range(cfg.k_max):
        R = preimage_step(Xk, A, B, U, E, D)
        Xn = intersect(R, Xk)
        if cfg.history:
            history.append(Xn)
        if Xn.is_empty_marker:
            return RciResult(EMPTY_FAILURE, [Xn], k + 1, history=history)
        if contains_scaled(Xn, Xk, 1.0 + cfg.epsilon):
            return RciResult(CONVERGED, [Xn], k + 1, history=history)
        Xk = Xn
    return RciResult(INCONCLUSIVE, [Xk], cfg.k_max, history=history)


def local_preimage(sub, target, neighbor_sets, U_i, U_N, D):
    """Preimage of ``target`` for one subsystem under coupling disturbances.

    The target is eroded by ``A2 Y``, ``E D`` and ``B2 U_N``, where
    ``Y = prod(neighbor_sets)``.  Supports of the product are sums of
    per-neighbour supports.
    """
    F, g = target.A, target.b
    shrink = np.zeros(len(g))
    for k, Xj in enumerate(neighbor_sets):
        blk = sub.A2[:, 2 * k:2 * k + 2]
        shrink += image_supports(blk, Xj, F)
    if D.dim:
        shrink += image_supports(sub.E, D, F)
    if U_N.dim:
        shrink += image_supports(sub.B2, U_N, F)
    P = reduce(HPolytope(F, g - shrink))
    if P.is_empty_marker:
        return P
    return lifted_preimage(P, sub.A1, sub.B1, U_i)


def _delta_limits(S):
    e = np.array([1.0, 0.0])
    return np.array([support(S, e), support(S, -e)])


def consensus_coupling(subsystems, X_current, U_sets, D, cfg=IterationConfig(),
                       k=0, on_max_sweeps="raise"):
    """Fixed point of the neighbour-state assumptions for one backward step.

    All buses update simultaneously against the previous sweep.  The
    antitone update makes even sweeps outer brackets of the fixed point and
    odd sweeps inner ones; the returned coupling sets are the last outer
    bracket so every neighbour's next admissible set lies inside what was
    assumed for it.
    """
    nbrs = [s.neighbors for s in subsystems]
    U_N = [product_all([U_sets[j] for j in nb]) for nb in nbrs]

    def one(i, Y_factors):
        R = local_preimage(subsystems[i], X_current[i],
                           [Y_factors[j] for j in nbrs[i]], U_sets[i], U_N[i], D)
        return R if R.is_empty_marker else intersect(R, X_current[i])

    def sweep_sets(Y_factors, sweep):
        out = _parallel_map(lambda i: one(i, Y_factors), range(len(subsystems)))
        for i, S in enumerate(out):
            if S.is_empty_marker:
                raise EmptyCouplingError(subsystems[i].bus_id, k, sweep)
        return out

    Y = list(X_current)  # Y^(k,0): neighbour factors are X_j^(k)
    coupled = any(nbrs)
    changes = []
    prev_limits = None
    last_even = None  # (Y factors, X computed from them)
    converged = False
    sweeps = 0
    for sweep in range(cfg.l_max):
        sweeps = sweep + 1
        Xn = sweep_sets(Y, sweep)
        if sweep % 2 == 0:
            last_even = (Y, Xn)
        limits = np.array([_delta_limits(S) for S in Xn])
        if prev_limits is not None:
            changes.append(float(np.max(np.abs(limits - prev_limits))))
        prev_limits = limits
        if not coupled or _sandwiched(Y, Xn, nbrs, cfg.epsilon):
            converged = True
            Y_next = Xn
            break
        Y = Xn
    else:
        Y_next = Xn
        msg = (f"consensus did not converge within l_max={cfg.l_max} sweeps "
               f"at k={k}")
        if on_max_sweeps == "raise":
            raise MaxSweepsError(msg)
        warnings.warn(msg, StepBoundWarning, stacklevel=2)

    # outer bracket: the most recent even-sweep assumption, or the final
    # (never-shrunk) assumption when the last pair ends on an even sweep
    if (sweeps - 1) % 2 == 0:
        Y_out, X_out = last_even
    else:
        Y_out = Y_next
        X_out = sweep_sets(Y_out, sweeps)
    coupling = CouplingSets([[Y_out[j] for j in nb] for nb in nbrs], U_N)
    return ConsensusResult(coupling, X_out, sweeps, converged, changes)


def _sandwiched(Y_old, Y_new, nbrs, eps):
    """``(1-eps) Y_old ⊆ Y_new ⊆ (1+eps) Y_old`` for every neighbour factor."""
    used = sorted({j for nb in nbrs for j in nb})
    for j in used:
        if not contains_scaled(Y_new[j], Y_old[j], 1.0 / (1.0 - eps)):
            return False
        if not contains_scaled(Y_old[j], Y_new[j], 1.0 + eps):
            return False
    return True


def distributed_rci(subsystems, X_sets, U_sets, D, cfg=IterationConfig(), h=None,
                    step_bound=None):
    """Per-subsystem RCIs whose product is an inner approximation of the RCI.

    ``step_bound`` (the contraction bound on ``h``) only triggers a warning
    when exceeded.
    """
    for s in subsystems:
        if not controllable(s.A1, s.B1):
            raise NotControllableError(f"subsystem {s.bus_id}: (A1, B1) not controllable")
    result_warnings = []
    if h is not None and step_bound is not None and h > step_bound:
        msg = (f"time step h={h:.4g} exceeds the consensus contraction bound "
               f"{step_bound:.4g}")
        warnings.warn(msg, StepBoundWarning, stacklevel=2)
        result_warnings.append(msg)

    Xk = [reduce(X) for X in X_sets]
    history = [list(Xk)] if cfg.history else []
    sweeps, changes = [], []
    for k in range(cfg.k_max):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                cons = consensus_coupling(subsystems, Xk, U_sets, D, cfg, k=k,
                                          on_max_sweeps="warn")
            except EmptyCouplingError as exc:
                log.info("distributed RCI failed: %s", exc)
                return RciResult(EMPTY_FAILURE, Xk, k + 1, sweeps, changes,
                                 history, result_warnings, failed_bus=exc.bus)
        result_warnings.extend(str(w.message) for w in caught)
        sweeps.append(cons.sweeps)
        changes.append(cons.delta_changes)
        Xn = cons.next_sets
        if cfg.history:
            history.append(list(Xn))
        log.debug("k=%d sweeps=%d", k, cons.sweeps)
        if all(contains_scaled(Xn[i], Xk[i], 1.0 + cfg.epsilon) for i in range(len(Xk))):
            return RciResult(CONVERGED, Xn, k + 1, sweeps, changes, history,
                             result_warnings)
        Xk = Xn
    return RciResult(INCONCLUSIVE, Xk, cfg.k_max, sweeps, changes, history,
                     result_warnings)


def network_sets(dm, constraints):
    """Per-bus safe sets, input sets and the disturbance set of a network."""
    X = [constraints.state_box(g) for g in dm.generator_ids]
    U = [constraints.input_box(g) for g in dm.generator_ids]
    D = constraints.disturbance_box(list(dm.load_ids))
    return X, U, D


def distributed_rci_network(dm, constraints, cfg=IterationConfig(), step_bound=None):
    X, U, D = network_sets(dm, constraints)
    return distributed_rci(list(dm.subsystems), X, U, D, cfg, h=dm.h,
                           step_bound=step_bound)


def centralized_rci_network(dm, constraints, cfg=IterationConfig()):
    X, U, D = network_sets(dm, constraints)
    return centralized_rci(dm.A, dm.B, dm.E, product_all(X), product_all(U), D, cfg)


def geometric_decay_ratio(changes, tol=1e-12):
    """Smallest ``r`` with ``c_l <= c_0 r^l`` for the positive prefix of ``changes``.

    Returns 0.0 when the sequence is identically zero after the first term
    and ``math.inf`` for an empty sequence.
    """
    c = list(changes)
    if not c:
        return math.inf
    if c[0] <= tol:
        return 0.0
    r = 0.0
    for l, v in enumerate(c[1:], 1):
        if v <= tol:
            continue
        r = max(r, (v / c[0]) ** (1.0 / l))
    return r
