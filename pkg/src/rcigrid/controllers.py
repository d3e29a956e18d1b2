"""Regulation map and the three per-bus feedback laws: rmpc, mpc1, lqr.

Every controller sees only its own bus state ``x_i``.  The robust one
restricts ``u_i`` to the regulation map

    Omega_i(x) = {u in U_i : A1 x + B1 u in S_i (-) A2 T_i (-) B2 U_N (-) E D}

where ``T_i`` is the product of the neighbours' invariant sets.
"""

from dataclasses import dataclass, field

import numpy as np

from .polytope import HPolytope, TOL, product_all, image_supports, reduce, vertices

CONTROLLERS = ("rmpc", "mpc1", "lqr")


class EmptyErodedTarget(ValueError):
    """Coupling and disturbance erosion leaves nothing of ``S_i``."""


class EmptyRegulationMap(RuntimeError):
    """No admissible input keeps the successor inside ``S_i``."""


class NotStabilizable(RuntimeError):
    """Riccati recursion diverged or failed to reach the residual target."""


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray = field(default_factory=lambda: np.eye(2))
    r: float = 0.1

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric square matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if not self.r > 0:
            raise ValueError("r must be positive")
        object.__setattr__(self, "Q", Q)


@dataclass(frozen=True)
class LqrGain:
    K: np.ndarray  # 1 x n
    P: np.ndarray
    residual: float
    spectral_radius: float


def interval(P):
    """``(lo, hi)`` of a 1-D polytope, ``None`` when empty."""
    if P.is_empty_marker:
        return None
    lo, hi = -np.inf, np.inf
    for a, b in zip(P.A[:, 0], P.b):
        if a == 0.0:
            if b < -TOL:
                return None
        elif a > 0:
            hi = min(hi, b / a)
        else:
            lo = max(lo, b / a)
    return (lo, hi) if lo <= hi + TOL else None


def _feasible_inputs(F, g, A1x, B1, U):
    """``{u in U : F (A1 x + B1 u) <= g}`` as a 1-D HPolytope."""
    fb = F @ B1[:, 0]
    rhs = g - F @ A1x
    return HPolytope(np.concatenate([fb, U.A[:, 0]])[:, None],
                     np.concatenate([rhs, U.b]))


def _clamp(v, iv):
    return float(min(max(v, iv[0]), iv[1]))


def quadratic_minimizer(A1, B1, x, cost):
    """Unconstrained minimizer of ``(A1 x + B1 u)' Q (A1 x + B1 u) + r u^2``."""
    b = B1[:, 0]
    Qb = cost.Q @ b
    return float(-(Qb @ (A1 @ x)) / (b @ Qb + cost.r))


class RegulationMap:
    """Cached eroded targets for every bus of a converged distributed result."""

    def __init__(self, subsystems, S_sets, U_sets, D):
        self.subsystems = list(subsystems)
        self.S = list(S_sets)
        self.U = list(U_sets)
        self.D = D
        if any(S.is_empty_marker for S in self.S):
            raise EmptyErodedTarget("regulation map needs non-empty invariant sets")
        self._targets = [self._erode(i) for i in range(len(self.S))]

    def coupling_sets(self, i):
        """``(T_i, U_N)`` for bus ``i``."""
        nb = self.subsystems[i].neighbors
        T = product_all([self.S[j] for j in nb])
        U_N = product_all([self.U[j] for j in nb])
        return T, U_N

    def _erode(self, i):
        sub, S = self.subsystems[i], self.S[i]
        T, U_N = self.coupling_sets(i)
        F = S.A
        shrink = image_supports(sub.A2, T, F) + image_supports(sub.B2, U_N, F)
        if self.D.dim:
            shrink = shrink + image_supports(sub.E, self.D, F)
        target = reduce(HPolytope(F, S.b - shrink))
        if target.is_empty_marker:
            raise EmptyErodedTarget(f"eroded target of bus {sub.bus_id} is empty")
        return target

    def target(self, i):
        return self._targets[i]

    def omega(self, i, x):
        sub, tgt = self.subsystems[i], self._targets[i]
        x = np.asarray(x, dtype=float)
        return _feasible_inputs(tgt.A, tgt.b, sub.A1 @ x, sub.B1, self.U[i])

    def omega_interval(self, i, x):
        return interval(self.omega(i, x))


def regulation_map(reg, i, x):
    """``Omega_i(x)`` as a 1-D HPolytope (possibly the empty marker)."""
    return reg.omega(i, x)


def rmpc_control(reg, i, x, cost=CostSpec()):
    iv = reg.omega_interval(i, x)
    if iv is None:
        raise EmptyRegulationMap(f"bus {reg.subsystems[i].bus_id}: Omega(x) is empty")
    sub = reg.subsystems[i]
    return _clamp(quadratic_minimizer(sub.A1, sub.B1, np.asarray(x, float), cost), iv)


def onestep_mpc_control(sub, X, U, x, cost=CostSpec()):
    """Nominal one-step MPC with ``A1 x + B1 u in X`` as the only state constraint.

    If no admissible ``u`` satisfies it, return the ``u in U`` that minimizes
    the largest normalized constraint violation.
    """
    x = np.asarray(x, dtype=float)
    A1x = sub.A1 @ x
    iv = interval(_feasible_inputs(X.A, X.b, A1x, sub.B1, U))
    u_star = quadratic_minimizer(sub.A1, sub.B1, x, cost)
    if iv is not None:
        return _clamp(u_star, iv)
    ulo, uhi = interval(U)
    # max_r (F_r (A1x + B1 u) - g_r) is convex piecewise linear in u; its
    # minimizer over [ulo, uhi] sits at an endpoint or at a crossing point.
    slope = X.A @ sub.B1[:, 0]
    off = X.A @ A1x - X.b
    cand = [ulo, uhi]
    for a in range(len(slope)):
        for b in range(a + 1, len(slope)):
            ds = slope[a] - slope[b]
            if abs(ds) > 1e-15:
                u = (off[b] - off[a]) / ds
                if ulo <= u <= uhi:
                    cand.append(float(u))
    cand = np.array(sorted(set(cand)))
    viol = (np.outer(cand, slope) + off).max(axis=1)
    best = np.nonzero(viol <= viol.min() + 1e-12)[0]
    # among equally good inputs, prefer the one closest to the cost minimizer
    k = best[np.argmin(np.abs(cand[best] - u_star))]
    return float(cand[k])


def solve_riccati(A, B, cost=CostSpec(), tol=1e-10, max_iter=100000):
    """Discrete ARE ``P = Q + A'PA - A'PB (r + B'PB)^-1 B'PA``.

    Fixed-point iteration on the Riccati recursion, finished with a few
    Newton (Kleinman) steps when the plain recursion is slow.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q, r = cost.Q, cost.r
    R = r * np.eye(B.shape[1])

    def ric(P):
        G = R + B.T @ P @ B
        return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(G, B.T @ P @ A)

    def resid(P):
        return float(np.abs(ric(P) - P).max())

    P = Q.copy()
    for it in range(max_iter):
        Pn = ric(P)
        if not np.all(np.isfinite(Pn)) or np.abs(Pn).max() > 1e12:
            raise NotStabilizable("Riccati recursion diverged")
        step = np.abs(Pn - P).max()
        P = 0.5 * (Pn + Pn.T)
        if step < tol * 1e-2 * max(1.0, np.abs(P).max()):
            break
        if it > 200 and it % 50 == 0:
            P = _newton_polish(A, B, Q, R, P)
            if resid(P) < tol:
                break
    P = _newton_polish(A, B, Q, R, P)
    res = resid(P)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = float(np.abs(np.linalg.eigvals(A - B @ K)).max())
    if res >= tol or rho >= 1.0:
        raise NotStabilizable(f"ARE residual {res:.3g}, closed-loop radius {rho:.6f}")
    return LqrGain(K=K, P=P, residual=res, spectral_radius=rho)


def _newton_polish(A, B, Q, R, P, steps=4):
    """Kleinman iterations started from a stabilizing ``P``."""
    from scipy.linalg import solve_discrete_lyapunov

    best, best_res = P, None
    for _ in range(steps):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        Ac = A - B @ K
        if np.abs(np.linalg.eigvals(Ac)).max() >= 1.0:
            break
        Pn = solve_discrete_lyapunov(Ac.T, Q + K.T @ R @ K)
        Pn = 0.5 * (Pn + Pn.T)
        G = R + B.T @ Pn @ B
        res = np.abs(Q + A.T @ Pn @ A - A.T @ Pn @ B @ np.linalg.solve(G, B.T @ Pn @ A)
                     - Pn).max()
        if best_res is None or res < best_res:
            best, best_res = Pn, res
        P = Pn
    return best


def lqr_control(gain, U, x):
    """``-sat(K x)`` saturated to the input interval ``U``."""
    iv = interval(U)
    return _clamp(float(-(gain.K @ np.asarray(x, dtype=float))[0]), iv)


def certify_point(reg, i, x, tol=1e-9):
    """Check ``Omega_i(x)`` non-empty and every vertex successor stays in ``S_i``.

    Vertices of the coupling sets, neighbour inputs and load disturbances
    are enumerated; since the successor is affine in each of them, checking
    both interval endpoints of ``Omega`` covers every feasible ``u``.
    Returns ``(ok, worst_violation)``.
    """
    sub, S = reg.subsystems[i], reg.S[i]
    iv = reg.omega_interval(i, x)
    if iv is None:
        return False, np.inf
    W = _disturbance_vertex_images(reg, i)
    x = np.asarray(x, dtype=float)
    worst = -np.inf
    for u in iv:
        nominal = sub.A1 @ x + sub.B1[:, 0] * u
        succ = nominal[None, :] + W
        worst = max(worst, float((succ @ S.A.T - S.b).max()))
    return worst <= tol, worst


def _disturbance_vertex_images(reg, i):
    """All combinations ``A2 y + B2 u_N + E d`` over vertex sets (cached)."""
    cache = reg.__dict__.setdefault("_vertex_images", {})
    if i in cache:
        return cache[i]
    sub = reg.subsystems[i]
    parts = [np.zeros((1, 2))]
    for k, j in enumerate(sub.neighbors):
        parts.append(vertices(reg.S[j]) @ sub.A2[:, 2 * k:2 * k + 2].T)
    for k, j in enumerate(sub.neighbors):
        parts.append(vertices(reg.U[j]) @ sub.B2[:, k:k + 1].T)
    if reg.D.dim:
        parts.append(vertices(reg.D) @ sub.E.T)
    acc = parts[0]
    for p in parts[1:]:
        acc = (acc[:, None, :] + p[None, :, :]).reshape(-1, 2)
        acc = _prune_to_hull(acc)
    cache[i] = acc
    return acc


def _prune_to_hull(P):
    """Keep only hull vertices of a 2-D point cloud; the max over a linear
    functional is unchanged."""
    if len(P) <= 3:
        return P
    try:
        from scipy.spatial import ConvexHull
        return P[ConvexHull(P).vertices]
    except Exception:  # collinear cloud
        return P
