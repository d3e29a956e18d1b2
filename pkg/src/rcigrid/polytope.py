"""Convex polytopes in halfspace representation.

Every set in the package (safe sets, input and disturbance boxes, admissible
iterates, invariant sets) is an :class:`HPolytope`, ``{x : A x <= b}``.  The
empty set is a distinguished marker (``HPolytope.empty(n)``) so callers can
branch on emptiness without solving an LP.

All operations are pure and deterministic for a fixed tolerance.
"""

import itertools
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull

from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, maximize

TOL = 1e-9
MAX_VERTEX_DIM = 6


class PolytopeError(Exception):
    pass


class EmptyPolytopeError(PolytopeError):
    pass


class UnboundedError(PolytopeError):
    pass


class DimensionMismatchError(PolytopeError):
    pass


class DimensionTooHighError(PolytopeError):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class HPolytope:
    """The set ``{x in R^n : A @ x <= b}``.

    Rows are normalized to unit Euclidean norm on construction.  Zero rows
    are dropped when trivially satisfied; a zero row with a negative offset
    turns the polytope into the empty marker.
    """

    __slots__ = ("A", "b", "dim", "_marker", "__dict__")

    def __init__(self, A, b, tol=TOL):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.size == 0:
            n = A.shape[1] if A.ndim == 2 else 0
            A = np.zeros((0, n))
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"normals have {A.shape[0]} rows but offsets "
                             f"have {b.shape[0]} entries")
        norms = np.linalg.norm(A, axis=1)
        zero = norms <= tol
        marker = bool(np.any(b[zero] < -tol))
        keep = ~zero
        A = A[keep] / norms[keep, None]
        b = b[keep] / norms[keep]
        if marker:
            A, b = np.zeros((0, A.shape[1])), np.zeros(0)
        self.A = _frozen(A)
        self.b = _frozen(b)
        self.dim = A.shape[1]
        self._marker = marker

    @classmethod
    def empty(cls, n):
        P = cls(np.zeros((0, n)), np.zeros(0))
        P._marker = True
        return P

    @classmethod
    def universe(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0))

    @classmethod
    def from_box(cls, lower, upper):
        return Box(lower, upper).to_hpolytope()

    @classmethod
    def from_vertices(cls, points):
        return convex_hull(points)

    @property
    def nrows(self):
        return self.A.shape[0]

    @property
    def is_empty_marker(self):
        return self._marker

    @cached_property
    def is_empty(self):
        if self._marker:
            return True
        if self.nrows == 0:
            return False
        return maximize(np.zeros(self.dim), self.A, self.b).status == INFEASIBLE

    @cached_property
    def box_bounds(self):
        """``(lower, upper)`` if every row is axis-aligned, else None."""
        if self._marker or self.nrows == 0:
            return None
        A = self.A
        nz = np.abs(A) > TOL
        if not np.all(nz.sum(axis=1) == 1):
            return None
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for a, b in zip(A, self.b):
            j = int(np.argmax(np.abs(a)))
            if a[j] > 0:
                hi[j] = min(hi[j], b / a[j])
            else:
                lo[j] = max(lo[j], b / a[j])
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            return None
        return lo, hi

    @cached_property
    def vertex_cache(self):
        """Vertices if cheaply available (bounded, dim <= 3), else None."""
        if self._marker or self.dim > 3 or self.nrows <= self.dim:
            return None
        try:
            return vertices(self)
        except PolytopeError:
            return None

    def contains(self, x, tol=1e-9):
        """Membership test, vectorized over the rows of ``x`` if 2-D."""
        x = np.asarray(x, dtype=float)
        if self._marker:
            return np.zeros(x.shape[:-1], dtype=bool) if x.ndim > 1 else False
        if self.nrows == 0:
            return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else True
        viol = x @ self.A.T - self.b
        return np.all(viol <= tol, axis=-1)

    def scaled(self, s):
        """The set ``s * P`` (scaling about the origin, ``s > 0``)."""
        if self._marker:
            return self
        return HPolytope(self.A, self.b * s)

    def __repr__(self):
        if self._marker:
            return f"HPolytope.empty({self.dim})"
        return f"HPolytope(dim={self.dim}, rows={self.nrows})"


class Box:
    """Axis-aligned box ``lower <= x <= upper``."""

    def __init__(self, lower, upper):
        self.lower = _frozen(np.atleast_1d(lower))
        self.upper = _frozen(np.atleast_1d(upper))
        if self.lower.shape != self.upper.shape:
            raise DimensionMismatchError("box bounds differ in length")
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")

    @classmethod
    def symmetric(cls, bound):
        bound = np.atleast_1d(np.asarray(bound, dtype=float))
        return cls(-bound, bound)

    @property
    def dim(self):
        return self.lower.shape[0]

    def to_hpolytope(self):
        n = self.dim
        eye = np.eye(n)
        return HPolytope(np.vstack([eye, -eye]),
                         np.concatenate([self.upper, -self.lower]))


def _check_dims(P, Q):
    if P.dim != Q.dim:
        raise DimensionMismatchError(f"dimensions differ: {P.dim} vs {Q.dim}")


def support(P, direction):
    """``max_{x in P} direction . x``."""
    d = np.asarray(direction, dtype=float).ravel()
    if P.is_empty_marker:
        raise EmptyPolytopeError("support of the empty set")
    if d.shape[0] != P.dim:
        raise DimensionMismatchError("direction length differs from dimension")
    bb = P.box_bounds
    if bb is not None:
        lo, hi = bb
        if np.any(lo > hi + TOL):
            raise EmptyPolytopeError("support of an empty box")
        return float(np.sum(np.maximum(d * lo, d * hi)))
    res = maximize(d, P.A, P.b)
    if res.status == OPTIMAL:
        return res.value
    if res.status == UNBOUNDED:
        raise UnboundedError("polytope unbounded in the requested direction")
    raise EmptyPolytopeError("support of an infeasible system")


def supports(P, directions):
    """Support values for each row of ``directions``.

    Low-dimensional bounded polytopes are evaluated on their cached vertex
    list; everything else goes through one LP per direction.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if P.is_empty_marker:
        raise EmptyPolytopeError("support of the empty set")
    if P.box_bounds is None and P.dim <= 3:
        V = P.vertex_cache
        if V is not None:
            return (D @ V.T).max(axis=1)
    return np.array([support(P, d) for d in D])


def reduce(P, tol=TOL, interior=None):
    """Remove redundant rows; returns the empty marker if infeasible.

    With a strictly interior point ``x0`` the non-redundant rows are exactly
    the vertices of ``conv{a_j / (b_j - a_j x0)}``; flat or degenerate
    systems fall back to one LP per row.  ``interior`` may supply such a
    point and skips the centring LP when every slack is positive.
    """
    if P.is_empty_marker or P.nrows == 0:
        return P
    n = P.dim
    bb = P.box_bounds
    if bb is not None:
        lo, hi = bb
        if np.any(lo > hi + tol):
            return HPolytope.empty(n)
        return Box(lo, np.maximum(hi, lo)).to_hpolytope()

    A, b = _merge_parallel(P.A, P.b)
    x0 = None
    if interior is not None:
        x0 = np.asarray(interior, dtype=float)
        if np.min(b - A @ x0) <= 1e-7:
            x0 = None
    if x0 is None:
        x0, r = chebyshev_center(A, b, tol)
        if x0 is None:
            return HPolytope.empty(n)
        if r <= 1e-7:
            x0 = None
    if x0 is not None and n >= 2:
        slack = b - A @ x0
        pts = A / slack[:, None]
        keep = _polar_hull_rows(np.vstack([pts, np.zeros((1, n))]))
        if keep is not None:
            keep = sorted(v for v in keep if v < len(b))
            return HPolytope(A[keep], b[keep])
    return _reduce_lp(A, b, n, tol)


def _polar_hull_rows(pts):
    """Hull vertex indices of the polar points, or None if qhull gives up.

    Near-duplicate facets can trip qhull's merging; joggled input is the
    fallback.  Its perturbation (~1e-11 relative) is far below TOL and can
    only err towards keeping a barely-redundant row.
    """
    for opts in (None, "QJ"):
        try:
            return [int(v) for v in ConvexHull(pts, qhull_options=opts).vertices]
        except Exception:  # QhullError or flat input
            continue
    return None


def _merge_parallel(A, b, decimals=12):
    """Collapse rows with (numerically) identical normals onto the tightest offset."""
    if len(b) < 2:
        return A, b
    key = np.round(A, decimals) + 0.0  # +0.0 folds -0.0 into 0.0
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    best = np.full(inv.max() + 1, np.inf)
    np.minimum.at(best, inv, b)
    first = np.full(inv.max() + 1, -1)
    for i in range(len(b) - 1, -1, -1):
        first[inv[i]] = i
    return A[first], best


def chebyshev_center(A, b, tol=TOL, cap=1.0):
    """``(x0, r)`` maximizing ``r <= cap`` with ``A x + r <= b`` (unit-norm rows).

    Returns ``(None, None)`` when the system is infeasible.
    """
    n = A.shape[1]
    A_c = np.vstack([np.hstack([A, np.ones((len(b), 1))]), np.eye(n + 1)[-1:]])
    res = maximize(np.eye(n + 1)[-1], A_c, np.concatenate([b, [cap]]), tol)
    if res.status == INFEASIBLE or (res.status == OPTIMAL and res.value < -tol):
        return None, None
    return res.x[:n], float(res.value)


def _reduce_lp(A, b, n, tol):
    # assumes the system is already known to be feasible
    b = np.array(b)
    # duplicate normals: keep one row carrying the tightest offset
    idx = []
    for i in range(len(b)):
        dup = [j for j in idx if np.max(np.abs(A[j] - A[i])) <= tol]
        if dup:
            b[dup[0]] = min(b[dup[0]], b[i])
        else:
            idx.append(i)
    alive = list(idx)
    for i in idx:
        others = [j for j in alive if j != i]
        if not others:
            continue
        A_lp = np.vstack([A[others], A[i]])
        b_lp = np.concatenate([b[others], [b[i] + 1.0]])
        res = maximize(A[i], A_lp, b_lp)
        if res.status == OPTIMAL and res.value <= b[i] + tol:
            alive.remove(i)
        elif res.status == INFEASIBLE:
            return HPolytope.empty(n)
    return HPolytope(A[alive], b[alive])


def intersect(P, Q):
    _check_dims(P, Q)
    if P.is_empty_marker or Q.is_empty_marker:
        return HPolytope.empty(P.dim)
    return reduce(HPolytope(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b])))


def product(P, Q):
    """Cartesian product ``P x Q`` (block-diagonal rows)."""
    n, m = P.dim, Q.dim
    if P.is_empty_marker or Q.is_empty_marker:
        return HPolytope.empty(n + m)
    A = np.zeros((P.nrows + Q.nrows, n + m))
    A[:P.nrows, :n] = P.A
    A[P.nrows:, n:] = Q.A
    return HPolytope(A, np.concatenate([P.b, Q.b]))


def product_all(sets, dim_if_empty=0):
    """Cartesian product of a sequence of polytopes (in order)."""
    sets = list(sets)
    if not sets:
        return HPolytope.universe(dim_if_empty)
    out = sets[0]
    for S in sets[1:]:
        out = product(out, S)
    return out


def pontryagin_diff(P, Q):
    """``P ⊖ Q = {x : x + q in P for all q in Q}`` (erosion)."""
    _check_dims(P, Q)
    if Q.is_empty_marker:
        raise EmptyPolytopeError("erosion by the empty set")
    if P.is_empty_marker:
        return P
    shrink = supports(Q, P.A) if P.nrows else np.zeros(0)
    return reduce(HPolytope(P.A, P.b - shrink))


def erode_by_image(P, F, Q):
    """``P ⊖ F Q`` without forming the image: ``h_{FQ}(a) = h_Q(F^T a)``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (P.dim, Q.dim):
        raise DimensionMismatchError("map shape does not match the sets")
    if P.is_empty_marker:
        return P
    return HPolytope(P.A, P.b - image_supports(F, Q, P.A))


def image_supports(F, Q, directions):
    """Support of ``F Q`` in each row of ``directions``."""
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.size == 0 or Q.dim == 0:
        return np.zeros(D.shape[0])
    return supports(Q, D @ F)


def _fme_step(A, b, j, tol):
    col = A[:, j]
    zero = np.abs(col) <= tol
    pos = np.nonzero(col > tol)[0]
    neg = np.nonzero(col < -tol)[0]
    rows = [A[zero]]
    offs = [b[zero]]
    if pos.size and neg.size:
        Ap = A[pos] / col[pos, None]
        bp = b[pos] / col[pos]
        An = A[neg] / -col[neg, None]
        bn = b[neg] / -col[neg]
        comb = (Ap[:, None, :] + An[None, :, :]).reshape(-1, A.shape[1])
        boff = (bp[:, None] + bn[None, :]).ravel()
        comb[:, j] = 0.0
        rows.append(comb)
        offs.append(boff)
    A2 = np.delete(np.vstack(rows), j, axis=1)
    return A2, np.concatenate(offs)


def project(P, keep, tol=TOL):
    """Shadow of ``P`` on the coordinates ``keep`` (Fourier-Motzkin)."""
    keep = [int(k) for k in keep]
    n = P.dim
    if len(set(keep)) != len(keep) or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid coordinate selection {keep}")
    if P.is_empty_marker:
        return HPolytope.empty(len(keep))
    Q = reduce(P)
    if Q.is_empty_marker:
        return HPolytope.empty(len(keep))
    # an interior point of P stays interior in every shadow, which lets
    # reduce skip its centring LP on the (possibly large) combined systems
    x0, r = chebyshev_center(Q.A, Q.b, tol)
    if x0 is None:
        return HPolytope.empty(len(keep))
    if r <= 1e-7:
        x0 = None
    cols = list(range(n))
    A, b = np.array(Q.A), np.array(Q.b)
    for j in sorted(set(range(n)) - set(keep), reverse=True):
        idx = cols.index(j)
        A, b = _fme_step(A, b, idx, tol)
        cols.remove(j)
        if x0 is not None:
            x0 = np.delete(x0, idx)
        R = reduce(HPolytope(A, b), tol, interior=x0)
        if R.is_empty_marker:
            return HPolytope.empty(len(keep))
        A, b = np.array(R.A), np.array(R.b)
    order = [cols.index(k) for k in keep]
    return HPolytope(A[:, order], b)


def contains_scaled(P, Q, scale, tol=TOL):
    """True iff ``scale * P ⊇ Q`` (scaling about the origin)."""
    _check_dims(P, Q)
    if Q.is_empty_marker:
        return True
    if P.is_empty_marker:
        return False
    if P.nrows == 0:
        return True
    try:
        h = supports(Q, P.A)
    except UnboundedError:
        return False
    return bool(np.all(h <= scale * P.b + tol))


def bounding_box(P):
    if P.is_empty_marker:
        raise EmptyPolytopeError("bounding box of the empty set")
    eye = np.eye(P.dim)
    hi = np.array([support(P, d) for d in eye])
    lo = -np.array([support(P, -d) for d in eye])
    return lo, hi


def vertices(P, tol=TOL):
    """Extreme points of a bounded polytope, sorted lexicographically."""
    n = P.dim
    if n > MAX_VERTEX_DIM:
        raise DimensionTooHighError(f"vertex enumeration limited to dimension "
                                    f"{MAX_VERTEX_DIM}, got {n}")
    if P.is_empty_marker:
        raise EmptyPolytopeError("vertices of the empty set")
    R = reduce(P)
    if R.is_empty_marker:
        raise EmptyPolytopeError("vertices of an infeasible system")
    bounding_box(R)  # raises UnboundedError
    A, b = R.A, R.b
    m = A.shape[0]
    found = []
    scale = max(1.0, float(np.abs(b).max())) if m else 1.0
    for chunk in _chunks(itertools.combinations(range(m), n), 20000):
        idx = np.array(chunk)
        M = A[idx]
        rhs = b[idx]
        det = np.linalg.det(M)
        ok = np.abs(det) > 1e-10
        if not ok.any():
            continue
        X = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
        feas = np.all(X @ A.T - b <= 1e-8 * scale, axis=1)
        found.append(X[feas])
    V = np.vstack(found)
    return _dedupe(V, 1e-7 * scale)


def _chunks(iterable, size):
    it = iter(iterable)
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield chunk


def _dedupe(V, tol):
    V = V[np.lexsort(V.T[::-1])]
    out = []
    for v in V:
        if not any(np.max(np.abs(v - w)) <= tol for w in out):
            out.append(v)
    out = np.array(out)
    return out[np.lexsort(out.T[::-1])]


def polygon(P):
    """Vertices of a bounded 2-D polytope in counter-clockwise order,
    starting from the lexicographically smallest one."""
    if P.dim != 2:
        raise DimensionMismatchError("polygon() needs a 2-D polytope")
    V = vertices(P)
    if len(V) < 3:
        return V
    c = V.mean(axis=0)
    V = V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]), kind="stable")]
    start = min(range(len(V)), key=lambda k: (V[k, 0], V[k, 1]))
    return np.roll(V, -start, axis=0)


def convex_hull(points, tol=1e-9):
    """H-representation of the convex hull of a finite point set.

    Lower-dimensional point clouds are handled by working inside their
    affine hull and adding the complementary equality constraints.
    """
    V = np.atleast_2d(np.asarray(points, dtype=float))
    k, n = V.shape
    if k == 0:
        return HPolytope.empty(n)
    c = V.mean(axis=0)
    W = V - c
    scale = max(1.0, float(np.abs(V).max()))
    if k > 1:
        _, s, Vt = np.linalg.svd(W, full_matrices=True)
        r = int(np.sum(s > tol * scale * 10))
    else:
        Vt = np.eye(n)
        r = 0
    basis = Vt[:r]
    comp = Vt[r:]
    rows, offs = [], []
    if comp.shape[0]:
        rows += [comp, -comp]
        offs += [comp @ c, -(comp @ c)]
    Y = W @ basis.T
    if r == 1:
        u = basis[0]
        rows += [u[None, :], -u[None, :]]
        offs += [np.array([Y.max() + u @ c]), np.array([-Y.min() - u @ c])]
    elif r >= 2:
        hull = ConvexHull(Y)
        eq = hull.equations
        normals = eq[:, :-1] @ basis
        rows.append(normals)
        offs.append(-eq[:, -1] + normals @ c)
    return reduce(HPolytope(np.vstack(rows), np.concatenate(offs)))


def minkowski_sum(P, Q):
    """``P ⊕ Q`` via pairwise vertex sums and a convex hull."""
    _check_dims(P, Q)
    if P.is_empty_marker or Q.is_empty_marker:
        raise EmptyPolytopeError("Minkowski sum with the empty set")
    VP, VQ = vertices(P), vertices(Q)
    S = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, P.dim)
    return convex_hull(S)


def linear_image(F, P):
    """``F P = {F x : x in P}`` for a bounded ``P``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[1] != P.dim:
        raise DimensionMismatchError("map columns differ from set dimension")
    if P.is_empty_marker:
        raise EmptyPolytopeError("image of the empty set")
    return convex_hull(vertices(P) @ F.T)


def sample_uniform(P, count, rng, max_batches=1000):
    """Rejection-sample ``count`` points uniformly from a bounded ``P``."""
    lo, hi = bounding_box(P)
    out = []
    got = 0
    for _ in range(max_batches):
        X = rng.uniform(lo, hi, size=(max(4 * count, 64), P.dim))
        X = X[P.contains(X, tol=0.0)]
        out.append(X)
        got += len(X)
        if got >= count:
            break
    X = np.vstack(out)[:count]
    if len(X) < count:
        raise PolytopeError("rejection sampling failed; set may be flat")
    return X


def write_csv(path, P):
    """Write ``P`` as ``# n=<dim>`` followed by ``a1,...,an,b`` rows."""
    lines = [f"# n={P.dim}"]
    if P.is_empty_marker:
        lines.append("# empty")
    for a, b in zip(P.A, P.b):
        lines.append(",".join(f"{v:.17g}" for v in (*a, b)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    n = None
    empty = False
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("n="):
                    n = int(body[2:])
                elif body == "empty":
                    empty = True
                continue
            vals = [float(v) for v in line.split(",")]
            if n is not None and len(vals) != n + 1:
                raise ValueError(f"{path}:{lineno}: expected {n + 1} values, "
                                 f"got {len(vals)}")
            rows.append(vals)
    if n is None:
        raise ValueError(f"{path}: missing '# n=<dim>' header")
    if empty:
        return HPolytope.empty(n)
    R = np.array(rows, dtype=float).reshape(-1, n + 1)
    return _raw(R[:, :n], R[:, n])


def _raw(A, b):
    """Build without renormalizing, so CSV round-trips are bitwise exact."""
    P = HPolytope.__new__(HPolytope)
    P.A = _frozen(A)
    P.b = _frozen(b)
    P.dim = A.shape[1]
    P._marker = False
    return P
