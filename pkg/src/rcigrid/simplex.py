"""Small dense simplex solver for ``max c.x  s.t.  A x <= b`` with free ``x``.

The problems handled here are tiny (tens of rows, at most ~10 columns), so a
plain tableau with Bland's anti-cycling rule is fast enough and keeps the
package free of an external LP dependency.
"""

import numpy as np

TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPResult:
    __slots__ = ("status", "x", "value")

    def __init__(self, status, x=None, value=None):
        self.status = status
        self.x = x
        self.value = value

    def __repr__(self):
        return f"LPResult({self.status!r}, value={self.value!r})"


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    nz = np.abs(colvals) > 0.0
    if nz.any():
        T[nz] -= np.outer(colvals[nz], piv)
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _run(T, basis, ncols, tol):
    """Iterate on tableau ``T`` (objective row last, maximization form).

    The objective row stores reduced costs as ``-c_j``, so a negative entry
    means the column improves the objective.  Returns False on unboundedness.
    """
    m = T.shape[0] - 1
    while True:
        obj = T[-1, :ncols]
        cand = np.nonzero(obj < -tol)[0]
        if cand.size == 0:
            return True
        col = int(cand[0])  # Bland: smallest improving index
        colv = T[:m, col]
        pos = colv > tol
        if not pos.any():
            return False
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol * max(1.0, abs(best)))[0]
        # Bland: among ties leave with the smallest basic variable index
        row = int(ties[np.argmin(basis[ties])])
        _pivot(T, basis, row, col)


def maximize(c, A, b, tol=TOL):
    """Maximize ``c @ x`` subject to ``A @ x <= b`` with ``x`` unrestricted.

    Returns an :class:`LPResult` whose status is one of ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m, n = A.shape
    if m == 0:
        if np.all(np.abs(c) <= tol):
            return LPResult(OPTIMAL, np.zeros(n), 0.0)
        return LPResult(UNBOUNDED)

    # columns: x+ (n), x- (n), slacks (m), artificial (1), rhs
    nv = 2 * n + m
    T = np.zeros((m + 1, nv + 2))
    T[:m, :n] = A
    T[:m, n:2 * n] = -A
    T[:m, 2 * n:nv] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(2 * n, nv)

    if b.min() < -tol:
        # Phase 1: single artificial column, maximize -x0.
        T[:m, nv] = -1.0
        T[-1, :] = 0.0
        T[-1, nv] = 1.0
        row = int(np.argmin(b))
        _pivot(T, basis, row, nv)
        _run(T, basis, nv + 1, tol)
        if T[-1, -1] < -tol * max(1.0, np.abs(b).max()):
            return LPResult(INFEASIBLE)
        where = np.nonzero(basis == nv)[0]
        if where.size:
            r = int(where[0])
            nzc = np.nonzero(np.abs(T[r, :nv]) > tol)[0]
            if nzc.size:
                _pivot(T, basis, r, int(nzc[0]))
            else:
                T[r, :] = 0.0  # redundant row; leave it inert
        T[:, nv] = 0.0
    else:
        T[:m, -1] = np.maximum(T[:m, -1], 0.0)

    # Phase 2 objective row in terms of the current basis.
    cost = np.zeros(nv + 1)
    cost[:n] = c
    cost[n:2 * n] = -c
    T[-1, :] = 0.0
    T[-1, :nv] = -cost[:nv]
    for r, j in enumerate(basis):
        if cost[j] != 0.0:
            T[-1] += cost[j] * T[r]
    if not _run(T, basis, nv, tol):
        return LPResult(UNBOUNDED)

    z = np.zeros(nv + 1)
    z[basis] = T[:m, -1]
    x = z[:n] - z[n:2 * n]
    return LPResult(OPTIMAL, x, float(c @ x))


def feasible_point(A, b, tol=TOL):
    """Return some point of ``{x : A x <= b}`` or None when it is empty."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    res = maximize(np.zeros(A.shape[1]), A, b, tol)
    return res.x if res.status == OPTIMAL else None
