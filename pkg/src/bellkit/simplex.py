"""Phase-1 simplex for equality-form linear feasibility.

Decides whether {x >= 0 : A x = b} is nonempty by minimizing the sum
of artificial variables with Bland's smallest-index pivoting rule,
which cannot cycle, so termination is guaranteed.  Returns either a
basic feasible point or a Farkas certificate y with y.A <= 0
(componentwise, up to tolerance) and y.b > 0, proving emptiness.

Rank-deficient A is fine: redundant rows keep their artificial
variables basic at zero.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

_PIVOT_TOL = 1e-11


class SimplexStallError(RuntimeError):
    """The pivot loop exceeded its iteration budget or produced an
    unusable certificate; the caller must not trust any verdict."""


def phase1_simplex(
    A: np.ndarray,
    b: np.ndarray,
    tol: float = 1e-9,
    max_iter: Optional[int] = None,
) -> Tuple[str, Optional[np.ndarray], Optional[np.ndarray], float]:
    """Solve the phase-1 problem for A x = b, x >= 0.

    Returns (status, x, y, residual) where status is "feasible" with
    x >= 0 satisfying the equalities within tolerance, or "infeasible"
    with a Farkas vector y; residual is the optimal artificial sum.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.size:
        raise ValueError("A must be (m, n) and b must be (m,)")
    m, n = A.shape
    if max_iter is None:
        max_iter = 10_000 + 10 * (n + m)

    flip = np.where(b < 0, -1.0, 1.0)
    T = np.empty((m, n + m + 1))
    T[:, :n] = A * flip[:, None]
    T[:, n:n + m] = np.eye(m)
    T[:, -1] = b * flip
    basis = list(range(n, n + m))

    # reduced costs for min(sum of artificials); tracked as a row of
    # the tableau so pivots keep it current
    r = np.zeros(n + m + 1)
    r[n:n + m] = 1.0
    r -= T.sum(axis=0)

    for _ in range(max_iter):
        negative = r[:n + m] < -tol
        if not negative.any():
            break
        q = int(np.argmax(negative))  # smallest eligible index
        col = T[:, q]
        can_leave = col > _PIVOT_TOL
        if not can_leave.any():
            raise SimplexStallError(
                "phase-1 column unbounded; inconsistent tableau")
        rows = np.nonzero(can_leave)[0]
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        near = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        p = min(near, key=lambda i: basis[i])  # smallest basic index
        piv = T[p, q]
        T[p] /= piv
        pivot_row = T[p]
        factors = T[:, q].copy()
        factors[p] = 0.0
        T -= factors[:, None] * pivot_row[None, :]
        r -= r[q] * pivot_row
        basis[p] = q
    else:
        raise SimplexStallError(
            f"no convergence within {max_iter} pivots")

    residual = float(sum(T[i, -1] for i in range(m) if basis[i] >= n))
    if residual <= tol:
        x = np.zeros(n)
        for i, var in enumerate(basis):
            if var < n:
                x[var] = T[i, -1]
        np.clip(x, 0.0, None, out=x)
        return "feasible", x, None, residual

    # Farkas direction from the artificial reduced costs:
    # y_i = 1 - r[n + i] on the sign-flipped system
    y = (1.0 - r[n:n + m]) * flip
    gain = float(y @ b)
    slack = float((y @ A).max())
    if gain <= tol or slack > 100.0 * max(tol, 1e-12):
        raise SimplexStallError(
            f"unusable infeasibility certificate: gain={gain:.3e}, "
            f"max residual={slack:.3e}")
    return "infeasible", None, y, residual
