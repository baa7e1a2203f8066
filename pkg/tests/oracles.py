"""Independent reference computations used by the test suite.

Everything here is deliberately written the slow, obvious way (scalar
loops, exhaustive enumeration, textbook quadrature) and shares no code
with the package internals it checks.
"""

import itertools

import numpy as np


# ---------------------------------------------------------------------------
# marginal boxes of hidden-variable models

def circle_marginal_box(model, S_A, S_B, n=20001):
    """Midpoint-rule quadrature over lambda in [0, 2pi) of the response
    indicator products; returns a raw (S_A,S_B,d_A,d_B) array."""
    lam = (np.arange(n) + 0.5) * (2.0 * np.pi / n)
    d_a, d_b = model.num_outcomes_A, model.num_outcomes_B
    table = np.zeros((S_A, S_B, d_a, d_b))
    for a in range(S_A):
        out_a = np.asarray(model.response_A(a, lam))
        for b in range(S_B):
            out_b = np.asarray(model.response_B(b, lam))
            flat = np.bincount(out_a * d_b + out_b, minlength=d_a * d_b)
            table[a, b] = flat.reshape(d_a, d_b) / n
    return table


def discrete_marginal_box(model, S_A, S_B):
    """Exact marginalization for finite lambda laws."""
    probs = np.asarray(model.lambda_probs)
    lam = np.arange(probs.size)
    d_a, d_b = model.num_outcomes_A, model.num_outcomes_B
    table = np.zeros((S_A, S_B, d_a, d_b))
    for a in range(S_A):
        out_a = np.asarray(model.response_A(a, lam))
        for b in range(S_B):
            out_b = np.asarray(model.response_B(b, lam))
            for k in range(probs.size):
                table[a, b, out_a[k], out_b[k]] += probs[k]
    return table


def sign_model_correlator(theta_a, theta_b):
    """Analytic correlator of the circle sign model: a sawtooth in the
    angle difference, E = -1 + 2|d|/pi for |d| <= pi (period 2pi)."""
    d = abs(((theta_a - theta_b) + np.pi) % (2.0 * np.pi) - np.pi)
    return -1.0 + 2.0 * d / np.pi


def box_correlator(table, a, b):
    """Sign-sum of one conditional slice, outcome 0 -> +1."""
    acc = 0.0
    for A in range(2):
        for B in range(2):
            s = (1 if A == 0 else -1) * (1 if B == 0 else -1)
            acc += s * table[a, b, A, B]
    return acc


# ---------------------------------------------------------------------------
# coincidence matching, the slow way

def brute_force_match(times_a, times_b, tau):
    """Closest-pair-first matching by repeated global scan.

    Ties break lexicographically on (distance, t_A, t_B, i, j).  Returns
    the list of (i, j) index pairs, sorted by i.
    """
    times_a = list(map(float, times_a))
    times_b = list(map(float, times_b))
    free_a = set(range(len(times_a)))
    free_b = set(range(len(times_b)))
    out = []
    while True:
        best = None
        for i in free_a:
            for j in free_b:
                d = abs(times_a[i] - times_b[j])
                if d > tau:
                    continue
                key = (d, times_a[i], times_b[j], i, j)
                if best is None or key < best:
                    best = key
        if best is None:
            break
        _, _, _, i, j = best
        out.append((i, j))
        free_a.remove(i)
        free_b.remove(j)
    return sorted(out)


# ---------------------------------------------------------------------------
# joint feasibility, the slow way (two binary settings per arm)

def _constraint_system_2222(marginals):
    """Equality system for the 16-entry joint over (A1,A2,B1,B2):
    16 marginal-cell rows plus normalization.  marginals[a][b] is a
    2x2 array p(A,B | a,b)."""
    rows, rhs = [], []
    assignments = list(itertools.product((0, 1), repeat=4))  # (A1,A2,B1,B2)
    for a in range(2):
        for b in range(2):
            for A in range(2):
                for B in range(2):
                    row = [1.0 if (asg[a] == A and asg[2 + b] == B) else 0.0
                           for asg in assignments]
                    rows.append(row)
                    rhs.append(float(marginals[a][b][A][B]))
    rows.append([1.0] * 16)
    rhs.append(1.0)
    return np.array(rows), np.array(rhs), assignments


def vertex_enumeration_feasible(marginals, tol=1e-7):
    """Decide feasibility by enumerating candidate basic solutions.

    Reduces the equality system to a row basis, then tries every
    column subset of that size; feasible iff some subset solves the
    system with all entries >= -tol.
    """
    A, b, _ = _constraint_system_2222(marginals)
    # orthonormal row basis via SVD so redundant rows drop out exactly
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    keep = s > 1e-10 * s[0]
    r = int(keep.sum())
    R = (u[:, keep].T @ A)
    rb = u[:, keep].T @ b
    # consistency of the dropped rows: b must lie in the column space
    if np.linalg.norm(b - u[:, keep] @ rb, ord=np.inf) > 1e-8:
        # the marginals themselves are contradictory; no x can exist
        return False
    n = A.shape[1]
    subsets = list(itertools.combinations(range(n), r))
    mats = np.stack([R[:, list(sub)] for sub in subsets])
    dets = np.abs(np.linalg.det(mats))
    good = dets > 1e-10
    sols = np.full((len(subsets), r), np.nan)
    rhs = np.broadcast_to(rb, (int(good.sum()), r))[..., None]
    sols[good] = np.linalg.solve(mats[good], rhs)[..., 0]
    for k, sub in enumerate(subsets):
        if not good[k]:
            continue
        x = sols[k]
        if x.min() < -tol:
            continue
        full = np.zeros(n)
        full[list(sub)] = x
        if np.abs(R @ full - rb).max() <= 1e-7:
            return True
    return False


def scipy_feasible(marginals, tol=1e-9):
    """Third opinion via scipy's HiGHS LP."""
    from scipy.optimize import linprog
    A, b, _ = _constraint_system_2222(marginals)
    res = linprog(c=np.zeros(A.shape[1]), A_eq=A, b_eq=b,
                  bounds=[(0, None)] * A.shape[1], method="highs")
    return res.status == 0


def deterministic_max_2222(weights):
    """Exact max of sum_{a,b} w[a,b,A_a,B_b] over the 16 deterministic
    strategies (A1,A2,B1,B2)."""
    w = np.asarray(weights, dtype=np.float64)
    best = -np.inf
    for A1, A2, B1, B2 in itertools.product((0, 1), repeat=4):
        val = 0.0
        for a, Aa in ((0, A1), (1, A2)):
            for b, Bb in ((0, B1), (1, B2)):
                val += w[a, b, Aa, Bb]
        best = max(best, val)
    return best


def chsh_from_marginals(marginals):
    """Max over the eight odd-minus-sign combinations of correlators."""
    E = {}
    for a in range(2):
        for b in range(2):
            acc = 0.0
            for A in range(2):
                for B in range(2):
                    s = (1 if A == 0 else -1) * (1 if B == 0 else -1)
                    acc += s * marginals[a][b][A][B]
            E[(a, b)] = acc
    best = 0.0
    for signs in itertools.product((1, -1), repeat=4):
        if signs[0] * signs[1] * signs[2] * signs[3] != -1:
            continue
        val = abs(sum(signs[2 * a + b] * E[(a, b)]
                      for a in range(2) for b in range(2)))
        best = max(best, val)
    return best
