"""Joint-distribution feasibility for setting-conditioned marginals.

Given one conditional table p(A,B|a,b) per setting pair, decide
whether a single joint distribution over all per-setting outcomes
(A_1..A_{S_A}, B_1..B_{S_B}) has every table as a pairwise marginal.
Existence of such a joint is what a noncontextual account of the data
requires, and it can fail even when every table is individually
well-formed and no-signaling holds.

The decision is a linear feasibility problem over the
d_A^S_A * d_B^S_B assignment probabilities.  A feasible verdict
carries the joint as a certificate and is replayed against the inputs
before being returned; an infeasible verdict carries a Farkas witness
canonicalized into a Bell-type inequality: coefficients over marginal
cells whose maximum over deterministic assignments (the classical
bound) is exceeded by the data.  Either verification failing raises
instead of mis-reporting.

``fine_check`` is the closed-form route for the binary two-setting
unbiased case: the joint exists iff all eight odd-sign CHSH
combinations stay within 2.  It shares no code with the solver, so
the two can cross-check each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .events import ResourceGuardError
from .simplex import SimplexStallError, phase1_simplex
from .statistics import ConditionalTable, SummaryTable, conditionals

_ENUM_GUARD = 10_000_000
_LP_GUARD = 200_000
_SLICE_TOL = 1e-9
_CHUNK = 1 << 16

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INCONSISTENT = "inconsistent_marginals"

JOINT_EXISTS = "joint-exists"
JOINT_DOES_NOT_EXIST = "joint-does-not-exist"
NOT_APPLICABLE = "not-applicable"


class VerificationError(RuntimeError):
    """A solver verdict failed its independent post-check; nothing was
    reported rather than reporting something unverified."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarginalProblem:
    """All S_A*S_B conditional tables plus the decision tolerance."""

    S_A: int
    S_B: int
    d_A: int
    d_B: int
    marginals: np.ndarray  # [a, b, A, B], each (a,b) slice sums to 1
    tolerance: float = 1e-9

    def __post_init__(self):
        if min(self.S_A, self.S_B) < 1 or min(self.d_A, self.d_B) < 2:
            raise ValueError("need S >= 1 settings and d >= 2 outcomes")
        if not (0 < self.tolerance < 1e-3):
            raise ValueError("tolerance must be in (0, 1e-3)")
        marg = np.array(self.marginals, dtype=float)
        shape = (self.S_A, self.S_B, self.d_A, self.d_B)
        if marg.shape != shape:
            raise ValueError(
                f"marginals shape {marg.shape} does not match {shape}")
        if not np.isfinite(marg).all():
            raise ValueError("marginals must be finite")
        if (marg < -1e-12).any():
            raise ValueError("marginals must be nonnegative")
        np.clip(marg, 0.0, None, out=marg)
        sums = marg.sum(axis=(2, 3))
        bad = np.abs(sums - 1.0) > _SLICE_TOL
        if bad.any():
            a, b = np.argwhere(bad)[0]
            raise ValueError(
                f"setting pair ({a},{b}) sums to {sums[a, b]!r}, not 1")
        object.__setattr__(self, "marginals", _freeze(marg))

    @classmethod
    def from_conditionals(cls, tables: Sequence[ConditionalTable],
                          tolerance: float = 1e-9) -> "MarginalProblem":
        if not tables:
            raise ValueError("no conditional tables given")
        S_A = max(t.a for t in tables) + 1
        S_B = max(t.b for t in tables) + 1
        d_A, d_B = tables[0].probs.shape
        seen = {}
        for t in tables:
            if t.probs.shape != (d_A, d_B):
                raise ValueError("conditional tables disagree on dims")
            if (t.a, t.b) in seen:
                raise ValueError(f"duplicate setting pair ({t.a},{t.b})")
            if t.is_empty:
                raise ValueError(
                    f"setting pair ({t.a},{t.b}) has no data")
            seen[(t.a, t.b)] = t
        marg = np.zeros((S_A, S_B, d_A, d_B))
        for a in range(S_A):
            for b in range(S_B):
                if (a, b) not in seen:
                    raise ValueError(f"missing setting pair ({a},{b})")
                marg[a, b] = seen[(a, b)].probs
        return cls(S_A, S_B, d_A, d_B, marg, tolerance)

    @classmethod
    def from_summary(cls, table: SummaryTable,
                     tolerance: float = 1e-9) -> "MarginalProblem":
        return cls.from_conditionals(conditionals(table), tolerance)

    @classmethod
    def from_box(cls, box, tolerance: float = 1e-9) -> "MarginalProblem":
        return cls(box.S_A, box.S_B, box.d_A, box.d_B, box.table,
                   tolerance)

    def singles_A(self) -> np.ndarray:
        """p(A|a,b), shape (S_A, S_B, d_A)."""
        return self.marginals.sum(axis=3)

    def singles_B(self) -> np.ndarray:
        """p(B|a,b), shape (S_A, S_B, d_B)."""
        return self.marginals.sum(axis=2)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Probabilities over all (A_1..A_{S_A}, B_1..B_{S_B}) assignments,
    flat in C order over shape (d_A,)*S_A + (d_B,)*S_B."""

    S_A: int
    S_B: int
    d_A: int
    d_B: int
    probabilities: np.ndarray
    tolerance: float = 1e-9

    def __post_init__(self):
        probs = np.array(self.probabilities, dtype=float)
        size = self.d_A ** self.S_A * self.d_B ** self.S_B
        if probs.shape != (size,):
            raise ValueError(
                f"expected {size} probabilities, got {probs.shape}")
        if (probs < -self.tolerance).any():
            raise ValueError("probabilities must be nonnegative")
        np.clip(probs, 0.0, None, out=probs)
        if abs(probs.sum() - 1.0) > self.tolerance:
            raise ValueError(f"probabilities sum to {probs.sum()!r}")
        object.__setattr__(self, "probabilities", _freeze(probs))

    def _tensor(self) -> np.ndarray:
        shape = (self.d_A,) * self.S_A + (self.d_B,) * self.S_B
        return self.probabilities.reshape(shape)

    def pairwise_marginal(self, a: int, b: int) -> np.ndarray:
        """p(A_a, B_b): marginalize all other assignment axes."""
        if not (0 <= a < self.S_A and 0 <= b < self.S_B):
            raise ValueError(f"no setting pair ({a},{b})")
        axes = tuple(k for k in range(self.S_A + self.S_B)
                     if k not in (a, self.S_A + b))
        return self._tensor().sum(axis=axes)

    def all_pairwise_marginals(self) -> np.ndarray:
        out = np.empty((self.S_A, self.S_B, self.d_A, self.d_B))
        for a in range(self.S_A):
            for b in range(self.S_B):
                out[a, b] = self.pairwise_marginal(a, b)
        return out


@dataclass(frozen=True)
class ConsistencyViolation:
    arm: str
    setting: int
    outcome: int
    foreign_pair: Tuple[int, int]
    values: Tuple[float, float]
    delta: float


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    """Single-variable marginals compared across foreign settings."""

    max_discrepancy: float
    tolerance: float
    passed: bool
    violations: Tuple[ConsistencyViolation, ...]

    def __post_init__(self):
        if self.passed != (self.max_discrepancy <= self.tolerance):
            raise ValueError("passed flag inconsistent with discrepancy")

    def to_dict(self) -> dict:
        return {
            "max_discrepancy": self.max_discrepancy,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "violations": [
                {"arm": v.arm, "setting": v.setting,
                 "outcome": v.outcome,
                 "foreign_pair": list(v.foreign_pair),
                 "values": list(v.values), "delta": v.delta}
                for v in self.violations],
        }


@dataclass(frozen=True, eq=False)
class FeasibilityResult:
    status: str
    consistency: ConsistencyReport
    certificate: Optional[JointDistribution] = None
    witness: Optional[np.ndarray] = None
    witness_value: Optional[float] = None
    classical_bound: Optional[float] = None

    def __post_init__(self):
        if self.status not in (FEASIBLE, INFEASIBLE, INCONSISTENT):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == FEASIBLE and self.certificate is None:
            raise ValueError("feasible result needs a certificate")
        if self.status == INFEASIBLE:
            if (self.witness is None or self.witness_value is None
                    or self.classical_bound is None):
                raise ValueError("infeasible result needs a witness")
            if not self.witness_value > self.classical_bound:
                raise ValueError(
                    "witness does not separate: value "
                    f"{self.witness_value} <= bound {self.classical_bound}")
            w = np.array(self.witness, dtype=float)
            object.__setattr__(self, "witness", _freeze(w))

    def witness_rows(self) -> List[Tuple[int, int, int, int, float]]:
        """The witness as (a, b, A, B, coefficient) rows."""
        if self.witness is None:
            return []
        S_A, S_B, d_A, d_B = self.witness.shape
        return [(a, b, A, B, float(self.witness[a, b, A, B]))
                for a in range(S_A) for b in range(S_B)
                for A in range(d_A) for B in range(d_B)]

    def to_dict(self) -> dict:
        out = {"status": self.status,
               "consistency": self.consistency.to_dict()}
        if self.certificate is not None:
            out["certificate"] = self.certificate.probabilities.tolist()
        if self.witness is not None:
            out["witness"] = [list(row) for row in self.witness_rows()]
            out["witness_value"] = self.witness_value
            out["classical_bound"] = self.classical_bound
        return out


def check_marginal_consistency(problem: MarginalProblem
                               ) -> ConsistencyReport:
    """Compare p(A|a,b) across b and p(B|a,b) across a, cellwise."""
    tol = problem.tolerance
    worst = 0.0
    violations = []
    sides = (("A", problem.singles_A(), problem.S_A, problem.d_A,
              problem.S_B, lambda s, f, o: (s, f, o)),
             ("B", problem.singles_B(), problem.S_B, problem.d_B,
              problem.S_A, lambda s, f, o: (f, s, o)))
    for arm, singles, n_own, d_own, n_foreign, index in sides:
        for s in range(n_own):
            for o in range(d_own):
                for f1 in range(n_foreign):
                    for f2 in range(f1 + 1, n_foreign):
                        v1 = float(singles[index(s, f1, o)])
                        v2 = float(singles[index(s, f2, o)])
                        delta = abs(v1 - v2)
                        worst = max(worst, delta)
                        if delta > tol:
                            violations.append(ConsistencyViolation(
                                arm, s, o, (f1, f2), (v1, v2), delta))
    return ConsistencyReport(worst, tol, worst <= tol,
                             tuple(violations))


def _assignment_digits(n: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Digits of assignments 0..n-1 in C order over shape; one row per
    axis of shape."""
    return np.vstack(np.unravel_index(np.arange(n), shape))


def _constraint_system(problem: MarginalProblem):
    """Equality system M x = v over assignment probabilities: one row
    per marginal cell plus normalization."""
    S_A, S_B = problem.S_A, problem.S_B
    d_A, d_B = problem.d_A, problem.d_B
    n = d_A ** S_A * d_B ** S_B
    if n > _LP_GUARD:
        raise ResourceGuardError(
            f"{n} assignment variables exceed the solver guard "
            f"({_LP_GUARD}); reduce settings or outcomes")
    m = S_A * S_B * d_A * d_B + 1
    digits = _assignment_digits(n, (d_A,) * S_A + (d_B,) * S_B)
    M = np.zeros((m, n))
    cols = np.arange(n)
    for a in range(S_A):
        for b in range(S_B):
            base = (a * S_B + b) * d_A * d_B
            rows = base + digits[a] * d_B + digits[S_A + b]
            M[rows, cols] = 1.0
    M[-1] = 1.0
    v = np.concatenate([problem.marginals.ravel(), [1.0]])
    return M, v


def enumerate_deterministic_bound(witness: np.ndarray,
                                  dims: Tuple[int, int, int, int]
                                  ) -> float:
    """Exact max of the witness over deterministic assignments.

    A deterministic assignment fixes one outcome per setting per arm
    and scores sum_ab witness[a, b, A(a), B(b)].  One arm is
    enumerated; the other is optimized per setting, which is exact
    because its settings contribute independently once A is fixed.
    """
    S_A, S_B, d_A, d_B = dims
    w = np.asarray(witness, dtype=float)
    if w.shape != (S_A, S_B, d_A, d_B):
        raise ValueError(f"witness shape {w.shape} does not match dims")
    if d_A ** S_A * d_B ** S_B > _ENUM_GUARD:
        raise ResourceGuardError(
            f"{d_A}^{S_A} * {d_B}^{S_B} assignments exceed the "
            f"enumeration guard ({_ENUM_GUARD})")
    if d_B ** S_B < d_A ** S_A:
        return enumerate_deterministic_bound(
            w.transpose(1, 0, 3, 2), (S_B, S_A, d_B, d_A))
    n_a = d_A ** S_A
    best = -np.inf
    for start in range(0, n_a, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, n_a))
        digits = np.vstack(np.unravel_index(idx, (d_A,) * S_A))
        total = np.zeros(idx.size)
        for b in range(S_B):
            # score[k, B] = sum_a w[a, b, A_k(a), B]
            score = np.zeros((idx.size, d_B))
            for a in range(S_A):
                score += w[a, b][digits[a], :]
            total += score.max(axis=1)
        best = max(best, float(total.max()))
    return best


def _center_witness(w: np.ndarray) -> np.ndarray:
    """Shift each (a,b) block to zero mean; every deterministic
    assignment and every normalized marginal shifts by the same
    constant, so the violation gap is unchanged."""
    return w - w.mean(axis=(2, 3), keepdims=True)


def _canonicalize_witness(w: np.ndarray,
                          dims: Tuple[int, int, int, int]):
    w = _center_witness(w)
    bound = enumerate_deterministic_bound(w, dims)
    if dims == (2, 2, 2, 2) and bound > 1e-6:
        w = w * (2.0 / bound)
    else:
        norm = np.abs(w).max()
        if norm > 0:
            w = w / norm
    bound = enumerate_deterministic_bound(w, dims)
    return w, bound


def solve_joint_feasibility(problem: MarginalProblem,
                            project_singles: bool = False
                            ) -> FeasibilityResult:
    """Decide whether a joint distribution with the given pairwise
    marginals exists; every verdict is verified before it is returned.

    project_singles replaces inconsistent single-variable marginals by
    their across-settings average (an additive correction) before
    solving; off by default, so inconsistent data is reported, not
    silently repaired.
    """
    report = check_marginal_consistency(problem)
    if not report.passed:
        if not project_singles:
            return FeasibilityResult(INCONSISTENT, report)
        problem = _project_singles(problem)
        report = check_marginal_consistency(problem)
        if not report.passed:
            raise VerificationError(
                "projection left singles inconsistent: "
                f"{report.max_discrepancy:.3e}")

    M, v = _constraint_system(problem)
    tol = problem.tolerance
    try:
        status, x, y, _ = phase1_simplex(M, v, tol=tol)
    except SimplexStallError as exc:
        raise VerificationError(str(exc)) from exc

    dims = (problem.S_A, problem.S_B, problem.d_A, problem.d_B)
    if status == "feasible":
        cert = JointDistribution(*dims, x, tolerance=max(tol, 1e-12))
        replay = cert.all_pairwise_marginals()
        err = float(np.abs(replay - problem.marginals).max())
        if err > 10.0 * tol:
            raise VerificationError(
                f"certificate marginals off by {err:.3e} "
                f"(> 10 * {tol:.1e})")
        return FeasibilityResult(FEASIBLE, report, certificate=cert)

    w = y[:-1].reshape(problem.marginals.shape)
    w, bound = _canonicalize_witness(w, dims)
    value = float((w * problem.marginals).sum())
    if not value > bound + tol:
        raise VerificationError(
            f"witness value {value!r} does not exceed deterministic "
            f"bound {bound!r} by more than {tol:.1e}")
    return FeasibilityResult(INFEASIBLE, report, witness=w,
                             witness_value=value, classical_bound=bound)


def _project_singles(problem: MarginalProblem) -> MarginalProblem:
    """Additively shift each table so single-variable marginals equal
    their across-settings averages; totals stay 1.

    The shift can push cells that were at zero slightly negative
    (empirical tables with structural zeros do this).  Nonnegativity
    is then restored by mixing minimally with the product of the
    target singles, which has the same singles exactly, so the mix
    stays consistent."""
    marg = np.array(problem.marginals)
    pA = problem.singles_A()          # [a, b, A]
    pB = problem.singles_B()          # [a, b, B]
    sA = pA.mean(axis=1)              # [a, A]
    sB = pB.mean(axis=0)              # [b, B]
    for a in range(problem.S_A):
        for b in range(problem.S_B):
            fix_A = (sA[a] - pA[a, b]) / problem.d_B
            fix_B = (sB[b] - pB[a, b]) / problem.d_A
            marg[a, b] += fix_A[:, None] + fix_B[None, :]
    if marg.min() < 0:
        prod = sA[:, None, :, None] * sB[None, :, None, :]
        neg = marg < 0
        gap = prod - marg
        if (gap[neg] <= 0).any():
            raise VerificationError(
                "project_singles cannot restore nonnegativity: a "
                "negative cell sits where the averaged singles give "
                "zero probability")
        ratio = np.where(neg, -marg / np.where(neg, gap, 1.0), 0.0)
        t = ratio.max(axis=(2, 3), keepdims=True)  # one weight per (a,b)
        marg = (1.0 - t) * marg + t * prod
    np.clip(marg, 0.0, None, out=marg)
    return MarginalProblem(problem.S_A, problem.S_B, problem.d_A,
                           problem.d_B, marg, problem.tolerance)


# the 8 sign patterns with an odd number of minus signs over
# (E_00, E_01, E_10, E_11)
_ODD_PATTERNS = tuple(
    p for p in product((1, -1), repeat=4) if p.count(-1) % 2 == 1)


def fine_check(correlators: Sequence[float],
               unbiased_singles: bool = True,
               tolerance: float = 1e-9) -> str:
    """Closed-form joint-existence test for the 2-setting binary case
    with unbiased singles: the joint exists iff all eight odd-sign
    CHSH combinations have |value| <= 2.

    Biased singles are outside this closed form; the LP route decides
    those, and this returns "not-applicable".
    """
    e = [float(x) for x in correlators]
    if len(e) != 4:
        raise ValueError("need the four correlators E00,E01,E10,E11")
    if max(abs(x) for x in e) > 1.0 + tolerance:
        raise ValueError("correlators must lie in [-1, 1]")
    if not unbiased_singles:
        return NOT_APPLICABLE
    worst = max(abs(sum(s * x for s, x in zip(p, e)))
                for p in _ODD_PATTERNS)
    return JOINT_EXISTS if worst <= 2.0 + tolerance else (
        JOINT_DOES_NOT_EXIST)
