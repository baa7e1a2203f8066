"""Empirical statistics of matched pairs.

A ``PairSet`` reduces to a ``SummaryTable``: the 4-index count array
N[a][b][A][B] whose normalization is the contextual distribution
p(A,a,B,b).  From there: per-setting-pair conditional tables
p(A,B|a,b), two-proportion no-signaling checks across foreign
settings, two-outcome correlators, and the CHSH statistic with its
delta-method standard error.

Outcome indices map to signs as 0 -> +1, 1 -> -1 wherever a +-1 view
is needed; the convention is fixed here and nowhere else.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .events import FormatError, PairSet

_PROB_TOL = 1e-12

_COUNT_FIELDS = ("a", "b", "A", "B", "count")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SummaryTable:
    """Counts N[a][b][A][B] over matched pairs."""

    S_A: int
    S_B: int
    d_A: int
    d_B: int
    counts: np.ndarray
    total: Optional[int] = None

    def __post_init__(self):
        for name in ("S_A", "S_B"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("d_A", "d_B"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        counts = np.array(self.counts)
        shape = (self.S_A, self.S_B, self.d_A, self.d_B)
        if counts.shape != shape:
            raise ValueError(
                f"counts shape {counts.shape} does not match {shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.array_equal(rounded, counts):
                raise ValueError("counts must be integers")
            counts = rounded
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", _freeze(counts))
        tot = int(counts.sum())
        if self.total is None:
            object.__setattr__(self, "total", tot)
        elif self.total != tot:
            raise ValueError(
                f"total={self.total} but counts sum to {tot}")

    def __add__(self, other: "SummaryTable") -> "SummaryTable":
        """Merge partial counts; tabulation is associative."""
        if not isinstance(other, SummaryTable):
            return NotImplemented
        if (self.S_A, self.S_B, self.d_A, self.d_B) != (
                other.S_A, other.S_B, other.d_A, other.d_B):
            raise ValueError("cannot merge tables with different dims")
        return SummaryTable(self.S_A, self.S_B, self.d_A, self.d_B,
                            self.counts + other.counts)

    def pair_counts(self) -> np.ndarray:
        """n_ab: events per setting pair, shape (S_A, S_B)."""
        return self.counts.sum(axis=(2, 3))

    def setting_frequencies(self) -> np.ndarray:
        """Empirical p(a,b); zero table when total is 0."""
        n = self.pair_counts().astype(float)
        return n / self.total if self.total else n


@dataclass(frozen=True, eq=False)
class ConditionalTable:
    """p(A,B | a,b) for one setting pair; flagged empty when no pair
    carried that setting combination."""

    a: int
    b: int
    n_ab: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("probs must be a 2-d array")
        if self.n_ab < 0:
            raise ValueError("n_ab must be nonnegative")
        if self.n_ab == 0:
            if probs.any():
                raise ValueError("empty table must have zero probs")
        else:
            if (probs < 0).any():
                raise ValueError("probs must be nonnegative")
            if abs(probs.sum() - 1.0) > _PROB_TOL:
                raise ValueError("probs must sum to 1")
        object.__setattr__(self, "probs", _freeze(probs))

    @property
    def is_empty(self) -> bool:
        return self.n_ab == 0


@dataclass(frozen=True)
class ZComparison:
    """One two-proportion comparison across foreign settings."""

    arm: str
    setting: int
    outcome: int
    foreign_pair: Tuple[int, int]
    p1: float
    p2: float
    n1: int
    n2: int
    z: float


@dataclass(frozen=True, eq=False)
class NoSignalingReport:
    z_threshold: float
    comparisons: Tuple[ZComparison, ...]
    skipped: Tuple[Tuple[int, int], ...]
    max_abs_z: float
    passed: bool

    def __post_init__(self):
        if self.passed != (self.max_abs_z <= self.z_threshold):
            raise ValueError("passed flag inconsistent with max_abs_z")

    def to_dict(self) -> dict:
        return {
            "z_threshold": self.z_threshold,
            "max_abs_z": self.max_abs_z,
            "passed": self.passed,
            "skipped_setting_pairs": [list(p) for p in self.skipped],
            "comparisons": [
                {"arm": c.arm, "setting": c.setting, "outcome": c.outcome,
                 "foreign_pair": list(c.foreign_pair),
                 "p1": c.p1, "p2": c.p2, "n1": c.n1, "n2": c.n2, "z": c.z}
                for c in self.comparisons],
        }


def tabulate(pairs: PairSet,
             dims: Optional[Tuple[int, int, int, int]] = None
             ) -> SummaryTable:
    """Count pairs into N[a][b][A][B].

    dims defaults to the dimensions the PairSet declares; passing
    smaller dims raises, naming the first offending pair.
    """
    if dims is None:
        dims = (pairs.num_settings_a, pairs.num_settings_b,
                pairs.num_outcomes_a, pairs.num_outcomes_b)
    S_A, S_B, d_A, d_B = dims
    cols = (pairs.setting_a, pairs.setting_b,
            pairs.outcome_A, pairs.outcome_B)
    for name, col, bound in zip(("a", "b", "A", "B"), cols,
                                (S_A, S_B, d_A, d_B)):
        bad = np.nonzero((col < 0) | (col >= bound))[0]
        if bad.size:
            k = int(bad[0])
            raise ValueError(
                f"pair {k}: field {name}={int(col[k])} outside "
                f"[0, {bound})")
    flat = ((cols[0].astype(np.int64) * S_B + cols[1]) * d_A
            + cols[2]) * d_B + cols[3]
    counts = np.bincount(flat, minlength=S_A * S_B * d_A * d_B)
    return SummaryTable(S_A, S_B, d_A, d_B,
                        counts.reshape(S_A, S_B, d_A, d_B))


def conditionals(table: SummaryTable) -> List[ConditionalTable]:
    """One conditional table per setting pair, (a,b) lexicographic."""
    out = []
    for a in range(table.S_A):
        for b in range(table.S_B):
            block = table.counts[a, b]
            n = int(block.sum())
            probs = (block / n if n
                     else np.zeros_like(block, dtype=float))
            out.append(ConditionalTable(a, b, n, probs))
    return out


def _pooled_z(k1: int, n1: int, k2: int, n2: int) -> Tuple[float, float, float]:
    p1 = k1 / n1
    p2 = k2 / n2
    pool = (k1 + k2) / (n1 + n2)
    var = pool * (1.0 - pool) * (1.0 / n1 + 1.0 / n2)
    # var == 0 only when both proportions are identically 0 or 1
    z = (p1 - p2) / np.sqrt(var) if var > 0 else 0.0
    return p1, p2, float(z)


def no_signaling_check(table: SummaryTable,
                       z_threshold: float = 5.0) -> NoSignalingReport:
    """Compare each single-arm outcome frequency across foreign
    settings with a pooled two-proportion z statistic.

    Absence of signaling means p(A|a,b) does not depend on b and
    p(B|a,b) does not depend on a; every such pairwise comparison is
    reported.  Setting pairs with no data are skipped and listed.
    """
    n_ab = table.pair_counts()
    skipped = tuple((a, b) for a in range(table.S_A)
                    for b in range(table.S_B) if n_ab[a, b] == 0)
    marg_A = table.counts.sum(axis=3)  # [a, b, A]
    marg_B = table.counts.sum(axis=2)  # [a, b, B]
    comparisons = []
    for a in range(table.S_A):
        for outcome in range(table.d_A):
            for b1 in range(table.S_B):
                for b2 in range(b1 + 1, table.S_B):
                    n1, n2 = int(n_ab[a, b1]), int(n_ab[a, b2])
                    if n1 == 0 or n2 == 0:
                        continue
                    p1, p2, z = _pooled_z(
                        int(marg_A[a, b1, outcome]), n1,
                        int(marg_A[a, b2, outcome]), n2)
                    comparisons.append(ZComparison(
                        "A", a, outcome, (b1, b2), p1, p2, n1, n2, z))
    for b in range(table.S_B):
        for outcome in range(table.d_B):
            for a1 in range(table.S_A):
                for a2 in range(a1 + 1, table.S_A):
                    n1, n2 = int(n_ab[a1, b]), int(n_ab[a2, b])
                    if n1 == 0 or n2 == 0:
                        continue
                    p1, p2, z = _pooled_z(
                        int(marg_B[a1, b, outcome]), n1,
                        int(marg_B[a2, b, outcome]), n2)
                    comparisons.append(ZComparison(
                        "B", b, outcome, (a1, a2), p1, p2, n1, n2, z))
    max_abs = max((abs(c.z) for c in comparisons), default=0.0)
    return NoSignalingReport(z_threshold, tuple(comparisons), skipped,
                             max_abs, max_abs <= z_threshold)


def correlator(cond: ConditionalTable) -> float:
    """E = <s_A s_B> with outcome 0 -> +1, outcome 1 -> -1."""
    if cond.probs.shape != (2, 2):
        raise ValueError(
            f"unsupported alphabet {cond.probs.shape}: correlator "
            "requires two outcomes per arm")
    if cond.n_ab == 0:
        raise ValueError(
            f"setting pair ({cond.a},{cond.b}) has no data")
    p = cond.probs
    e = float(p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0])
    return min(1.0, max(-1.0, e))


def _chsh_grid(tables: Sequence[ConditionalTable]):
    seen = {}
    for t in tables:
        key = (t.a, t.b)
        if key in seen:
            raise ValueError(f"duplicate setting pair {key}")
        seen[key] = t
    grid = []
    for key in ((0, 0), (0, 1), (1, 0), (1, 1)):
        if key not in seen:
            raise ValueError(f"missing setting pair {key}")
        grid.append(seen[key])
    return grid


# the 8 sign patterns with an odd number of minus signs, applied to
# (E_00, E_01, E_10, E_11) in a fixed enumeration order
_ODD_PATTERNS = tuple(
    p for p in (
        (s0, s1, s2, s3)
        for s0 in (1, -1) for s1 in (1, -1)
        for s2 in (1, -1) for s3 in (1, -1))
    if p.count(-1) % 2 == 1)


def chsh(tables: Sequence[ConditionalTable]
         ) -> Tuple[float, Tuple[int, int, int, int]]:
    """CHSH statistic: max over odd-sign patterns of
    |s_00 E_00 + s_01 E_01 + s_10 E_10 + s_11 E_11|.

    Requires the four conditional tables for setting pairs
    (0,0), (0,1), (1,0), (1,1) with two outcomes per arm.  Returns the
    statistic and the first achieving pattern.
    """
    grid = _chsh_grid(tables)
    e = [correlator(t) for t in grid]
    best, best_pattern = -1.0, None
    for pattern in _ODD_PATTERNS:
        s = abs(sum(si * ei for si, ei in zip(pattern, e)))
        if s > best:
            best, best_pattern = s, pattern
    return best, best_pattern


def chsh_sigma(tables: Sequence[ConditionalTable]) -> float:
    """Delta-method standard error of the CHSH statistic: the sum of
    per-correlator standard errors sqrt((1 - E^2)/n)."""
    grid = _chsh_grid(tables)
    total = 0.0
    for t in grid:
        e = correlator(t)
        total += np.sqrt(max(0.0, 1.0 - e * e) / t.n_ab)
    return float(total)


def write_counts_csv(table: SummaryTable, dest) -> None:
    """Flat (a,b,A,B,count) rows, one per cell, lexicographic order."""
    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_COUNT_FIELDS)
        for a in range(table.S_A):
            for b in range(table.S_B):
                for A in range(table.d_A):
                    for B in range(table.d_B):
                        writer.writerow(
                            (a, b, A, B, int(table.counts[a, b, A, B])))

    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            emit(fh)


def read_counts_csv(source) -> SummaryTable:
    """Inverse of write_counts_csv; expects the complete cell grid."""
    if hasattr(source, "read"):
        return _parse_counts_csv(source, "<stream>")
    with open(source, "r", encoding="utf-8", newline="") as fh:
        return _parse_counts_csv(fh, str(source))


def _parse_counts_csv(fh, label: str) -> SummaryTable:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{label}: empty counts file") from None
    if tuple(header) != _COUNT_FIELDS:
        raise FormatError(
            f"{label}: header {header!r} != {list(_COUNT_FIELDS)!r}")
    cells = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"{label}:{lineno}: expected 5 fields")
        try:
            a, b, A, B, count = (int(x) for x in row)
        except ValueError:
            raise FormatError(
                f"{label}:{lineno}: non-integer field") from None
        if count < 0 or min(a, b, A, B) < 0:
            raise FormatError(f"{label}:{lineno}: negative value")
        key = (a, b, A, B)
        if key in cells:
            raise FormatError(f"{label}:{lineno}: duplicate cell {key}")
        cells[key] = count
    if not cells:
        raise FormatError(f"{label}: no count rows")
    S_A = max(k[0] for k in cells) + 1
    S_B = max(k[1] for k in cells) + 1
    d_A = max(k[2] for k in cells) + 1
    d_B = max(k[3] for k in cells) + 1
    counts = np.zeros((S_A, S_B, d_A, d_B), dtype=np.int64)
    if len(cells) != counts.size:
        raise FormatError(
            f"{label}: {len(cells)} cells do not cover the full "
            f"{S_A}x{S_B}x{d_A}x{d_B} grid")
    for (a, b, A, B), count in cells.items():
        counts[a, b, A, B] = count
    try:
        return SummaryTable(S_A, S_B, d_A, d_B, counts)
    except ValueError as exc:
        raise FormatError(f"{label}: {exc}") from None


def counts_csv_text(table: SummaryTable) -> str:
    buf = io.StringIO()
    write_counts_csv(table, buf)
    return buf.getvalue()
