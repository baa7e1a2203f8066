"""Raw per-arm event records, matched coincidence pairs, and file I/O.

An arm record is one detector's log: a timestamp, a setting index, and
an outcome index per detection.  A pair set is the output of coincidence
matching: four-tuples (A, a, B, b) with both timestamps retained, plus
the matching diagnostics and the window/policy that produced it.

Storage is columnar (parallel numpy arrays) so million-event records
stay cheap; element access returns lightweight named tuples.

File formats (line-delimited text, one record per line):

    arm file      header  ``arm=A num_settings=2 num_outcomes=2``
                  events  ``t=<float> setting=<int> outcome=<int>``
    pairs file    header  ``tau=... policy=... num_settings_a=... ...``
                  columns ``A a B b t_A t_B``
                  pairs   ``0 1 1 0 1.0e-06 1.2e-06``

Times are written with shortest round-trip decimal representation, so
read(write(x)) reproduces every float bit-exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np


class ResourceGuardError(RuntimeError):
    """A computation was refused because its size exceeds a guard."""


class FormatError(ValueError):
    """Malformed stream/table input, with file and line context."""

    def __init__(self, message: str, source: str = None, line: int = None):
        self.source = source
        self.line = line
        prefix = ""
        if source is not None:
            prefix += str(source)
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class DetectionEvent(NamedTuple):
    time: float
    setting: int
    outcome: int


class CoincidencePair(NamedTuple):
    outcome_A: int
    setting_a: int
    outcome_B: int
    setting_b: int
    time_A: float
    time_B: float


@dataclass(frozen=True, eq=False)
class MatchDiagnostics:
    """Bookkeeping for one matching run.

    matched + unmatched_A equals the arm-A event count, likewise for B.
    multi_candidate_events counts raw events that had more than one
    opposite-arm event within the window (ambiguity pressure on the
    policy choice).
    """

    matched: int
    unmatched_A: int
    unmatched_B: int
    multi_candidate_events: int
    tau: float
    policy: str


@dataclass(frozen=True, eq=False)
class ArmRecord:
    """One arm's raw event table, sorted by time.

    Unsorted inputs are sorted on construction (stable, so ties keep
    their input order); all fields are validated against the declared
    alphabet sizes.  Arrays are frozen after construction.
    """

    arm_id: str
    num_settings: int
    num_outcomes: int
    times: np.ndarray
    settings: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        if self.arm_id not in ("A", "B"):
            raise ValueError(f"arm_id must be 'A' or 'B', got {self.arm_id!r}")
        if self.num_settings < 1:
            raise ValueError("num_settings must be >= 1")
        if self.num_outcomes < 2:
            raise ValueError("num_outcomes must be >= 2")
        t = np.array(self.times, dtype=np.float64)
        s = np.array(self.settings, dtype=np.int64)
        o = np.array(self.outcomes, dtype=np.int64)
        if not (t.ndim == s.ndim == o.ndim == 1):
            raise ValueError("times, settings, outcomes must be 1-d")
        if not (t.size == s.size == o.size):
            raise ValueError(
                f"column lengths differ: {t.size}, {s.size}, {o.size}")
        if t.size and not np.isfinite(t).all():
            bad = int(np.flatnonzero(~np.isfinite(t))[0])
            raise ValueError(f"non-finite time at event {bad}")
        for name, col, hi in (("setting", s, self.num_settings),
                              ("outcome", o, self.num_outcomes)):
            if col.size and (col.min() < 0 or col.max() >= hi):
                bad = int(np.flatnonzero((col < 0) | (col >= hi))[0])
                raise ValueError(
                    f"{name} {int(col[bad])} out of range [0, {hi}) "
                    f"at event {bad}")
        if t.size > 1 and np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            t, s, o = t[order], s[order], o[order]
        for arr, field in ((t, "times"), (s, "settings"), (o, "outcomes")):
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, i: int) -> DetectionEvent:
        return DetectionEvent(float(self.times[i]), int(self.settings[i]),
                              int(self.outcomes[i]))

    def __iter__(self) -> Iterator[DetectionEvent]:
        for t, s, o in zip(self.times.tolist(), self.settings.tolist(),
                           self.outcomes.tolist()):
            yield DetectionEvent(t, s, o)


@dataclass(frozen=True, eq=False)
class PairSet:
    """Time-matched four-tuples (A, a, B, b) with both timestamps.

    Columns use the scalar field names of CoincidencePair.  index_A and
    index_B hold the positions of each pair's events in the raw arm
    records when the set came from the matcher; they are not serialized
    and are None for pair sets loaded from files.
    """

    tau: float
    policy: str
    outcome_A: np.ndarray
    setting_a: np.ndarray
    outcome_B: np.ndarray
    setting_b: np.ndarray
    time_A: np.ndarray
    time_B: np.ndarray
    diagnostics: MatchDiagnostics
    num_settings_a: int
    num_outcomes_a: int
    num_settings_b: int
    num_outcomes_b: int
    index_A: Optional[np.ndarray] = None
    index_B: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        cols = {
            "outcome_A": np.array(self.outcome_A, dtype=np.int64),
            "setting_a": np.array(self.setting_a, dtype=np.int64),
            "outcome_B": np.array(self.outcome_B, dtype=np.int64),
            "setting_b": np.array(self.setting_b, dtype=np.int64),
            "time_A": np.array(self.time_A, dtype=np.float64),
            "time_B": np.array(self.time_B, dtype=np.float64),
        }
        n = cols["outcome_A"].size
        if any(c.size != n for c in cols.values()):
            raise ValueError("pair columns must have equal length")
        for name, idx in (("index_A", self.index_A), ("index_B", self.index_B)):
            if idx is not None:
                idx = np.array(idx, dtype=np.int64)
                if idx.size != n:
                    raise ValueError(f"{name} length mismatch")
                if np.unique(idx).size != n:
                    raise ValueError(f"{name} reuses a raw event")
                cols[name] = idx
        tA, tB = cols["time_A"], cols["time_B"]
        if n and np.any(np.abs(tA - tB) > self.tau):
            bad = int(np.flatnonzero(np.abs(tA - tB) > self.tau)[0])
            raise ValueError(
                f"pair {bad} separated by {abs(tA[bad] - tB[bad])!r} > "
                f"tau={self.tau!r}")
        for name, hi in (("setting_a", self.num_settings_a),
                         ("outcome_A", self.num_outcomes_a),
                         ("setting_b", self.num_settings_b),
                         ("outcome_B", self.num_outcomes_b)):
            col = cols[name]
            if n and (col.min() < 0 or col.max() >= hi):
                raise ValueError(f"{name} out of range [0, {hi})")
        if n > 1 and np.any(np.diff(tA) < 0):
            order = np.argsort(tA, kind="stable")
            cols = {k: v[order] for k, v in cols.items()}
        for name, arr in cols.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.diagnostics.matched != n:
            raise ValueError(
                f"diagnostics.matched={self.diagnostics.matched} but "
                f"{n} pairs present")

    def __len__(self) -> int:
        return self.outcome_A.size

    def __getitem__(self, i: int) -> CoincidencePair:
        return CoincidencePair(int(self.outcome_A[i]), int(self.setting_a[i]),
                               int(self.outcome_B[i]), int(self.setting_b[i]),
                               float(self.time_A[i]), float(self.time_B[i]))

    def __iter__(self) -> Iterator[CoincidencePair]:
        for i in range(len(self)):
            yield self[i]


# ---------------------------------------------------------------------------
# file I/O

def _open_for_read(source):
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        name = getattr(source, "name", "<stream>")
        return data, str(name)
    with open(source, "rb") as fh:
        return fh.read().decode("utf-8"), str(source)


def _write_text(sink, text: str):
    if hasattr(sink, "write"):
        try:
            sink.write(text)
        except TypeError:
            sink.write(text.encode("utf-8"))
        return
    with open(sink, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _parse_kv_line(line: str, expected_keys, source, lineno):
    parts = line.split()
    got = {}
    for part in parts:
        key, eq, value = part.partition("=")
        if not eq or not key:
            raise FormatError(f"expected key=value fields, got {part!r}",
                              source, lineno)
        if key in got:
            raise FormatError(f"duplicate field {key!r}", source, lineno)
        got[key] = value
    if set(got) != set(expected_keys):
        raise FormatError(
            f"expected fields {sorted(expected_keys)}, got {sorted(got)}",
            source, lineno)
    return got


def _parse_int(text: str, what: str, source, lineno) -> int:
    try:
        return int(text)
    except ValueError:
        raise FormatError(f"bad integer for {what}: {text!r}", source, lineno)


def _parse_float(text: str, what: str, source, lineno) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"bad float for {what}: {text!r}", source, lineno)
    return value


def read_arm_record(source, expect_settings: int = None,
                    expect_outcomes: int = None) -> ArmRecord:
    """Parse an arm file (path or file-like).

    The header declares arm/num_settings/num_outcomes; pass
    expect_settings / expect_outcomes to additionally enforce declared
    dimensions.  Events are sorted by time after parsing.
    """
    data, name = _open_for_read(source)
    lines = data.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("missing header line", name, 1)
    header = _parse_kv_line(lines[0], ("arm", "num_settings", "num_outcomes"),
                            name, 1)
    arm = header["arm"]
    if arm not in ("A", "B"):
        raise FormatError(f"arm must be 'A' or 'B', got {arm!r}", name, 1)
    num_settings = _parse_int(header["num_settings"], "num_settings", name, 1)
    num_outcomes = _parse_int(header["num_outcomes"], "num_outcomes", name, 1)
    if expect_settings is not None and num_settings != expect_settings:
        raise FormatError(
            f"declared num_settings={num_settings}, expected "
            f"{expect_settings}", name, 1)
    if expect_outcomes is not None and num_outcomes != expect_outcomes:
        raise FormatError(
            f"declared num_outcomes={num_outcomes}, expected "
            f"{expect_outcomes}", name, 1)
    times, settings, outcomes = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = _parse_kv_line(line, ("t", "setting", "outcome"), name, lineno)
        t = _parse_float(fields["t"], "t", name, lineno)
        if not np.isfinite(t):
            raise FormatError(f"non-finite time {fields['t']!r}", name, lineno)
        s = _parse_int(fields["setting"], "setting", name, lineno)
        o = _parse_int(fields["outcome"], "outcome", name, lineno)
        if not 0 <= s < num_settings:
            raise FormatError(
                f"setting {s} out of range [0, {num_settings})", name, lineno)
        if not 0 <= o < num_outcomes:
            raise FormatError(
                f"outcome {o} out of range [0, {num_outcomes})", name, lineno)
        times.append(t)
        settings.append(s)
        outcomes.append(o)
    return ArmRecord(arm, num_settings, num_outcomes,
                     np.array(times, dtype=np.float64),
                     np.array(settings, dtype=np.int64),
                     np.array(outcomes, dtype=np.int64))


def write_arm_record(record: ArmRecord, sink) -> None:
    """Write an arm file; read_arm_record inverts this bit-exactly."""
    head = (f"arm={record.arm_id} num_settings={record.num_settings} "
            f"num_outcomes={record.num_outcomes}")
    body = "\n".join(
        f"t={t!r} setting={s} outcome={o}"
        for t, s, o in zip(record.times.tolist(), record.settings.tolist(),
                           record.outcomes.tolist()))
    _write_text(sink, head + ("\n" + body if body else "") + "\n")


_PAIR_HEADER_KEYS = (
    "tau", "policy", "num_settings_a", "num_outcomes_a", "num_settings_b",
    "num_outcomes_b", "matched", "unmatched_A", "unmatched_B",
    "multi_candidate_events",
)
_PAIR_COLUMNS = "A a B b t_A t_B"


def read_pairs(source) -> PairSet:
    """Parse a pairs file (path or file-like)."""
    data, name = _open_for_read(source)
    lines = data.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("missing header line", name, 1)
    header = _parse_kv_line(lines[0], _PAIR_HEADER_KEYS, name, 1)
    tau = _parse_float(header["tau"], "tau", name, 1)
    dims = {k: _parse_int(header[k], k, name, 1)
            for k in ("num_settings_a", "num_outcomes_a", "num_settings_b",
                      "num_outcomes_b")}
    diag = MatchDiagnostics(
        matched=_parse_int(header["matched"], "matched", name, 1),
        unmatched_A=_parse_int(header["unmatched_A"], "unmatched_A", name, 1),
        unmatched_B=_parse_int(header["unmatched_B"], "unmatched_B", name, 1),
        multi_candidate_events=_parse_int(
            header["multi_candidate_events"], "multi_candidate_events",
            name, 1),
        tau=tau,
        policy=header["policy"],
    )
    if len(lines) < 2 or lines[1].split() != _PAIR_COLUMNS.split():
        raise FormatError(
            f"expected column line {_PAIR_COLUMNS!r}", name, 2)
    oa, sa, ob, sb, ta, tb = [], [], [], [], [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"expected 6 columns, got {len(parts)}",
                              name, lineno)
        oa.append(_parse_int(parts[0], "A", name, lineno))
        sa.append(_parse_int(parts[1], "a", name, lineno))
        ob.append(_parse_int(parts[2], "B", name, lineno))
        sb.append(_parse_int(parts[3], "b", name, lineno))
        ta.append(_parse_float(parts[4], "t_A", name, lineno))
        tb.append(_parse_float(parts[5], "t_B", name, lineno))
    try:
        return PairSet(
            tau=tau, policy=diag.policy,
            outcome_A=np.array(oa, dtype=np.int64),
            setting_a=np.array(sa, dtype=np.int64),
            outcome_B=np.array(ob, dtype=np.int64),
            setting_b=np.array(sb, dtype=np.int64),
            time_A=np.array(ta, dtype=np.float64),
            time_B=np.array(tb, dtype=np.float64),
            diagnostics=diag, **dims)
    except ValueError as exc:
        raise FormatError(str(exc), name, None)


def write_pairs(pairs: PairSet, sink) -> None:
    """Write a pairs file; read_pairs inverts this bit-exactly
    (index columns excepted, which are in-memory only)."""
    d = pairs.diagnostics
    head = (f"tau={pairs.tau!r} policy={pairs.policy} "
            f"num_settings_a={pairs.num_settings_a} "
            f"num_outcomes_a={pairs.num_outcomes_a} "
            f"num_settings_b={pairs.num_settings_b} "
            f"num_outcomes_b={pairs.num_outcomes_b} "
            f"matched={d.matched} unmatched_A={d.unmatched_A} "
            f"unmatched_B={d.unmatched_B} "
            f"multi_candidate_events={d.multi_candidate_events}")
    rows = "\n".join(
        f"{A} {a} {B} {b} {tA!r} {tB!r}"
        for A, a, B, b, tA, tB in zip(
            pairs.outcome_A.tolist(), pairs.setting_a.tolist(),
            pairs.outcome_B.tolist(), pairs.setting_b.tolist(),
            pairs.time_A.tolist(), pairs.time_B.tolist()))
    text = head + "\n" + _PAIR_COLUMNS + ("\n" + rows if rows else "") + "\n"
    _write_text(sink, text)
