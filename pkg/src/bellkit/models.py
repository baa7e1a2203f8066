"""Synthetic two-arm experiments.

Three generators produce ArmRecord pairs:

* ``simulate_lhv``: a hidden variable lambda is drawn per trial and two
  deterministic response functions produce the outcomes.  Data made
  this way always admit a joint distribution over all settings.
* ``simulate_box``: outcomes are drawn jointly from an arbitrary
  no-signaling conditional table p(A,B | a,b), so any contextual
  distribution (quantum, PR, ...) can be fed through the pipeline.
* ``apply_detector``: efficiency loss, Gaussian time jitter, uniform
  dark counts, and a fixed time offset applied to an existing record.

All randomness is addressed through counter-based streams (see rng
module): trial k reads draws keyed by k, so output is reproducible and
independent of batch order.  Detector stages take their own seed;
derive one per arm with ``rng.derive_seed``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .events import (
    ArmRecord,
    FormatError,
    _open_for_read,
    _parse_float,
    _parse_int,
    _parse_kv_line,
    _write_text,
)
from .rng import (
    CounterRng,
    TAG_DARK_GAP,
    TAG_DARK_MARK,
    TAG_JITTER,
    TAG_KEEP,
    TAG_LAMBDA,
    TAG_OUTCOME,
    TAG_SETTING_A,
    TAG_SETTING_B,
)

_PROB_TOL = 1e-12


def _check_law(law, name: str) -> np.ndarray:
    law = np.array(law, dtype=np.float64)
    if law.ndim != 1 or law.size < 1:
        raise ValueError(f"{name} must be a nonempty vector")
    if law.min() < 0 or abs(law.sum() - 1.0) > _PROB_TOL:
        raise ValueError(f"{name} must be nonnegative and sum to 1")
    law.flags.writeable = False
    return law


def _categorical(u: np.ndarray, law: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(law)
    return np.minimum(np.searchsorted(cdf, u, side="right"), law.size - 1)


@dataclass(frozen=True, eq=False)
class TrialSchedule:
    """IID trial plan: trial k fires at time k * trial_period on both
    arms, settings drawn per arm from the given laws."""

    num_trials: int
    trial_period: float
    setting_law_A: np.ndarray
    setting_law_B: np.ndarray
    rng_seed: int

    def __post_init__(self):
        if self.num_trials < 0:
            raise ValueError("num_trials must be >= 0")
        if not (np.isfinite(self.trial_period) and self.trial_period > 0):
            raise ValueError("trial_period must be > 0")
        object.__setattr__(self, "setting_law_A",
                           _check_law(self.setting_law_A, "setting_law_A"))
        object.__setattr__(self, "setting_law_B",
                           _check_law(self.setting_law_B, "setting_law_B"))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    @property
    def num_settings_A(self) -> int:
        return self.setting_law_A.size

    @property
    def num_settings_B(self) -> int:
        return self.setting_law_B.size


@dataclass(frozen=True, eq=False)
class LhvModel:
    """Hidden-variable model: lambda sampler plus two deterministic
    response functions.

    lambda_kind is one of "circle" (uniform angle on [0, 2pi)),
    "sphere" (uniform unit vector, passed as an (n, 3) array), or
    "discrete" (finite law over lambda_probs.size values, passed as
    integer indices).  response_A(a, lam) must return an integer
    outcome array; likewise response_B.  Responses must be pure
    functions of (setting, lambda).
    """

    lambda_kind: str
    response_A: Callable[[int, np.ndarray], np.ndarray]
    response_B: Callable[[int, np.ndarray], np.ndarray]
    num_outcomes_A: int = 2
    num_outcomes_B: int = 2
    lambda_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lambda_kind not in ("circle", "sphere", "discrete"):
            raise ValueError(f"unknown lambda_kind {self.lambda_kind!r}")
        if self.num_outcomes_A < 2 or self.num_outcomes_B < 2:
            raise ValueError("num_outcomes must be >= 2")
        if self.lambda_kind == "discrete":
            if self.lambda_probs is None:
                raise ValueError("discrete lambda needs lambda_probs")
            object.__setattr__(self, "lambda_probs",
                               _check_law(self.lambda_probs, "lambda_probs"))
        elif self.lambda_probs is not None:
            raise ValueError("lambda_probs only valid for discrete lambda")


@dataclass(frozen=True, eq=False)
class NoSignalingBox:
    """Conditional table p(A,B | a,b), shape (S_A, S_B, d_A, d_B).

    Construction enforces that every (a,b) slice is a distribution and
    that both single-arm marginals are independent of the far setting
    (within 1e-12); anything else is rejected here, not downstream.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64)
        if t.ndim != 4:
            raise ValueError("box table must be 4-index: (a, b, A, B)")
        if t.shape[0] < 1 or t.shape[1] < 1:
            raise ValueError("need at least one setting per arm")
        if t.shape[2] < 2 or t.shape[3] < 2:
            raise ValueError("outcome alphabets must have size >= 2")
        if t.min() < 0 or not np.isfinite(t).all():
            raise ValueError("box entries must be finite and >= 0")
        sums = t.sum(axis=(2, 3))
        if np.abs(sums - 1.0).max() > _PROB_TOL:
            raise ValueError("each (a,b) slice must sum to 1")
        pA = t.sum(axis=3)  # (a, b, A)
        pB = t.sum(axis=2)  # (a, b, B)
        if (pA.max(axis=1) - pA.min(axis=1)).max() > _PROB_TOL:
            raise ValueError("signaling A-marginal: p(A|a,b) depends on b")
        if (pB.max(axis=0) - pB.min(axis=0)).max() > _PROB_TOL:
            raise ValueError("signaling B-marginal: p(B|a,b) depends on a")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)

    @property
    def S_A(self) -> int:
        return self.table.shape[0]

    @property
    def S_B(self) -> int:
        return self.table.shape[1]

    @property
    def d_A(self) -> int:
        return self.table.shape[2]

    @property
    def d_B(self) -> int:
        return self.table.shape[3]

    def marginal_A(self, a: int) -> np.ndarray:
        """p(A | a): independent of b by the construction invariant."""
        return self.table[a].sum(axis=(0, 2)) / self.S_B

    def marginal_B(self, b: int) -> np.ndarray:
        return self.table[:, b].sum(axis=(0, 1)) / self.S_A


@dataclass(frozen=True)
class DetectorModel:
    """Detection imperfections: Bernoulli(efficiency) keep, Gaussian
    time jitter, uniform dark counts at dark_rate over the record span,
    and a constant time_offset added to every surviving event."""

    efficiency: float = 1.0
    jitter_sigma: float = 0.0
    dark_rate: float = 0.0
    time_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if not np.isfinite(self.time_offset):
            raise ValueError("time_offset must be finite")

    @property
    def is_ideal(self) -> bool:
        return (self.efficiency == 1.0 and self.jitter_sigma == 0.0
                and self.dark_rate == 0.0 and self.time_offset == 0.0)


# ---------------------------------------------------------------------------
# model builders

def sign_lhv_model(angles_A, angles_B) -> LhvModel:
    """Classic deterministic sign model on the circle.

    A(a, lam) = [cos(lam - theta_a) < 0], B(b, lam) = [cos(lam - theta_b) >= 0].
    Correlator: E(a,b) = -1 + 2|theta_a - theta_b|/pi for |delta| <= pi.
    """
    ang_a = np.array(angles_A, dtype=np.float64)
    ang_b = np.array(angles_B, dtype=np.float64)

    def response_A(a: int, lam: np.ndarray) -> np.ndarray:
        return (np.cos(lam - ang_a[a]) < 0).astype(np.int64)

    def response_B(b: int, lam: np.ndarray) -> np.ndarray:
        return (np.cos(lam - ang_b[b]) >= 0).astype(np.int64)

    return LhvModel("circle", response_A, response_B)


def vector_sign_lhv_model(axes_A, axes_B) -> LhvModel:
    """Sphere variant: outcomes from the sign of axis . lambda."""
    ax_a = np.array(axes_A, dtype=np.float64)
    ax_b = np.array(axes_B, dtype=np.float64)
    if ax_a.ndim != 2 or ax_a.shape[1] != 3 or ax_b.ndim != 2 \
            or ax_b.shape[1] != 3:
        raise ValueError("axes must be (S, 3) arrays")

    def response_A(a: int, lam: np.ndarray) -> np.ndarray:
        return (lam @ ax_a[a] < 0).astype(np.int64)

    def response_B(b: int, lam: np.ndarray) -> np.ndarray:
        return (lam @ ax_b[b] >= 0).astype(np.int64)

    return LhvModel("sphere", response_A, response_B)


def table_lhv_model(outcomes_A, outcomes_B, lambda_probs) -> LhvModel:
    """Finite model: explicit outcome tables indexed by (setting, lambda).

    outcomes_A has shape (S_A, K), outcomes_B shape (S_B, K), and
    lambda takes K values with law lambda_probs.
    """
    tab_a = np.array(outcomes_A, dtype=np.int64)
    tab_b = np.array(outcomes_B, dtype=np.int64)
    if tab_a.ndim != 2 or tab_b.ndim != 2 or tab_a.shape[1] != tab_b.shape[1]:
        raise ValueError("outcome tables must be (S, K) with equal K")
    if tab_a.min() < 0 or tab_b.min() < 0:
        raise ValueError("outcomes must be >= 0")
    d_a = max(2, int(tab_a.max()) + 1)
    d_b = max(2, int(tab_b.max()) + 1)

    def response_A(a: int, lam: np.ndarray) -> np.ndarray:
        return tab_a[a, lam]

    def response_B(b: int, lam: np.ndarray) -> np.ndarray:
        return tab_b[b, lam]

    return LhvModel("discrete", response_A, response_B, d_a, d_b,
                    np.asarray(lambda_probs, dtype=np.float64))


def singlet_box(angles_A, angles_B) -> NoSignalingBox:
    """Two-outcome box with correlators E(a,b) = -cos(theta_a - theta_b)
    and uniform singles: p(A,B|a,b) = (1 + s_A s_B E)/4, s = (+1, -1)."""
    ang_a = np.array(angles_A, dtype=np.float64)
    ang_b = np.array(angles_B, dtype=np.float64)
    if ang_a.ndim != 1 or ang_b.ndim != 1 or not ang_a.size or not ang_b.size:
        raise ValueError("angles must be nonempty 1-d arrays")
    corr = -np.cos(ang_a[:, None] - ang_b[None, :])
    s = np.array([1.0, -1.0])
    table = (1.0 + corr[:, :, None, None] * s[:, None] * s[None, :]) / 4.0
    return NoSignalingBox(table)


def pr_box() -> NoSignalingBox:
    """Extremal box: A xor B = a and b, uniform marginals (CHSH value 4)."""
    table = np.zeros((2, 2, 2, 2))
    for a in range(2):
        for b in range(2):
            for A in range(2):
                for B in range(2):
                    if (A ^ B) == (a & b):
                        table[a, b, A, B] = 0.5
    return NoSignalingBox(table)


# ---------------------------------------------------------------------------
# simulators

def _draw_settings(rng: CounterRng, idx: np.ndarray, schedule: TrialSchedule):
    a = _categorical(rng.uniform(idx, TAG_SETTING_A), schedule.setting_law_A)
    b = _categorical(rng.uniform(idx, TAG_SETTING_B), schedule.setting_law_B)
    return a, b


def _response_outcomes(response, settings, lam, num_settings, num_outcomes,
                       arm: str) -> np.ndarray:
    out = np.empty(settings.size, dtype=np.int64)
    for s in range(num_settings):
        mask = settings == s
        if not mask.any():
            continue
        vals = np.asarray(response(s, lam[mask]), dtype=np.int64)
        if vals.shape != (int(mask.sum()),):
            raise ValueError(f"response_{arm} returned wrong shape")
        if vals.size and (vals.min() < 0 or vals.max() >= num_outcomes):
            raise ValueError(
                f"response_{arm} produced outcome outside [0, {num_outcomes})")
        out[mask] = vals
    return out


def simulate_lhv(model: LhvModel, schedule: TrialSchedule):
    """Run the hidden-variable experiment; one event per arm per trial.

    Returns (ArmRecord A, ArmRecord B).  Trial k is at time
    k * trial_period on both arms; everything is a pure function of
    schedule.rng_seed.
    """
    n = schedule.num_trials
    rng = CounterRng(schedule.rng_seed)
    idx = np.arange(n)
    a, b = _draw_settings(rng, idx, schedule)
    if model.lambda_kind == "circle":
        lam = 2.0 * np.pi * rng.uniform(idx, TAG_LAMBDA)
    elif model.lambda_kind == "sphere":
        z = 2.0 * rng.uniform(idx, TAG_LAMBDA) - 1.0
        phi = 2.0 * np.pi * rng.uniform(idx, TAG_LAMBDA, draw=1)
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        lam = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    else:
        lam = _categorical(rng.uniform(idx, TAG_LAMBDA), model.lambda_probs)
    out_a = _response_outcomes(model.response_A, a, lam,
                               schedule.num_settings_A, model.num_outcomes_A,
                               "A")
    out_b = _response_outcomes(model.response_B, b, lam,
                               schedule.num_settings_B, model.num_outcomes_B,
                               "B")
    times = idx * schedule.trial_period
    rec_a = ArmRecord("A", schedule.num_settings_A, model.num_outcomes_A,
                      times, a, out_a)
    rec_b = ArmRecord("B", schedule.num_settings_B, model.num_outcomes_B,
                      times.copy(), b, out_b)
    return rec_a, rec_b


def simulate_box(box: NoSignalingBox, schedule: TrialSchedule):
    """Draw (A,B) jointly from p(A,B|a,b) per trial; see simulate_lhv
    for the schedule/time contract."""
    if box.S_A != schedule.num_settings_A or box.S_B != schedule.num_settings_B:
        raise ValueError(
            f"box settings ({box.S_A}, {box.S_B}) do not match schedule "
            f"laws ({schedule.num_settings_A}, {schedule.num_settings_B})")
    n = schedule.num_trials
    rng = CounterRng(schedule.rng_seed)
    idx = np.arange(n)
    a, b = _draw_settings(rng, idx, schedule)
    u = rng.uniform(idx, TAG_OUTCOME)
    flat = np.empty(n, dtype=np.int64)
    for ai in range(box.S_A):
        for bi in range(box.S_B):
            mask = (a == ai) & (b == bi)
            if not mask.any():
                continue
            cdf = np.cumsum(box.table[ai, bi].ravel())
            flat[mask] = np.minimum(
                np.searchsorted(cdf, u[mask], side="right"), cdf.size - 1)
    out_a = flat // box.d_B
    out_b = flat % box.d_B
    times = idx * schedule.trial_period
    rec_a = ArmRecord("A", box.S_A, box.d_A, times, a, out_a)
    rec_b = ArmRecord("B", box.S_B, box.d_B, times.copy(), b, out_b)
    return rec_a, rec_b


def _dark_events(rng: CounterRng, rate: float, t_lo: float, t_hi: float):
    """Poisson arrivals on [t_lo, t_hi] via exponential gaps, streamed
    in chunks; pure function of the rng and the interval."""
    span = t_hi - t_lo
    if rate <= 0 or span <= 0:
        return np.empty(0, dtype=np.float64)
    expected = rate * span
    chunk = max(64, int(expected * 1.2 + 8.0 * np.sqrt(expected) + 16))
    times = []
    pos = 0
    acc = 0.0
    while True:
        u = rng.uniform(np.arange(pos, pos + chunk), TAG_DARK_GAP)
        gaps = -np.log1p(-u) / rate
        t = acc + np.cumsum(gaps)
        inside = t <= span
        times.append(t[inside])
        if not inside.all():
            break
        acc = float(t[-1])
        pos += chunk
    arrivals = np.concatenate(times) if times else np.empty(0)
    return t_lo + arrivals


def apply_detector(record: ArmRecord, det: DetectorModel, rng_seed: int,
                   setting_law=None) -> ArmRecord:
    """Apply detector imperfections to a record.

    Dark-count settings come from setting_law when given (the
    apparatus's configured law); otherwise from the record's empirical
    setting frequencies.  Dark outcomes are uniform on [0, d).  The
    time_offset shifts kept events and dark events alike (darks pass
    through the same downstream delay).  Pass a dedicated seed, for
    example derive_seed(run_seed, arm_number).
    """
    if det.is_ideal:
        return record
    rng = CounterRng(rng_seed)
    n = len(record)
    idx = np.arange(n)
    if det.efficiency >= 1.0:
        kept = idx
    elif det.efficiency <= 0.0:
        kept = idx[:0]
    else:
        kept = idx[rng.uniform(idx, TAG_KEEP) < det.efficiency]
    t_kept = record.times[kept] + det.time_offset
    if det.jitter_sigma > 0 and kept.size:
        t_kept = t_kept + det.jitter_sigma * rng.normal(kept, TAG_JITTER)
    s_kept = record.settings[kept]
    o_kept = record.outcomes[kept]

    if det.dark_rate > 0 and n >= 2:
        t_dark = _dark_events(rng, det.dark_rate,
                              float(record.times[0]),
                              float(record.times[-1]))
        t_dark = t_dark + det.time_offset
        k = t_dark.size
        dark_idx = np.arange(k)
        if setting_law is not None:
            law = _check_law(setting_law, "setting_law")
            if law.size != record.num_settings:
                raise ValueError("setting_law length != num_settings")
        else:
            counts = np.bincount(record.settings,
                                 minlength=record.num_settings)
            law = counts / counts.sum()
        s_dark = _categorical(rng.uniform(dark_idx, TAG_DARK_MARK), law)
        o_dark = np.minimum(
            (rng.uniform(dark_idx, TAG_DARK_MARK, draw=1)
             * record.num_outcomes).astype(np.int64),
            record.num_outcomes - 1)
        times = np.concatenate([t_kept, t_dark])
        settings = np.concatenate([s_kept, s_dark])
        outcomes = np.concatenate([o_kept, o_dark])
    else:
        times, settings, outcomes = t_kept, s_kept, o_kept
    return ArmRecord(record.arm_id, record.num_settings, record.num_outcomes,
                     times, settings, outcomes)


# ---------------------------------------------------------------------------
# box table files

_BOX_HEADER_KEYS = ("num_settings_a", "num_settings_b", "num_outcomes_a",
                    "num_outcomes_b")


def read_box_table(source) -> NoSignalingBox:
    """Parse a box table file: a dims header, then one line of
    d_A*d_B probabilities per (a,b), (a,b) lexicographic, A-major."""
    data, name = _open_for_read(source)
    lines = [ln for ln in data.splitlines()]
    if not lines or not lines[0].strip():
        raise FormatError("missing header line", name, 1)
    header = _parse_kv_line(lines[0], _BOX_HEADER_KEYS, name, 1)
    sa = _parse_int(header["num_settings_a"], "num_settings_a", name, 1)
    sb = _parse_int(header["num_settings_b"], "num_settings_b", name, 1)
    da = _parse_int(header["num_outcomes_a"], "num_outcomes_a", name, 1)
    db = _parse_int(header["num_outcomes_b"], "num_outcomes_b", name, 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != da * db:
            raise FormatError(
                f"expected {da * db} probabilities, got {len(parts)}",
                name, lineno)
        rows.append([_parse_float(p, "probability", name, lineno)
                     for p in parts])
    if len(rows) != sa * sb:
        raise FormatError(
            f"expected {sa * sb} table rows, got {len(rows)}", name, None)
    table = np.array(rows, dtype=np.float64).reshape(sa, sb, da, db)
    try:
        return NoSignalingBox(table)
    except ValueError as exc:
        raise FormatError(str(exc), name, None)


def write_box_table(box: NoSignalingBox, sink) -> None:
    head = (f"num_settings_a={box.S_A} num_settings_b={box.S_B} "
            f"num_outcomes_a={box.d_A} num_outcomes_b={box.d_B}")
    lines = [head]
    for a in range(box.S_A):
        for b in range(box.S_B):
            lines.append(" ".join(
                repr(v) for v in box.table[a, b].ravel().tolist()))
    _write_text(sink, "\n".join(lines) + "\n")
