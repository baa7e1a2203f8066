"""Coincidence matching: reduce two arm records to matched pairs.

``match_events`` pairs events whose times agree within a window tau,
one-to-one.  Policies:

* ``greedy-nearest`` (default): repeatedly match the globally closest
  unmatched pair within tau.  Ties resolve toward the earlier A time,
  then the earlier B time, then input order, so the result is a
  deterministic function of the inputs.
* ``first-within-window``: sweep arm A in time order; each A event
  takes the earliest unmatched B event in [t - tau, t + tau].
* ``optimal``: minimum-total-|dt| assignment among maximum-cardinality
  matchings (Hungarian method); guarded to streams below 10^4 events
  because the cost matrix is dense.

The greedy implementation works in two stages.  A vectorized pass
finds pairs that are mutual nearest neighbors strictly closer than any
alternative involving either endpoint; such pairs belong to the greedy
outcome no matter what order the remaining pairs resolve in, so they
can be accepted in bulk and removed.  (Sketch: while both endpoints
are unmatched, any strictly closer candidate pair is disjoint from
them, so matching it cannot steal either endpoint; by induction the
pair is still intact when its own distance level is reached, and at
that level it is the unique choice touching either endpoint.)  The few
events left by ties or chained near-equal spacings go through an exact
closest-first loop: a lazy-deletion heap keyed by
(distance, t_A, t_B, position_A, position_B) over alive nearest
candidates, which reproduces the global closest-first order including
tie-breaks.
"""

from __future__ import annotations

import heapq
from typing import List, Tuple

import numpy as np

from .events import ArmRecord, MatchDiagnostics, PairSet, ResourceGuardError

POLICIES = ("greedy-nearest", "first-within-window", "optimal")

_MAX_SAFE_PASSES = 64
_OPTIMAL_GUARD = 10_000


def _multi_candidate_count(ta: np.ndarray, tb: np.ndarray, tau: float) -> int:
    """Events (either arm) with two or more opposite-arm events in
    their window; a static measure of matching ambiguity."""
    count = 0
    for x, y in ((ta, tb), (tb, ta)):
        lo = np.searchsorted(y, x - tau, side="left")
        hi = np.searchsorted(y, x + tau, side="right")
        count += int(np.count_nonzero(hi - lo >= 2))
    return count


def _nearest_in(tsearch, tother):
    """Per event of ``tsearch``: the tie-canonical nearest index into
    ``tother``, its distance, and the runner-up distance.

    The canonical nearest among equal distances is the one with the
    smaller time, then the smaller index; an equal-time run of length
    two or more around the winner counts as its own runner-up, so the
    strictness test below fails and the tie goes to the exact loop.
    """
    m = tother.size
    pos = np.searchsorted(tother, tsearch)
    left = np.clip(pos - 1, 0, m - 1)
    right = np.clip(pos, 0, m - 1)
    dl = np.abs(tsearch - tother[left])
    dr = np.abs(tsearch - tother[right])
    take_left = dl <= dr  # equal distance: left has the smaller time
    nbr = np.where(take_left, left, right)
    d = np.where(take_left, dl, dr)
    second = np.where(left == right, np.inf, np.where(take_left, dr, dl))
    run_first = np.searchsorted(tother, tother[nbr], side="left")
    run_last = np.searchsorted(tother, tother[nbr], side="right")
    second = np.where(run_last - run_first >= 2, d, second)
    return run_first, d, second


def _safe_pass(ta, tb, tau):
    """One bulk round: indices (into ta/tb) of strictly-mutual-nearest
    pairs within tau."""
    nbr_a, d_a, second_a = _nearest_in(ta, tb)
    nbr_b, _, second_b = _nearest_in(tb, ta)
    i = np.arange(ta.size)
    mutual = (nbr_b[nbr_a] == i) & (d_a <= tau)
    strict = (d_a < second_a) & (d_a < second_b[nbr_a])
    take = mutual & strict
    return i[take], nbr_a[take]


def _greedy_heap(ta, tb, tau) -> List[Tuple[int, int]]:
    """Exact closest-first matching with deterministic tie order.

    Operates on (sub)streams; returned indices refer to ta/tb
    positions.  Lazy-deletion heap: each unmatched A event keeps one
    entry for its nearest alive B; stale entries are recomputed on pop.
    """
    n, m = ta.size, tb.size
    if n == 0 or m == 0:
        return []
    ta_l = ta.tolist()
    tb_l = tb.tolist()
    prv = list(range(-1, m - 1))
    nxt = list(range(1, m + 1))
    alive_b = [True] * m
    matched_a = [False] * n
    base = np.searchsorted(tb, ta)
    cur_left = (base - 1).tolist()
    cur_right = base.tolist()
    inf = float("inf")

    def nearest(i):
        left = cur_left[i]
        while left >= 0 and not alive_b[left]:
            left = prv[left]
        cur_left[i] = left
        right = cur_right[i]
        while right < m and not alive_b[right]:
            right = nxt[right]
        cur_right[i] = right
        t = ta_l[i]
        d_left = t - tb_l[left] if left >= 0 else inf
        d_right = tb_l[right] - t if right < m else inf
        if d_left <= d_right:
            d, j = d_left, left
            # canonical tie order wants the first alive index of an
            # equal-time run; prv links of alive nodes stay alive
            while prv[j] >= 0 and tb_l[prv[j]] == tb_l[j]:
                j = prv[j]
        else:
            d, j = d_right, right
        if j < 0 or j >= m or d > tau:
            return None
        return d, j

    heap = []
    for i in range(n):
        cand = nearest(i)
        if cand is not None:
            heap.append((cand[0], ta_l[i], tb_l[cand[1]], i, cand[1]))
    heapq.heapify(heap)
    pairs = []
    while heap:
        _, _, _, i, j = heapq.heappop(heap)
        if matched_a[i]:
            continue
        if not alive_b[j]:
            cand = nearest(i)
            if cand is not None:
                heapq.heappush(
                    heap, (cand[0], ta_l[i], tb_l[cand[1]], i, cand[1]))
            continue
        matched_a[i] = True
        alive_b[j] = False
        if nxt[j] < m:
            prv[nxt[j]] = prv[j]
        if prv[j] >= 0:
            nxt[prv[j]] = nxt[j]
        pairs.append((i, j))
    return pairs


def _greedy_nearest(ta, tb, tau) -> List[Tuple[int, int]]:
    alive_a = np.arange(ta.size)
    alive_b = np.arange(tb.size)
    out = []
    for _ in range(_MAX_SAFE_PASSES):
        if not alive_a.size or not alive_b.size:
            break
        ia, ib = _safe_pass(ta[alive_a], tb[alive_b], tau)
        if not ia.size:
            break
        out.extend(zip(alive_a[ia].tolist(), alive_b[ib].tolist()))
        keep_a = np.ones(alive_a.size, dtype=bool)
        keep_a[ia] = False
        keep_b = np.ones(alive_b.size, dtype=bool)
        keep_b[ib] = False
        alive_a = alive_a[keep_a]
        alive_b = alive_b[keep_b]
    if alive_a.size and alive_b.size:
        rest = _greedy_heap(ta[alive_a], tb[alive_b], tau)
        out.extend((int(alive_a[i]), int(alive_b[j])) for i, j in rest)
    return out


def _first_within_window(ta, tb, tau) -> List[Tuple[int, int]]:
    ta_l = ta.tolist()
    tb_l = tb.tolist()
    m = len(tb_l)
    pairs = []
    j = 0
    for i, t in enumerate(ta_l):
        while j < m and tb_l[j] < t - tau:
            j += 1
        if j < m and tb_l[j] <= t + tau:
            pairs.append((i, j))
            j += 1
    return pairs


def _optimal(ta, tb, tau) -> List[Tuple[int, int]]:
    from scipy.optimize import linear_sum_assignment

    n, m = ta.size, tb.size
    if n == 0 or m == 0:
        return []
    if n >= _OPTIMAL_GUARD or m >= _OPTIMAL_GUARD:
        raise ResourceGuardError(
            f"optimal policy needs a dense {n} x {m} cost matrix; "
            f"limit is {_OPTIMAL_GUARD} events per stream")
    dist = np.abs(ta[:, None] - tb[None, :])
    # forbidden cells get a cost high enough that the solver uses one
    # only when forced, so pair count is maximized first
    big = (min(n, m) + 1.0) * tau
    cost = np.where(dist <= tau, dist, big)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols)
            if dist[i, j] <= tau]


def match_events(arm_a: ArmRecord, arm_b: ArmRecord, tau: float,
                 policy: str = "greedy-nearest") -> PairSet:
    """Match two arm records into a PairSet.

    tau is the coincidence window in seconds (required, > 0); policy is
    one of POLICIES.  Every pair satisfies |t_A - t_B| <= tau; no event
    joins two pairs; unmatched events are counted in the diagnostics.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be a positive finite number, got {tau!r}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    ta, tb = arm_a.times, arm_b.times
    if policy == "greedy-nearest":
        matched = _greedy_nearest(ta, tb, tau)
    elif policy == "first-within-window":
        matched = _first_within_window(ta, tb, tau)
    else:
        matched = _optimal(ta, tb, tau)
    if matched:
        ia = np.fromiter((p[0] for p in matched), dtype=np.int64,
                         count=len(matched))
        ib = np.fromiter((p[1] for p in matched), dtype=np.int64,
                         count=len(matched))
    else:
        ia = np.empty(0, dtype=np.int64)
        ib = np.empty(0, dtype=np.int64)
    diag = MatchDiagnostics(
        matched=len(matched),
        unmatched_A=len(arm_a) - len(matched),
        unmatched_B=len(arm_b) - len(matched),
        multi_candidate_events=_multi_candidate_count(ta, tb, tau),
        tau=tau,
        policy=policy,
    )
    return PairSet(
        tau=tau,
        policy=policy,
        outcome_A=arm_a.outcomes[ia],
        setting_a=arm_a.settings[ia],
        outcome_B=arm_b.outcomes[ib],
        setting_b=arm_b.settings[ib],
        time_A=ta[ia],
        time_B=tb[ib],
        diagnostics=diag,
        num_settings_a=arm_a.num_settings,
        num_outcomes_a=arm_a.num_outcomes,
        num_settings_b=arm_b.num_settings,
        num_outcomes_b=arm_b.num_outcomes,
        index_A=ia,
        index_B=ib,
    )
