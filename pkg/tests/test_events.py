import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bellkit.events import (
    ArmRecord,
    CoincidencePair,
    DetectionEvent,
    FormatError,
    MatchDiagnostics,
    PairSet,
    read_arm_record,
    read_pairs,
    write_arm_record,
    write_pairs,
)


def make_record(times, settings, outcomes, arm="A", S=2, d=2):
    return ArmRecord(arm, S, d, np.asarray(times, float),
                     np.asarray(settings, int), np.asarray(outcomes, int))


def make_pairs(oa, sa, ob, sb, ta, tb, tau=1.0, **kw):
    n = len(oa)
    diag = MatchDiagnostics(matched=n, unmatched_A=kw.pop("unmatched_A", 0),
                            unmatched_B=kw.pop("unmatched_B", 0),
                            multi_candidate_events=0, tau=tau,
                            policy="greedy-nearest")
    dims = dict(num_settings_a=2, num_outcomes_a=2, num_settings_b=2,
                num_outcomes_b=2)
    dims.update(kw)
    return PairSet(tau=tau, policy="greedy-nearest",
                   outcome_A=np.asarray(oa), setting_a=np.asarray(sa),
                   outcome_B=np.asarray(ob), setting_b=np.asarray(sb),
                   time_A=np.asarray(ta, float), time_B=np.asarray(tb, float),
                   diagnostics=diag, **dims)


class TestArmRecord:
    def test_sorts_unsorted_input(self):
        r = make_record([2.0, 1.0, 3.0], [0, 1, 0], [1, 0, 0])
        assert r.times.tolist() == [1.0, 2.0, 3.0]
        assert r.settings.tolist() == [1, 0, 0]
        assert r.outcomes.tolist() == [0, 1, 0]

    def test_stable_sort_keeps_tie_order(self):
        r = make_record([1.0, 1.0, 0.5], [0, 1, 0], [0, 1, 1])
        assert r.settings.tolist() == [0, 0, 1]
        assert r.outcomes.tolist() == [1, 0, 1]

    def test_bounds_checked(self):
        with pytest.raises(ValueError, match="setting"):
            make_record([0.0], [5], [0])
        with pytest.raises(ValueError, match="outcome"):
            make_record([0.0], [0], [2])
        with pytest.raises(ValueError, match="non-finite"):
            make_record([np.nan], [0], [0])

    def test_bad_arm_and_dims(self):
        with pytest.raises(ValueError):
            make_record([], [], [], arm="C")
        with pytest.raises(ValueError):
            make_record([], [], [], S=0)
        with pytest.raises(ValueError):
            make_record([], [], [], d=1)

    def test_immutable_columns(self):
        r = make_record([0.0, 1.0], [0, 0], [0, 1])
        with pytest.raises(ValueError):
            r.times[0] = 5.0

    def test_element_access(self):
        r = make_record([0.0, 1.0], [0, 1], [1, 0])
        assert r[0] == DetectionEvent(0.0, 0, 1)
        assert list(r)[1] == DetectionEvent(1.0, 1, 0)
        assert len(r) == 2


class TestArmFileRoundTrip:
    def test_empty_stream_reads_as_empty_record(self):
        r = read_arm_record(io.StringIO("arm=B num_settings=3 num_outcomes=4\n"))
        assert len(r) == 0
        assert (r.arm_id, r.num_settings, r.num_outcomes) == ("B", 3, 4)

    def test_unsorted_lines_sorted_on_read(self):
        text = ("arm=A num_settings=2 num_outcomes=2\n"
                "t=2.0 setting=0 outcome=0\n"
                "t=1.0 setting=1 outcome=1\n"
                "t=3.0 setting=0 outcome=1\n")
        r = read_arm_record(io.StringIO(text))
        assert r.times.tolist() == [1.0, 2.0, 3.0]

    def test_out_of_range_setting_names_line(self):
        text = ("arm=A num_settings=2 num_outcomes=2\n"
                "t=1.0 setting=0 outcome=0\n"
                "t=2.0 setting=5 outcome=0\n")
        with pytest.raises(FormatError, match=":3"):
            read_arm_record(io.StringIO(text))

    def test_malformed_line_names_line(self):
        text = ("arm=A num_settings=2 num_outcomes=2\n"
                "t=1.0 setting=0 outcome=0\n"
                "what even is this\n")
        with pytest.raises(FormatError, match=":3"):
            read_arm_record(io.StringIO(text))

    def test_non_finite_time_rejected(self):
        text = "arm=A num_settings=2 num_outcomes=2\nt=inf setting=0 outcome=0\n"
        with pytest.raises(FormatError, match="non-finite"):
            read_arm_record(io.StringIO(text))

    def test_declared_dims_enforced(self):
        text = "arm=A num_settings=2 num_outcomes=2\n"
        with pytest.raises(FormatError, match="num_settings"):
            read_arm_record(io.StringIO(text), expect_settings=3)

    def test_round_trip_1000_events(self):
        rng = np.random.default_rng(5)
        r = make_record(np.sort(rng.uniform(0, 1, 1000)),
                        rng.integers(0, 2, 1000), rng.integers(0, 2, 1000))
        buf = io.StringIO()
        write_arm_record(r, buf)
        back = read_arm_record(io.StringIO(buf.getvalue()))
        assert np.array_equal(back.times, r.times)
        assert np.array_equal(back.settings, r.settings)
        assert np.array_equal(back.outcomes, r.outcomes)

    def test_decimal_fraction_round_trips_bit_exactly(self):
        r = make_record([0.1, 0.2, 0.30000000000000004], [0, 0, 0], [0, 0, 0])
        buf = io.StringIO()
        write_arm_record(r, buf)
        back = read_arm_record(io.StringIO(buf.getvalue()))
        assert back.times.tobytes() == r.times.tobytes()

    def test_empty_record_writes_header_only(self):
        r = make_record([], [], [], arm="B")
        buf = io.StringIO()
        write_arm_record(r, buf)
        assert buf.getvalue() == "arm=B num_settings=2 num_outcomes=2\n"

    def test_path_round_trip(self, tmp_path):
        r = make_record([0.5], [1], [1])
        p = tmp_path / "arm_a.txt"
        write_arm_record(r, p)
        back = read_arm_record(p)
        assert np.array_equal(back.times, r.times)

    @settings(deadline=None, max_examples=100)
    @given(st.lists(
        st.tuples(
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            st.integers(min_value=0, max_value=1),
            st.integers(min_value=0, max_value=1),
        ),
        max_size=60,
    ))
    def test_round_trip_is_identity(self, rows):
        r = make_record([x[0] for x in rows], [x[1] for x in rows],
                        [x[2] for x in rows])
        buf = io.StringIO()
        write_arm_record(r, buf)
        back = read_arm_record(io.StringIO(buf.getvalue()))
        assert back.times.tobytes() == r.times.tobytes()
        assert np.array_equal(back.settings, r.settings)
        assert np.array_equal(back.outcomes, r.outcomes)
        assert np.all(np.diff(back.times) >= 0)


class TestPairSet:
    def test_window_invariant_enforced(self):
        with pytest.raises(ValueError, match="tau"):
            make_pairs([0], [0], [0], [0], [0.0], [3.0], tau=1.0)

    def test_one_to_one_enforced_via_indices(self):
        with pytest.raises(ValueError, match="reuses"):
            PairSet(tau=1.0, policy="greedy-nearest",
                    outcome_A=np.array([0, 0]), setting_a=np.array([0, 0]),
                    outcome_B=np.array([0, 0]), setting_b=np.array([0, 0]),
                    time_A=np.array([0.0, 1.0]), time_B=np.array([0.0, 1.0]),
                    diagnostics=MatchDiagnostics(2, 0, 0, 0, 1.0, "greedy-nearest"),
                    num_settings_a=2, num_outcomes_a=2, num_settings_b=2,
                    num_outcomes_b=2,
                    index_A=np.array([0, 0]), index_B=np.array([0, 1]))

    def test_sorted_by_time_a(self):
        p = make_pairs([0, 1], [0, 1], [1, 0], [1, 0], [2.0, 1.0], [2.0, 1.0])
        assert p.time_A.tolist() == [1.0, 2.0]
        assert p.outcome_A.tolist() == [1, 0]

    def test_diagnostics_must_match_count(self):
        with pytest.raises(ValueError, match="matched"):
            PairSet(tau=1.0, policy="greedy-nearest",
                    outcome_A=np.array([0]), setting_a=np.array([0]),
                    outcome_B=np.array([0]), setting_b=np.array([0]),
                    time_A=np.array([0.0]), time_B=np.array([0.0]),
                    diagnostics=MatchDiagnostics(7, 0, 0, 0, 1.0, "x"),
                    num_settings_a=2, num_outcomes_a=2, num_settings_b=2,
                    num_outcomes_b=2)

    def test_round_trip(self):
        p = make_pairs([0, 1, 1], [1, 0, 1], [1, 0, 0], [0, 1, 1],
                       [0.1, 0.2, 0.30000000000000004],
                       [0.15, 0.2, 0.3], tau=0.5,
                       unmatched_A=2, unmatched_B=1)
        buf = io.StringIO()
        write_pairs(p, buf)
        back = read_pairs(io.StringIO(buf.getvalue()))
        assert back.time_A.tobytes() == p.time_A.tobytes()
        assert back.time_B.tobytes() == p.time_B.tobytes()
        assert np.array_equal(back.outcome_A, p.outcome_A)
        assert np.array_equal(back.setting_b, p.setting_b)
        assert back.diagnostics.unmatched_A == 2
        assert back.policy == p.policy
        assert back.tau == p.tau
        assert back.index_A is None

    def test_pair_file_write_read_write_is_stable(self):
        p = make_pairs([0], [0], [1], [1], [1e-6], [1.25e-6], tau=1e-6)
        buf1 = io.StringIO()
        write_pairs(p, buf1)
        buf2 = io.StringIO()
        write_pairs(read_pairs(io.StringIO(buf1.getvalue())), buf2)
        assert buf1.getvalue() == buf2.getvalue()

    def test_bad_column_line(self):
        with pytest.raises(FormatError, match="column"):
            read_pairs(io.StringIO(
                "tau=1.0 policy=p num_settings_a=2 num_outcomes_a=2 "
                "num_settings_b=2 num_outcomes_b=2 matched=0 unmatched_A=0 "
                "unmatched_B=0 multi_candidate_events=0\n"
                "x y z\n"))

    def test_element_access(self):
        p = make_pairs([0], [1], [1], [0], [0.0], [0.5])
        assert p[0] == CoincidencePair(0, 1, 1, 0, 0.0, 0.5)
        assert len(p) == 1
