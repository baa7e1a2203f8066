import io

import numpy as np
import pytest

from bellkit.models import (
    DetectorModel,
    LhvModel,
    NoSignalingBox,
    TrialSchedule,
    apply_detector,
    pr_box,
    read_box_table,
    sign_lhv_model,
    simulate_box,
    simulate_lhv,
    singlet_box,
    table_lhv_model,
    vector_sign_lhv_model,
    write_box_table,
)
from bellkit.rng import derive_seed

from oracles import (
    box_correlator,
    circle_marginal_box,
    discrete_marginal_box,
    sign_model_correlator,
)

CHSH_ANGLES_A = (0.0, np.pi / 2)
CHSH_ANGLES_B = (np.pi / 4, 3 * np.pi / 4)


def schedule(n, seed=42, law_a=(0.5, 0.5), law_b=(0.5, 0.5), period=1e-6):
    return TrialSchedule(n, period, np.asarray(law_a), np.asarray(law_b), seed)


def empirical_table(rec_a, rec_b):
    """Joint counts by trial index; valid for simulator output where
    event k on both arms is trial k."""
    S_A, S_B = rec_a.num_settings, rec_b.num_settings
    d_A, d_B = rec_a.num_outcomes, rec_b.num_outcomes
    idx = ((rec_a.settings * S_B + rec_b.settings) * d_A
           + rec_a.outcomes) * d_B + rec_b.outcomes
    counts = np.bincount(idx, minlength=S_A * S_B * d_A * d_B)
    return counts.reshape(S_A, S_B, d_A, d_B).astype(float)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ValueError):
            schedule(-1)
        with pytest.raises(ValueError):
            schedule(10, period=0.0)
        with pytest.raises(ValueError):
            TrialSchedule(10, 1.0, np.array([0.5, 0.6]), np.array([1.0]), 0)
        with pytest.raises(ValueError):
            TrialSchedule(10, 1.0, np.array([0.5, 0.5]), np.array([-1.0, 2.0]), 0)


class TestSingletBox:
    def test_aligned_angles_anticorrelate(self):
        box = singlet_box([0.3], [0.3])
        # E = -1: equal outcomes never happen
        assert box.table[0, 0, 0, 0] == 0.0
        assert box.table[0, 0, 1, 1] == 0.0
        assert box.table[0, 0, 0, 1] == 0.5
        assert box_correlator(box.table, 0, 0) == -1.0

    def test_orthogonal_angles_uniform(self):
        box = singlet_box([0.0], [np.pi / 2])
        assert np.allclose(box.table[0, 0], 0.25, atol=1e-15)

    def test_chsh_angle_correlators(self):
        box = singlet_box(CHSH_ANGLES_A, CHSH_ANGLES_B)
        r = np.sqrt(2) / 2
        expect = [[-r, r], [-r, -r]]
        for a in range(2):
            for b in range(2):
                assert box_correlator(box.table, a, b) == pytest.approx(
                    expect[a][b], abs=1e-14)

    def test_invariants_hold_exactly(self):
        box = singlet_box(np.linspace(0, 2, 5), np.linspace(-1, 1, 3))
        sums = box.table.sum(axis=(2, 3))
        assert np.abs(sums - 1).max() < 1e-12
        pa = box.table.sum(axis=3)
        assert (pa.max(axis=1) - pa.min(axis=1)).max() < 1e-12


class TestNoSignalingBox:
    def test_rejects_signaling_table(self):
        t = np.full((2, 2, 2, 2), 0.25)
        t[0, 0] = [[0.5, 0.25], [0.0, 0.25]]  # p(A|a0,b0) = (0.75, 0.25)
        with pytest.raises(ValueError, match="signaling"):
            NoSignalingBox(t)

    def test_rejects_unnormalized(self):
        t = np.full((2, 2, 2, 2), 0.3)
        with pytest.raises(ValueError, match="sum to 1"):
            NoSignalingBox(t)

    def test_rejects_negative(self):
        t = np.full((2, 2, 2, 2), 0.25)
        t[0, 0, 0, 0] = -0.1
        t[0, 0, 1, 1] = 0.6
        with pytest.raises(ValueError):
            NoSignalingBox(t)

    def test_pr_box_correlators(self):
        box = pr_box()
        expect = [[1.0, 1.0], [1.0, -1.0]]
        for a in range(2):
            for b in range(2):
                assert box_correlator(box.table, a, b) == expect[a][b]
        assert np.allclose(box.marginal_A(0), [0.5, 0.5])
        assert np.allclose(box.marginal_B(1), [0.5, 0.5])


class TestSimulateBox:
    def test_reproducible_bit_identical(self):
        box = singlet_box(CHSH_ANGLES_A, CHSH_ANGLES_B)
        ra1, rb1 = simulate_box(box, schedule(5000, seed=7))
        ra2, rb2 = simulate_box(box, schedule(5000, seed=7))
        assert ra1.times.tobytes() == ra2.times.tobytes()
        assert np.array_equal(ra1.outcomes, ra2.outcomes)
        assert np.array_equal(rb1.settings, rb2.settings)
        ra3, _ = simulate_box(box, schedule(5000, seed=8))
        assert not np.array_equal(ra1.outcomes, ra3.outcomes)

    def test_trial_times_and_one_event_per_trial(self):
        box = pr_box()
        ra, rb = simulate_box(box, schedule(100, period=0.25))
        assert len(ra) == len(rb) == 100
        assert np.array_equal(ra.times, np.arange(100) * 0.25)
        assert np.array_equal(ra.times, rb.times)

    def test_product_box_factorizes(self):
        u = np.array([0.7, 0.3])
        v = np.array([0.2, 0.8])
        table = np.broadcast_to(np.outer(u, v), (2, 2, 2, 2)).copy()
        box = NoSignalingBox(table)
        n = 200_000
        ra, rb = simulate_box(box, schedule(n, seed=11))
        counts = empirical_table(ra, rb)
        for a in range(2):
            for b in range(2):
                n_ab = counts[a, b].sum()
                phat = counts[a, b] / n_ab
                se = np.sqrt(table[a, b] * (1 - table[a, b]) / n_ab)
                assert (np.abs(phat - table[a, b]) <= 5 * se + 1e-12).all()

    def test_empirical_tables_converge_to_box(self):
        box = singlet_box(CHSH_ANGLES_A, CHSH_ANGLES_B)
        ra, rb = simulate_box(box, schedule(200_000, seed=3))
        counts = empirical_table(ra, rb)
        for a in range(2):
            for b in range(2):
                n_ab = counts[a, b].sum()
                phat = counts[a, b] / n_ab
                se = np.sqrt(box.table[a, b] * (1 - box.table[a, b]) / n_ab)
                assert (np.abs(phat - box.table[a, b]) <= 5 * se + 1e-12).all()

    def test_setting_law_respected(self):
        box = pr_box()
        n = 100_000
        ra, _ = simulate_box(box, schedule(n, law_a=(0.9, 0.1), seed=20))
        f1 = ra.settings.mean()
        assert abs(f1 - 0.1) < 5 * np.sqrt(0.1 * 0.9 / n)

    def test_dims_must_match_schedule(self):
        with pytest.raises(ValueError, match="settings"):
            simulate_box(pr_box(), TrialSchedule(
                10, 1.0, np.array([1.0]), np.array([0.5, 0.5]), 0))


class TestSimulateLhv:
    def test_constant_response_all_zero(self):
        model = LhvModel(
            "circle",
            lambda a, lam: np.zeros(lam.shape[0], dtype=np.int64),
            lambda b, lam: (lam > np.pi).astype(np.int64),
        )
        ra, rb = simulate_lhv(model, schedule(500))
        assert np.all(ra.outcomes == 0)

    def test_reproducible(self):
        m = sign_lhv_model(CHSH_ANGLES_A, CHSH_ANGLES_B)
        ra1, rb1 = simulate_lhv(m, schedule(2000, seed=5))
        ra2, rb2 = simulate_lhv(m, schedule(2000, seed=5))
        assert np.array_equal(ra1.outcomes, ra2.outcomes)
        assert np.array_equal(rb1.outcomes, rb2.outcomes)

    def test_sign_model_correlators_match_analytic_and_quadrature(self):
        m = sign_lhv_model(CHSH_ANGLES_A, CHSH_ANGLES_B)
        n = 1_000_000
        ra, rb = simulate_lhv(m, schedule(n, seed=42))
        counts = empirical_table(ra, rb)
        quad = circle_marginal_box(m, 2, 2, n=40001)
        for a, th_a in enumerate(CHSH_ANGLES_A):
            for b, th_b in enumerate(CHSH_ANGLES_B):
                analytic = sign_model_correlator(th_a, th_b)
                assert box_correlator(quad, a, b) == pytest.approx(
                    analytic, abs=2e-4)
                n_ab = counts[a, b].sum()
                e_hat = box_correlator(counts, a, b) / n_ab
                assert e_hat == pytest.approx(analytic, abs=0.01)

    def test_discrete_model_matches_exact_marginal(self):
        tab_a = np.array([[0, 1, 1, 0], [1, 1, 0, 0]])
        tab_b = np.array([[0, 0, 1, 1], [1, 0, 1, 0]])
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        m = table_lhv_model(tab_a, tab_b, probs)
        exact = discrete_marginal_box(m, 2, 2)
        n = 200_000
        ra, rb = simulate_lhv(m, schedule(n, seed=9))
        counts = empirical_table(ra, rb)
        for a in range(2):
            for b in range(2):
                n_ab = counts[a, b].sum()
                phat = counts[a, b] / n_ab
                se = np.sqrt(exact[a, b] * (1 - exact[a, b]) / n_ab)
                assert (np.abs(phat - exact[a, b]) <= 5 * se + 1e-12).all()

    def test_sphere_model_sawtooth(self):
        axes_a = np.array([[0, 0, 1.0], [1.0, 0, 0]])
        axes_b = np.array([[np.sin(0.7), 0, np.cos(0.7)], [0, 1.0, 0]])
        m = vector_sign_lhv_model(axes_a, axes_b)
        n = 200_000
        ra, rb = simulate_lhv(m, schedule(n, seed=13))
        counts = empirical_table(ra, rb)
        # angle between axis pairs
        for a in range(2):
            for b in range(2):
                ang = np.arccos(np.clip(axes_a[a] @ axes_b[b], -1, 1))
                expect = -1.0 + 2.0 * ang / np.pi
                n_ab = counts[a, b].sum()
                e_hat = box_correlator(counts, a, b) / n_ab
                se = np.sqrt((1 - expect**2) / n_ab) + 4 / np.sqrt(n_ab)
                assert abs(e_hat - expect) < 5 * se

    def test_response_range_validated(self):
        bad = LhvModel(
            "circle",
            lambda a, lam: np.full(lam.shape[0], 7, dtype=np.int64),
            lambda b, lam: np.zeros(lam.shape[0], dtype=np.int64),
        )
        with pytest.raises(ValueError, match="response_A"):
            simulate_lhv(bad, schedule(50))


class TestLhvBoxEquivalence:
    def test_discrete_lhv_equals_marginal_box(self):
        tab_a = np.array([[0, 1, 0], [1, 0, 0]])
        tab_b = np.array([[1, 0, 0], [0, 0, 1]])
        probs = np.array([0.25, 0.5, 0.25])
        m = table_lhv_model(tab_a, tab_b, probs)
        box = NoSignalingBox(discrete_marginal_box(m, 2, 2))
        n = 150_000
        ra1, rb1 = simulate_lhv(m, schedule(n, seed=31))
        ra2, rb2 = simulate_box(box, schedule(n, seed=32))
        c1 = empirical_table(ra1, rb1)
        c2 = empirical_table(ra2, rb2)
        for a in range(2):
            for b in range(2):
                n1, n2 = c1[a, b].sum(), c2[a, b].sum()
                p1, p2 = c1[a, b] / n1, c2[a, b] / n2
                pool = (c1[a, b] + c2[a, b]) / (n1 + n2)
                se = np.sqrt(np.maximum(pool * (1 - pool), 1e-12)
                             * (1 / n1 + 1 / n2))
                assert (np.abs(p1 - p2) <= 5 * se + 1e-9).all()


class TestDetector:
    def test_ideal_detector_is_identity(self):
        ra, _ = simulate_box(pr_box(), schedule(1000))
        out = apply_detector(ra, DetectorModel(), rng_seed=1)
        assert out is ra

    def test_blind_detector_empties_record(self):
        ra, _ = simulate_box(pr_box(), schedule(1000))
        out = apply_detector(ra, DetectorModel(efficiency=0.0), rng_seed=1)
        assert len(out) == 0

    def test_half_efficiency_binomial(self):
        n = 1_000_000
        ra, _ = simulate_box(pr_box(), schedule(n, seed=17))
        out = apply_detector(ra, DetectorModel(efficiency=0.5), rng_seed=99)
        sigma = np.sqrt(n * 0.5 * 0.5)
        assert abs(len(out) - n * 0.5) <= 5 * sigma

    def test_keep_is_reproducible_and_seed_sensitive(self):
        ra, _ = simulate_box(pr_box(), schedule(20_000))
        o1 = apply_detector(ra, DetectorModel(efficiency=0.3), rng_seed=4)
        o2 = apply_detector(ra, DetectorModel(efficiency=0.3), rng_seed=4)
        o3 = apply_detector(ra, DetectorModel(efficiency=0.3), rng_seed=5)
        assert np.array_equal(o1.times, o2.times)
        assert len(o1) != len(o3) or not np.array_equal(o1.times, o3.times)

    def test_offset_and_jitter(self):
        n = 50_000
        ra, _ = simulate_box(pr_box(), schedule(n, seed=2, period=1.0))
        det = DetectorModel(jitter_sigma=0.01, time_offset=5.0)
        out = apply_detector(ra, det, rng_seed=8)
        assert len(out) == n
        delta = np.sort(out.times) - (np.arange(n) * 1.0 + 5.0)
        # jitter can reorder events; compare sorted vs sorted (period >> sigma)
        assert abs(delta.mean()) < 5 * 0.01 / np.sqrt(n)
        assert abs(delta.std() - 0.01) < 0.001

    def test_dark_rate_poisson_count(self):
        n = 100_000
        period = 1e-3
        ra, _ = simulate_box(pr_box(), schedule(n, seed=21, period=period))
        span = (n - 1) * period
        rate = 2000.0
        det = DetectorModel(efficiency=0.0, dark_rate=rate)
        out = apply_detector(ra, det, rng_seed=6)
        mean = rate * span
        assert abs(len(out) - mean) <= 5 * np.sqrt(mean)
        assert np.all(np.diff(out.times) >= 0)
        assert out.times.min() >= ra.times[0]
        assert out.times.max() <= ra.times[-1]

    def test_dark_settings_follow_configured_law(self):
        n = 20_000
        ra, _ = simulate_box(pr_box(), schedule(n, seed=23, period=1e-3))
        det = DetectorModel(efficiency=0.0, dark_rate=500.0)
        out = apply_detector(ra, det, rng_seed=7, setting_law=(0.8, 0.2))
        k = len(out)
        assert k > 100
        f = (out.settings == 0).mean()
        assert abs(f - 0.8) <= 5 * np.sqrt(0.8 * 0.2 / k)

    def test_dark_settings_default_to_empirical(self):
        n = 20_000
        ra, _ = simulate_box(pr_box(), schedule(
            n, seed=29, period=1e-3, law_a=(0.95, 0.05)))
        det = DetectorModel(efficiency=0.0, dark_rate=500.0)
        out = apply_detector(ra, det, rng_seed=3)
        k = len(out)
        f = (out.settings == 0).mean()
        assert abs(f - 0.95) <= 5 * np.sqrt(0.95 * 0.05 / k) + 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            DetectorModel(efficiency=1.5)
        with pytest.raises(ValueError):
            DetectorModel(jitter_sigma=-1)
        with pytest.raises(ValueError):
            DetectorModel(dark_rate=-0.1)


class TestBoxTableFile:
    def test_round_trip_bit_exact(self):
        box = singlet_box(CHSH_ANGLES_A, CHSH_ANGLES_B)
        buf = io.StringIO()
        write_box_table(box, buf)
        back = read_box_table(io.StringIO(buf.getvalue()))
        assert back.table.tobytes() == box.table.tobytes()

    def test_row_count_checked(self):
        text = ("num_settings_a=2 num_settings_b=2 num_outcomes_a=2 "
                "num_outcomes_b=2\n0.25 0.25 0.25 0.25\n")
        with pytest.raises(Exception, match="rows"):
            read_box_table(io.StringIO(text))

    def test_signaling_file_rejected(self):
        rows = ["0.5 0.25 0.0 0.25", "0.25 0.25 0.25 0.25",
                "0.25 0.25 0.25 0.25", "0.25 0.25 0.25 0.25"]
        text = ("num_settings_a=2 num_settings_b=2 num_outcomes_a=2 "
                "num_outcomes_b=2\n" + "\n".join(rows) + "\n")
        with pytest.raises(Exception, match="signaling"):
            read_box_table(io.StringIO(text))


def test_derived_detector_seeds_differ_per_arm():
    s1 = derive_seed(42, 1)
    s2 = derive_seed(42, 2)
    assert s1 != s2
