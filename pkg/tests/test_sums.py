import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nclln.exceptions import OffsetOutOfRange, PathTooShort, SeedCollision, ValidationError, WindowTooShort
from nclln.process_models import PathSample, iid_model, sample_path
from nclln.sums import (
    CurveFamily,
    IndexMaps,
    Observable,
    StepCurve,
    center_observable,
    family_from_csv,
    family_to_csv,
    independent_copies_prefix_sums,
    prefix_sums_nonconventional,
    streaming_window_max,
    window_curve,
    window_family,
    window_length,
    window_maxima,
)

paths = st.lists(st.integers(0, 2), min_size=12, max_size=60).map(np.array)


def brute_prefix(x, table, n, ell):
    out = [np.zeros(table.shape[-1])]
    for m in range(1, n + 1):
        idx = tuple(x[i * m - 1] for i in range(1, ell + 1))
        out.append(out[-1] + table[idx])
    return np.array(out)


class TestObservable:
    def test_constant_centers_to_zero(self):
        F = Observable.from_state_values([3.0, 3.0, 3.0])
        np.testing.assert_array_equal(center_observable(F, [0.2, 0.3, 0.5]).table, 0.0)

    def test_centering_idempotent(self):
        F = center_observable(Observable.product([1, -2], 2), [0.4, 0.6])
        again = center_observable(F, [0.4, 0.6])
        np.testing.assert_allclose(again.table, F.table, atol=1e-15)
        assert again.centered

    def test_hand_expectation(self):
        F = Observable.product([0, 1], 2, reference=[0.5, 0.5])
        assert F.mean[0] == pytest.approx(0.25)
        assert center_observable(F, [0.5, 0.5]).table[1, 1, 0] == pytest.approx(0.75)

    def test_bound_is_euclidean(self):
        F = Observable.from_state_values([[3.0, 4.0], [0.0, -1.0]])
        assert F.bound_D == pytest.approx(5.0)

    def test_rejects_ragged(self):
        with pytest.raises(ValidationError):
            Observable(np.zeros((2, 3, 1)))


class TestPrefixSums:
    def test_zero_observable(self):
        x = np.array([0, 1, 0, 1])
        np.testing.assert_array_equal(prefix_sums_nonconventional(x, Observable.from_state_values([0, 0]), 2), 0)

    def test_ell_one_is_ordinary(self):
        x = np.array([0, 1, 1, 0, 1])
        s = prefix_sums_nonconventional(x, Observable.from_state_values([2.0, -1.0]), 5)
        np.testing.assert_allclose(s[:, 0], np.concatenate([[0], np.cumsum([2, -1, -1, 2, -1])]))

    def test_hand_enumeration(self):
        # F(a, b) = a * b on states {0, 1} read as values {x1..x4}; Sigma_2 = x1 x2 + x2 x4
        vals = np.array([2.0, 3.0])
        x = np.array([0, 1, 1, 0])
        F = Observable.product(vals, 2)
        s = prefix_sums_nonconventional(x, F, 2)
        v = vals[x]
        assert s[2, 0] == pytest.approx(v[0] * v[1] + v[1] * v[3])

    @given(paths, st.integers(1, 3))
    def test_matches_brute_force(self, x, ell):
        table = np.arange(3 ** ell, dtype=float).reshape((3,) * ell + (1,)) - 4.0
        n = len(x) // ell
        F = Observable(table)
        np.testing.assert_allclose(prefix_sums_nonconventional(x, F, n), brute_prefix(x, table, n, ell))

    def test_custom_index_maps(self):
        x = np.arange(20) % 2
        F = Observable.product([1.0, -1.0], 2)
        q = IndexMaps([1, lambda m: m * m])
        s = prefix_sums_nonconventional(x, F, 4, q)
        v = np.array([1.0, -1.0])[x]
        expect = np.cumsum([v[m - 1] * v[m * m - 1] for m in range(1, 5)])
        np.testing.assert_allclose(s[1:, 0], expect)

    def test_path_too_short(self):
        with pytest.raises(PathTooShort):
            prefix_sums_nonconventional(np.zeros(5, dtype=int), Observable.product([1, -1], 2), 3)


class TestIndependentCopies:
    def test_zero(self):
        F = Observable.product([0.0, 0.0], 2)
        p = [np.zeros(10, dtype=int), np.ones(10, dtype=int)]
        np.testing.assert_array_equal(independent_copies_prefix_sums(p, F, 4), 0)

    def test_ell_one_matches_single_path(self):
        x = np.array([0, 1, 1, 0, 1, 0])
        F = Observable.from_state_values([1.0, -1.0])
        np.testing.assert_array_equal(independent_copies_prefix_sums([x], F, 6),
                                      prefix_sums_nonconventional(x, F, 6))

    def test_seed_collision(self):
        F = Observable.product([1.0, -1.0], 2)
        m = iid_model([0.5, 0.5])
        a = sample_path(m, 20, 5)
        with pytest.raises(SeedCollision):
            independent_copies_prefix_sums([a, PathSample(a.states, 5)], F, 5)

    def test_centered_mean_near_zero(self):
        from nclln.large_deviations import RateEvaluator, sigma_squared

        m = iid_model([0.5, 0.5])
        F = center_observable(Observable.product([1.0, 0.0], 2), m.stationary)
        n, reps = 50, 10_000
        ends = np.array([independent_copies_prefix_sums([sample_path(m, n, 2 * s), sample_path(m, 2 * n, 2 * s + 1)],
                                                        F, n)[-1, 0] / n for s in range(reps)])
        sd = math.sqrt(sigma_squared(RateEvaluator().fit(m, F), [1.0]) / n / reps)
        assert abs(ends.mean()) <= 5 * sd


class TestWindows:
    def test_length_examples(self):
        assert window_length(1000, 2) == 13
        assert window_length(2, 1 / math.log(2)) == 1
        with pytest.raises(WindowTooShort):
            window_length(2, 1)

    def test_family_shape(self):
        prefix = np.zeros(1001)
        fam = window_family(prefix, 1000, 2)
        assert len(fam) == 988 and fam.grid_size == 13

    def test_degenerate_single_window(self):
        n = 20
        fam = window_family(np.arange(n + 1.0), n, n / math.log(n))
        assert fam.provenance["b"] == n and len(fam) == 1

    @given(st.lists(st.sampled_from([-1.0, 1.0, 0.5]), min_size=40, max_size=200), st.floats(1.0, 4.0))
    def test_family_properties(self, inc, c):
        prefix = np.concatenate([[0.0], np.cumsum(inc)])
        n = len(inc)
        b = window_length(n, c)
        fam = window_family(prefix, n, c)
        D = 1.0
        V = fam.values[:, :, 0]
        assert np.all(V[:, 0] == 0)
        assert np.max(np.abs(np.diff(V, axis=1))) <= D / b + 1e-15
        assert np.max(np.abs(V)) <= D + 1e-12
        np.testing.assert_allclose(V[:, -1], (prefix[b:] - prefix[:-b]) / b)
        assert window_maxima(prefix, b) == pytest.approx(V[:, -1].max())
        m = len(fam) // 2
        np.testing.assert_array_equal(window_curve(prefix, m, n, c).values[:, 0], V[m])

    def test_offset_out_of_range(self):
        with pytest.raises(OffsetOutOfRange):
            window_curve(np.zeros(101), 95, 100, 2)

    def test_streaming_matches_dense(self):
        m = iid_model([0.3, 0.7])
        F = center_observable(Observable.product([1.0, -1.0], 2), m.stationary)
        path = sample_path(m, 2 * 5000, 4)
        prefix = prefix_sums_nonconventional(path, F, 5000)
        for b in (1, 17, 300):
            assert streaming_window_max(path, F, 5000, b, chunk=777) == pytest.approx(window_maxima(prefix, b),
                                                                                      abs=1e-12)


class TestCurves:
    def test_curve_must_start_at_zero(self):
        with pytest.raises(ValidationError):
            StepCurve([1.0, 2.0])

    def test_from_slopes_round_trip(self):
        c = StepCurve.from_slopes([0.5, -0.25, 1.0, 0.0])
        np.testing.assert_allclose(c.slopes[:, 0], [0.5, -0.25, 1.0, 0.0])

    def test_family_csv_round_trip(self):
        rng = np.random.default_rng(1)
        vals = np.concatenate([np.zeros((5, 1, 2)), rng.normal(size=(5, 7, 2))], axis=1)
        fam = CurveFamily(vals, {"n": 9, "c": 1.5, "b": 7})
        text = family_to_csv(fam)
        assert text.startswith("# n=9,c=1.5,b=7,d=2\r\n")
        assert "\r\n" in text and "\n" not in text.replace("\r\n", "")
        back = family_from_csv(text)
        np.testing.assert_array_equal(back.values, vals)
