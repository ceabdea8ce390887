from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from propercomp.simplex import (
    SimplexGrid,
    UtilityMatrix,
    boundary_points_1d,
    decision_regions,
    expected_utility,
    make_distribution,
    make_policy,
    prune_decisions,
    softmax_policy,
)


def utility_matrices(max_n=4, max_m=3):
    return st.integers(1, max_n).flatmap(lambda n: st.integers(2, max_m).flatmap(
        lambda m: st.lists(st.lists(st.integers(-10, 10), min_size=m, max_size=m),
                           min_size=n, max_size=n)))


class TestDistribution:
    def test_valid(self):
        assert make_distribution([0.25, 0.75]).tolist() == [0.25, 0.75]

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [-0.1, 1.1], [1.0], [np.nan, 1.0]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            make_distribution(bad)

    def test_tolerance_is_1e12(self):
        make_distribution([0.5, 0.5 + 5e-13])
        with pytest.raises(ValueError):
            make_distribution([0.5, 0.5 + 1e-11])


class TestUtilityMatrix:
    def test_rejects_single_outcome(self):
        with pytest.raises(ValueError):
            UtilityMatrix(np.array([[1.0], [2.0]]))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            UtilityMatrix(np.array([[1.0, np.inf]]))

    def test_default_labels_and_lookup(self):
        u = UtilityMatrix(np.zeros((3, 2)))
        assert u.labels == ("d0", "d1", "d2")
        assert u.index("d2") == 2

    def test_immutable(self, rain_dm):
        with pytest.raises(ValueError):
            rain_dm.values[0, 0] = 1.0


class TestExpectedUtility:
    def test_rain_park(self, rain_dm):
        assert expected_utility(rain_dm, 0, [0.3, 0.7]) == pytest.approx(7.0)

    def test_vertex(self, rain_dm):
        assert expected_utility(rain_dm, 0, [0.0, 1.0]) == 10.0

    def test_constant_row(self, rain_dm):
        assert expected_utility(rain_dm, 1, [0.5, 0.5]) == 6.0

    def test_exact_on_fractions(self, rain_dm):
        assert expected_utility(rain_dm, 0, [Fraction(3, 10), Fraction(7, 10)]) == 7

    def test_index_error(self, rain_dm):
        with pytest.raises(IndexError):
            expected_utility(rain_dm, 2, [0.5, 0.5])


class TestPolicy:
    def test_rain_examples(self, rain_dm):
        pol = make_policy(rain_dm)
        assert pol([0.3, 0.7]) == 0
        assert pol([0.5, 0.5]) == 1
        assert pol([0.4, 0.6]) == 0
        assert pol([Fraction(2, 5), Fraction(3, 5)]) == 0

    def test_tie_break_order(self, rain_dm):
        assert make_policy(rain_dm, tie_break=[1, 0])([0.4, 0.6]) == 1

    def test_bad_tie_break(self, rain_dm):
        with pytest.raises(ValueError):
            make_policy(rain_dm, tie_break=[0, 0])

    @settings(max_examples=60, deadline=None)
    @given(utility_matrices(), st.integers(1, 12))
    def test_optimal_exactly_on_rationals(self, rows, k):
        u = UtilityMatrix(np.array(rows, dtype=float))
        pol = make_policy(u)
        for p in oracles.grid_fractions(k, u.m):
            assert pol.decide_exact(p) == oracles.policy(rows, p)
            # the float path agrees since integer utilities separate by >= 1/k
            assert pol(np.array([float(x) for x in p])) == oracles.policy(rows, p)


class TestGrid:
    @pytest.mark.parametrize("m,k", [(2, 7), (3, 5), (4, 3)])
    def test_size_and_order(self, m, k):
        g = SimplexGrid(m, k)
        assert g.size == comb(k + m - 1, m - 1) == len(g.points)
        assert [tuple(c) for c in g.counts] == oracles.compositions(k, m)
        assert np.allclose(g.points.sum(axis=1), 1.0)

    def test_lookup_and_snap(self):
        g = SimplexGrid(3, 4)
        assert g.lookup(np.array([[1, 1, 2]]))[0] == oracles.compositions(4, 3).index((1, 1, 2))
        assert g.lookup(np.array([[5, 0, -1]]))[0] == -1
        assert np.allclose(g.points[g.snap([0.26, 0.24, 0.5])], [0.25, 0.25, 0.5])

    def test_step(self):
        assert SimplexGrid(2, 10).step == pytest.approx(np.sqrt(2) / 10)


class TestRegions:
    def test_rain_boundary(self, rain_dm):
        rm = decision_regions(rain_dm, SimplexGrid(2, 200))
        assert list(rm.boundaries) == [(0, 1)]
        pts = rm.boundaries[(0, 1)]
        assert np.all(np.abs(pts[:, 0] - 0.4) <= 0.005)

    def test_exact_boundary_matches_root(self, rain_dm):
        (i, j, tau), = boundary_points_1d(rain_dm)
        assert (i, j) == (0, 1)
        assert tau == pytest.approx(float(oracles.boundary_root([0, 10], [6, 6])), abs=1e-15)

    def test_single_decision(self):
        u = UtilityMatrix(np.array([[1.0, 2.0, 3.0]]))
        rm = decision_regions(u, SimplexGrid(3, 10))
        assert rm.boundaries == {} and rm.nonempty() == [0]

    def test_dominated_row_is_empty(self):
        u = UtilityMatrix(np.array([[0.0, 10.0], [6.0, 6.0], [1.0, 1.0]]))
        rm = decision_regions(u, SimplexGrid(2, 100))
        assert rm.nonempty() == [0, 1]
        assert len(rm.region(2)) == 0

    @settings(max_examples=30, deadline=None)
    @given(utility_matrices(max_m=2))
    def test_regions_are_intervals_on_the_line(self, rows):
        u = UtilityMatrix(np.array(rows, dtype=float))
        a = decision_regions(u, SimplexGrid(2, 60)).assignment
        for d in set(a.tolist()):
            idx = np.nonzero(a == d)[0]
            assert idx.max() - idx.min() + 1 == len(idx)

    @settings(max_examples=30, deadline=None)
    @given(utility_matrices(max_m=3))
    def test_boundary_points_nearly_indifferent(self, rows):
        u = UtilityMatrix(np.array(rows, dtype=float))
        g = SimplexGrid(u.m, 12)
        rm = decision_regions(u, g)
        slope = np.max(np.abs(u.values[:, None, :] - u.values[None, :, :])) if u.n > 1 else 0
        for (i, j), pts in rm.boundaries.items():
            gap = np.abs(pts @ (u.values[i] - u.values[j]))
            assert np.all(gap <= g.step * slope + 1e-12)


class TestPrune:
    def test_dominated_removed(self):
        u = UtilityMatrix(np.array([[0.0, 10.0], [6.0, 6.0], [1.0, 1.0]]), ("park", "banquet", "home"))
        assert prune_decisions(u, SimplexGrid(2, 100)).labels == ("park", "banquet")

    def test_all_optimal_unchanged(self, rain_dm):
        out = prune_decisions(rain_dm, SimplexGrid(2, 100))
        assert out.labels == rain_dm.labels and np.array_equal(out.values, rain_dm.values)

    def test_duplicate_rows(self):
        u = UtilityMatrix(np.array([[6.0, 6.0], [0.0, 10.0], [6.0, 6.0]]))
        assert prune_decisions(u, SimplexGrid(2, 100)).labels == ("d0", "d1")

    @settings(max_examples=40, deadline=None)
    @given(utility_matrices())
    def test_idempotent(self, rows):
        u = UtilityMatrix(np.array(rows, dtype=float))
        g = SimplexGrid(u.m, 10)
        once = prune_decisions(u, g)
        twice = prune_decisions(once, g)
        assert once.labels == twice.labels


class TestSoftmax:
    def test_equal(self):
        u = UtilityMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert np.allclose(softmax_policy(u, 3.0, [0.5, 0.5]), [0.5, 0.5])

    def test_rain(self, rain_dm):
        e = np.e
        assert np.allclose(softmax_policy(rain_dm, 1.0, [0.3, 0.7]), [e / (1 + e), 1 / (1 + e)])
        assert softmax_policy(rain_dm, 1.0, [0.3, 0.7])[0] == pytest.approx(0.7311, abs=1e-4)

    def test_concentrates(self, rain_dm):
        assert softmax_policy(rain_dm, 20.0, [0.3, 0.7])[0] >= 0.999

    def test_no_overflow_and_shift_invariance(self, rain_dm):
        shifted = UtilityMatrix(rain_dm.values + 1e6)
        a = softmax_policy(rain_dm, 50.0, [0.3, 0.7])
        b = softmax_policy(shifted, 50.0, [0.3, 0.7])
        assert np.all(np.isfinite(b)) and np.allclose(a, b)
        assert abs(a.sum() - 1) <= 1e-12

    def test_rejects_nonpositive_lambda(self, rain_dm):
        with pytest.raises(ValueError):
            softmax_policy(rain_dm, 0.0, [0.3, 0.7])
