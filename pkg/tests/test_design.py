import json

import numpy as np
import pytest

import oracles
from conftest import RAIN_DM
from propercomp.compensation import (
    check_proper_compensation,
    check_strong_participation,
    check_weak_participation,
    rule_from_cost,
)
from propercomp.design import (
    DesignedCost,
    InfeasibleDesign,
    PiecewiseQuadratic,
    UnsupportedDimension,
    compensation_stats,
    construct_cost,
    design_for,
    required_profile,
    sabotage,
    scenario_family,
    verify_design,
)
from propercomp.scoring import local_robustness_check, pwlc_cost
from propercomp.simplex import SimplexGrid, UtilityMatrix, make_policy
from propercomp.uncertainty import UncertaintyBox

FINE = SimplexGrid(2, 2000)
SWEEP = SimplexGrid(2, 1000)
TWO_BOUNDARY = [[0, 10], [6, 6], [20, -10]]
CROWDED = [[0, 10], [6, 6], [6.5, 5]]


def U(rows):
    return UtilityMatrix(np.array(rows, dtype=float))


def box_around(rows, width):
    v = np.array(rows, dtype=float)
    return UncertaintyBox(v - width / 2, v + width / 2)


RAIN_B = [[0, 0], [2, 2]]


class TestProfile:
    def test_rain_values(self):
        prof = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3)
        (r,) = prof.requirements
        assert r.tau == pytest.approx(0.4)
        assert r.eps == pytest.approx(0.0354, abs=1e-4)
        assert r.m_factor == pytest.approx(56.6, abs=0.05)

    @pytest.mark.parametrize("rows", [RAIN_DM, TWO_BOUNDARY])
    @pytest.mark.parametrize("uniform", [False, True])
    def test_matches_oracle(self, rows, uniform):
        prof = required_profile(U(rows), box_around(np.zeros((len(rows), 2)), 0.8), 0.25,
                                "uniform" if uniform else "consistent")
        got = sorted((r.tau, r.m_factor, r.eps) for r in prof.requirements)
        want = oracles.local_requirements(rows, 0.8, 0.25, uniform)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_sigma_doubling(self):
        a = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.2).requirements[0]
        b = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.4).requirements[0]
        assert b.eps == pytest.approx(2 * a.eps) and b.m_factor == pytest.approx(a.m_factor / 2)

    def test_single_decision_empty(self):
        prof = required_profile(U([[1, 3]]), box_around([[0, 0]], 1.0), 0.3)
        assert prof.requirements == []

    def test_three_outcomes_unsupported(self):
        with pytest.raises(UnsupportedDimension):
            required_profile(U([[0, 1, 2], [2, 1, 0]]), box_around(np.zeros((2, 3)), 1.0), 0.3)

    def test_infeasible_reports_max_sigma(self):
        box = box_around(np.zeros((3, 2)), 1.0)
        with pytest.raises(InfeasibleDesign) as err:
            required_profile(U(CROWDED), box, 1.0)
        # reach = sigma / (slope sqrt 2) per boundary; gap sqrt2 |0.4 - 2/3|
        expect = np.sqrt(2) * (2 / 3 - 0.4) / (1 / (6 * np.sqrt(2)) + 1 / np.sqrt(2))
        assert err.value.max_sigma == pytest.approx(expect, rel=1e-6)
        assert "sigma" in str(err.value)
        required_profile(U(CROWDED), box, err.value.max_sigma)


class TestConstruction:
    @pytest.fixture
    def rain_design(self, rain_bias):
        return design_for(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3, rain_bias)

    def test_local_robustness_at_boundary(self, rain_design):
        (r,) = rain_design.profile.requirements
        assert local_robustness_check(rain_design.cost, r.point, r.eps, r.m_factor, FINE).passed

    def test_h_convex_nondecreasing(self, rain_design, rain_bias):
        t = np.linspace(0, 1, 4001)
        P = np.column_stack([t, 1 - t])
        h = rain_design.cost.value(P) - pwlc_cost(rain_bias.values).value(P)
        step = t[1] - t[0]
        assert h[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(h) >= -1e-12)
        assert np.all(np.diff(h, 2) >= rain_design.profile.eta * step ** 2 - 1e-12)

    def test_strong_participation(self, rain_design, rain_bias):
        C = rule_from_cost(rain_design.cost, rain_bias, make_policy(U(RAIN_DM)))
        assert check_strong_participation(C, rain_bias, SimplexGrid(2, 500)).passed
        assert check_proper_compensation(C, rain_bias, SimplexGrid(2, 200), strict=True).strict

    def test_weak_base(self, rain_bias):
        prof = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3)
        d = construct_cost(prof, "weak", rain_bias)
        C = rule_from_cost(d.cost, rain_bias, make_policy(U(RAIN_DM)))
        assert check_weak_participation(C, rain_bias, SimplexGrid(2, 500)).passed
        (r,) = prof.requirements
        assert local_robustness_check(d.cost, r.point, r.eps, r.m_factor, FINE).passed

    def test_empty_profile_floor_only(self, rain_bias):
        prof = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 10.0)
        assert prof.trivial and prof.requirements == []
        d = construct_cost(prof, "strong", rain_bias)
        C = rule_from_cost(d.cost, rain_bias, make_policy(U(RAIN_DM)))
        assert check_proper_compensation(C, rain_bias, SimplexGrid(2, 100), strict=True).strict
        assert check_strong_participation(C, rain_bias, SimplexGrid(2, 200)).passed

    def test_two_boundaries_each_meet_their_own_factor(self):
        dm = U(TWO_BOUNDARY)
        b = U([[0, 0], [1, 1], [0.5, 0.5]])
        d = design_for(dm, box_around(b.values, 0.5), 0.3, b)
        reqs = d.profile.requirements
        assert len(reqs) == 2 and reqs[0].m_factor != reqs[1].m_factor
        for r in reqs:
            assert local_robustness_check(d.cost, r.point, r.eps, r.m_factor, FINE).passed
        # steeper boundary gets more curvature
        assert max(d.jumps) > min(d.jumps)

    def test_rejects_unknown_base(self, rain_bias):
        prof = required_profile(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3)
        with pytest.raises(ValueError):
            construct_cost(prof, "sideways", rain_bias)


class TestStats:
    def test_matches_grid_max(self, rain_bias):
        dm = U(RAIN_DM)
        d = design_for(dm, box_around(RAIN_B, 1.0), 0.3, rain_bias)
        g = SimplexGrid(2, 300)
        P = g.points
        pol = make_policy(dm)
        direct = d.cost.value(P) - np.einsum("ij,ij->i", rain_bias.values[pol.decide_many(P)], P)
        stats = compensation_stats(d, rain_bias, pol, g)
        assert stats["max"] == pytest.approx(direct.max(), abs=1e-12)
        assert stats["mean"] == pytest.approx(direct.mean(), abs=1e-12)

    def test_flat_design_aligned_expert(self):
        dm = U(RAIN_DM)
        b = U(np.array(RAIN_DM) * 0.1)
        prof = required_profile(dm, box_around(b.values, 1.0), 100.0, eta=1e-12)
        d = construct_cost(prof, "strong", b)
        assert compensation_stats(d, b, make_policy(dm), SimplexGrid(2, 100))["max"] == pytest.approx(0, abs=1e-9)

    def test_doubling_eta_raises_mean(self, rain_bias):
        dm = U(RAIN_DM)
        box = box_around(RAIN_B, 1.0)
        g = SimplexGrid(2, 200)
        a = compensation_stats(design_for(dm, box, 0.3, rain_bias, eta=1e-3), rain_bias, make_policy(dm), g)
        b = compensation_stats(design_for(dm, box, 0.3, rain_bias, eta=2e-3), rain_bias, make_policy(dm), g)
        assert b["mean"] > a["mean"]


class TestVerify:
    @pytest.mark.parametrize("delta_,sigma", [(1.0, 0.3), (0.5, 0.2)])
    def test_round_trip(self, rain_bias, delta_, sigma):
        dm = U(RAIN_DM)
        box = box_around(RAIN_B, delta_)
        d = design_for(dm, box, sigma, rain_bias)
        rep = verify_design(d, scenario_family(dm, box, d.cost), sigma, SWEEP)
        assert rep.passed and rep.worst_loss <= sigma + 6 * np.sqrt(2) * SWEEP.step

    def test_sabotage_fails_near_boundary(self, rain_bias):
        dm = U(RAIN_DM)
        box = box_around(RAIN_B, 1.0)
        d = design_for(dm, box, 0.3, rain_bias)
        bad = sabotage(d, rain_bias, 0)
        rep = verify_design(bad, scenario_family(dm, box, bad.cost), 0.3, SWEEP)
        assert not rep.passed and rep.witness is not None
        assert rep.worst_loss > 0.3
        assert abs(rep.witness["p_true"][0] - 0.4) <= 0.05

    def test_huge_sigma_trivial(self, rain_bias):
        dm = U(RAIN_DM)
        box = box_around(RAIN_B, 1.0)
        d = design_for(dm, box, 10.0, rain_bias)
        assert verify_design(d, scenario_family(dm, box, d.cost), 10.0, SimplexGrid(2, 200)).passed


class TestSerialization:
    def test_record_round_trip_bit_identical(self, rain_bias):
        d = design_for(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3, rain_bias)
        rec = json.loads(json.dumps(d.to_record()))
        again = PiecewiseQuadratic.from_record(rec).to_cost()
        P = SimplexGrid(2, 777).points
        assert np.array_equal(again.value(P), d.cost.value(P))
        assert np.array_equal(again.subgrad(P), d.cost.subgrad(P))
        assert rec["base"] == "strong" and rec["profile"]["boundaries"][0]["tau"] == pytest.approx(0.4)

    def test_knots_include_boundary(self, rain_bias):
        d = design_for(U(RAIN_DM), box_around(RAIN_B, 1.0), 0.3, rain_bias)
        assert isinstance(d, DesignedCost)
        assert any(abs(k - 0.4) < 1e-12 for k in d.piecewise.knots)

    def test_coeffs_shape_checked(self):
        with pytest.raises(ValueError):
            PiecewiseQuadratic(np.array([0.0, 0.5, 1.0]), np.zeros((1, 3)))
