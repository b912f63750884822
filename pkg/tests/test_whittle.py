import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evbandit.arm import build_arm_mdp
from evbandit.model import ChargerState, PenaltyFunction
from evbandit.whittle import (
    IndexTable,
    base_g,
    check_indexability,
    closed_form_index,
    compute_index_table,
    index_by_bisection,
    solve_subsidy,
    subsidy_value_iteration,
)
from conftest import TWO_STATE_COST, make_instance

PEN = PenaltyFunction.quadratic(0.3, 4)


@pytest.fixture(scope="module")
def toy_table(toy_dynamic):
    return compute_index_table(toy_dynamic)


@pytest.fixture(scope="module")
def toy_arm(toy_dynamic):
    return build_arm_mdp(toy_dynamic)


class TestClosedForm:
    def test_final_slot(self):
        # 1 - c + marginal penalty
        assert closed_form_index(1, 2, 0.4, 0.9, PEN) == pytest.approx(0.6 + 0.9)

    def test_slack_region_is_flat(self):
        for b in (1, 2):
            assert closed_form_index(3, b, 0.4, 0.9, PEN) == pytest.approx(0.6)

    def test_tight_region_discounts_deferred_penalty(self):
        # B >= T: marginal penalty of the slot that must fire now, discounted
        # to the deadline
        want = 0.6 + 0.9**2 * (PEN(2) - PEN(1))
        assert closed_form_index(3, 4, 0.4, 0.9, PEN) == pytest.approx(want)

    def test_zero_demand(self):
        assert closed_form_index(5, 0, 0.4, 0.9, PEN) == 0.0

    def test_invalid_state(self):
        with pytest.raises(ValueError):
            closed_form_index(0, 2, 0.4, 0.9, PEN)

    def test_recursion_matches_closed_form_on_fixture(self, toy_constant):
        tab = compute_index_table(toy_constant)
        inst = toy_constant
        c0 = float(inst.cost.values[0])
        for t in range(1, inst.t_max + 1):
            for b in range(inst.b_max + 1):
                want = closed_form_index(t, b, c0, inst.discount, inst.penalty)
                assert tab.lookup(t, b, 0, 0) == pytest.approx(want, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(
    t_max=st.integers(1, 4),
    b_rel=st.integers(0, 3),
    kappa=st.floats(0.05, 1.0),
    c0=st.floats(0.0, 0.95),
    beta=st.floats(0.5, 0.99),
    rho=st.floats(0.0, 1.0),
)
def test_recursion_matches_closed_form_randomized(t_max, b_rel, kappa, c0, beta, rho):
    b_max = max(1, min(t_max, 1 + b_rel))
    inst = make_instance(
        t_max=t_max, b_max=b_max, kappa=kappa, rho=rho, discount=beta, cost=c0
    )
    tab = compute_index_table(inst)
    for t in range(1, t_max + 1):
        for b in range(b_max + 1):
            want = closed_form_index(t, b, c0, beta, inst.penalty)
            assert tab.lookup(t, b, 0, 0) == pytest.approx(want, abs=1e-9)


class TestFrozenValues:
    """Index values on the two-level-cost fixture, pinned after the bisection
    oracle reproduced them to 1e-8."""

    CASES = [
        ((3, 2, 0, 0), 1.0438127090301008),
        ((4, 3, 1, 0), -0.2745127272727274),
        ((2, 1, 0, 0), 0.9421052631578948),
        ((1, 3, 0, 0), 2.3),
        ((4, 1, 1, 0), -0.25000000000000006),
    ]

    def test_pinned_values(self, toy_table):
        for state, want in self.CASES:
            assert toy_table.lookup(*state) == pytest.approx(want, abs=1e-9)

    def test_bisection_agrees(self, toy_dynamic, toy_table, toy_arm):
        for state in [(3, 2, 0, 0), (4, 1, 1, 0)]:
            ref = index_by_bisection(toy_dynamic, state, tol=1e-8, arm=toy_arm)
            assert toy_table.lookup(*state) == pytest.approx(ref, abs=1e-6)


class TestTableStructure:
    def test_zero_rows(self, toy_table):
        assert np.all(toy_table.values[0] == 0.0)
        assert np.all(toy_table.values[:, 0] == 0.0)

    def test_monotone_in_demand_when_tight(self, toy_constant):
        tab = compute_index_table(toy_constant)
        v = tab.values
        for t in range(1, toy_constant.t_max + 1):
            seg = v[t, t:, 0, 0]
            assert np.all(np.diff(seg) >= -1e-9)

    def test_reversal_below_the_diagonal_is_real(self, toy_dynamic, toy_table, toy_arm):
        # With dynamic cost the index need not be monotone in B on B < T:
        # at the expensive level, one unit of slack lets the arm wait out the
        # price, so (3,1) outranks (3,2).  Confirm against the oracle so a
        # future "fix" cannot silently flatten this.
        hi = toy_table.lookup(3, 1, 1, 0)
        lo = toy_table.lookup(3, 2, 1, 0)
        assert hi > lo + 1e-3
        assert index_by_bisection(toy_dynamic, (3, 1, 1, 0), tol=1e-8, arm=toy_arm) == pytest.approx(hi, abs=1e-6)
        assert index_by_bisection(toy_dynamic, (3, 2, 1, 0), tol=1e-8, arm=toy_arm) == pytest.approx(lo, abs=1e-6)

    def test_rejects_nonzero_empty_row(self):
        v = np.zeros((3, 3, 1, 1))
        v[0, 1, 0, 0] = 0.5
        with pytest.raises(ValueError):
            IndexTable(v)

    def test_rejects_decreasing_tight_segment(self):
        v = np.zeros((3, 4, 1, 1))
        v[1, 1:, 0, 0] = [3.0, 2.0, 1.0]
        with pytest.raises(ValueError):
            IndexTable(v)


class TestSerialization:
    def test_csv_round_trip_is_exact(self, toy_table, tmp_path):
        p = tmp_path / "idx.csv"
        toy_table.to_csv(p)
        got = np.zeros_like(toy_table.values)
        with open(p, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            assert header == ["T", "B", "cost_state", "period", "index"]
            for t, b, j, tau, val in r:
                got[int(t), int(b), int(j), int(tau)] = float(val)
        assert np.array_equal(got, toy_table.values)

    def test_json_shape(self, toy_table, tmp_path):
        import json

        p = tmp_path / "idx.json"
        toy_table.to_json(p)
        doc = json.loads(p.read_text())
        assert doc["t_max"] == 4 and doc["b_max"] == 3
        assert np.allclose(doc["index"], toy_table.values)


class TestGeometryOfG:
    def test_base_g_matches_value_differences(self, toy_dynamic):
        for nu in (-0.6, -0.1, 0.0, 0.4, 1.1, 2.5):
            sol = solve_subsidy(toy_dynamic, nu)
            for j in range(2):
                for b in range(0, 3):
                    for h in range(1, 3 - b + 1):
                        g = base_g(toy_dynamic, h, b, j, 0)
                        want = sol.values[1, b + h, j, 0] - sol.values[1, b, j, 0]
                        assert g(nu) == pytest.approx(want, abs=1e-9), (b, h, j, nu)

    def test_recursion_g_matches_value_differences(self, toy_dynamic):
        _, gs = compute_index_table(toy_dynamic, collect_g=True)
        for nu in (-0.45, 0.0, 0.35, 1.3):
            sol = solve_subsidy(toy_dynamic, nu)
            for (t, b, h, j, tau), g in gs.items():
                want = sol.values[t, b + h, j, tau] - sol.values[t, b, j, tau]
                assert g(nu) == pytest.approx(want, abs=1e-8), (t, b, h, j, tau, nu)

    def test_base_g_domain_checked(self, toy_dynamic):
        with pytest.raises(ValueError):
            base_g(toy_dynamic, 0, 1, 0, 0)
        with pytest.raises(ValueError):
            base_g(toy_dynamic, 4, 0, 0, 0)
        with pytest.raises(ValueError):
            base_g(toy_dynamic, 1, 1, 5, 0)

    def test_constant_cost_slopes_stay_in_band(self, toy_constant):
        # Constant cost: every g_h is nonincreasing with slopes in [-h, 0] and
        # flat tails.  (Dynamic cost genuinely breaks this; see the reversal
        # test above.)
        _, gs = compute_index_table(toy_constant, collect_g=True)
        for (t, b, h, j, tau), g in gs.items():
            assert g.left_slope == pytest.approx(0.0, abs=1e-12)
            assert g.right_slope == pytest.approx(0.0, abs=1e-12)
            dx = np.diff(g.xs)
            dy = np.diff(g.ys)
            sl = dy[dx > 0] / dx[dx > 0]
            if sl.size:
                assert sl.min() >= -h - 1e-9, (t, b, h)
                assert sl.max() <= 1e-9, (t, b, h)


class TestSubsidySolvers:
    @pytest.mark.parametrize("nu", [-0.4, 0.0, 0.7])
    def test_exact_solver_matches_value_iteration(self, toy_dynamic, toy_arm, nu):
        sol = solve_subsidy(toy_dynamic, nu)
        v, _ = subsidy_value_iteration(toy_dynamic, nu, tol=1e-9, arm=toy_arm)
        for j in range(2):
            for tau in range(1):
                sid = toy_arm.state_id(ChargerState(0, 0), j, tau)
                assert sol.values[0, 0, j, tau] == pytest.approx(v[sid], abs=1e-7)
                for t in range(1, 5):
                    for b in range(4):
                        sid = toy_arm.state_id(ChargerState(t, b), j, tau)
                        assert sol.values[t, b, j, tau] == pytest.approx(
                            v[sid], abs=1e-7
                        ), (t, b, j, nu)

    def test_actions_flip_exactly_at_the_index(self, toy_dynamic, toy_table):
        # just below the index the state is worth activating, just above not
        for state in [(3, 2, 0, 0), (2, 1, 1, 0), (4, 3, 1, 0)]:
            t, b, j, tau = state
            star = toy_table.lookup(*state)
            below = solve_subsidy(toy_dynamic, star - 1e-6)
            above = solve_subsidy(toy_dynamic, star + 1e-6)
            assert below.actions[t, b, j, tau] == 1
            assert above.actions[t, b, j, tau] == 0

    def test_arrival_value_is_consistent(self, toy_dynamic):
        # A(j, tau) = (1-rho) V(empty) + rho E_type V(T, B), all at (j, tau)
        nu = 0.2
        sol = solve_subsidy(toy_dynamic, nu)
        rho = toy_dynamic.arrivals.rho_for(0)
        pmf = toy_dynamic.arrivals.pmf_for(0)
        for j in range(2):
            want = (1 - rho) * sol.values[0, 0, j, 0]
            for (t, b) in zip(*np.nonzero(pmf)):
                want += rho * pmf[t, b] * sol.values[t, b, j, 0]
            assert sol.arrival_value[j, 0] == pytest.approx(want, rel=1e-9)


def test_check_indexability_passes_on_fixture(toy_dynamic, toy_arm):
    grid = np.linspace(-1.0, 3.0, 17)
    assert check_indexability(toy_dynamic, grid, arm=toy_arm, vi_tol=1e-10)


def test_check_indexability_rejects_unsorted_grid(toy_dynamic, toy_arm):
    with pytest.raises(ValueError):
        check_indexability(toy_dynamic, [1.0, 0.0], arm=toy_arm)


def test_check_indexability_catches_violations(toy_dynamic, toy_arm, monkeypatch):
    # feed it a fake activation pattern that re-activates at a higher subsidy
    import evbandit.whittle as w

    flips = iter([np.array([1, 0]), np.array([0, 1])])

    def fake_vi(instance, nu, tol=1e-9, arm=None):
        return np.zeros(2), next(flips)

    monkeypatch.setattr(w, "subsidy_value_iteration", fake_vi)
    assert not w.check_indexability(toy_dynamic, [0.0, 1.0], states=[0, 1], arm=toy_arm)
