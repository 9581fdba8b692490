import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdplp import (
    CmdpInstance,
    RngHandle,
    build_finite_lp,
    build_infinite_lp,
    episodic_dp,
    extract_policy,
    random_episodic_instance,
    random_instance,
    slater_witness,
    smallest_singular_value,
    solve_restricted_dual,
    solve_restricted_primal,
    solve_square_system,
    value_iteration,
)
from cmdplp.lp import SingularSystemError, export_lp_text, singular_values
from conftest import unit_instance


def one_state_instance(r=0.8, gamma=0.7):
    return CmdpInstance(num_states=1, num_actions=1, gamma=gamma,
                        kernel=np.ones((1, 1, 1)), mean_reward=np.array([[r]]),
                        mean_costs=np.zeros((0, 1, 1)), budgets=np.zeros(0),
                        init_dist=np.array([1.0]))


class TestBuildInfinite:
    def test_single_state(self):
        lp = build_infinite_lp(one_state_instance())
        assert np.allclose(lp.flow_matrix, [[0.3]])
        assert np.allclose(lp.flow_rhs, [0.3])

    def test_two_state_deterministic_cycle(self):
        gamma = 0.6
        kernel = np.zeros((2, 1, 2))
        kernel[0, 0, 1] = 1.0
        kernel[1, 0, 0] = 1.0
        inst = CmdpInstance(num_states=2, num_actions=1, gamma=gamma, kernel=kernel,
                            mean_reward=np.zeros((2, 1)), mean_costs=np.zeros((0, 2, 1)),
                            budgets=np.zeros(0), init_dist=np.array([0.5, 0.5]))
        lp = build_infinite_lp(inst)
        assert np.allclose(lp.flow_matrix, [[1.0, -gamma], [-gamma, 1.0]])

    def test_feasible_mass_is_one(self):
        inst = random_instance(10, 10, 0.7, 5, seed=1)
        sol = solve_restricted_primal(build_infinite_lp(inst))
        assert sol.optimal
        assert abs(sol.q.sum() - 1.0) <= 1e-9

    def test_column_order_lexicographic(self):
        lp = build_infinite_lp(unit_instance(seed=3, S=3, A=2))
        assert lp.col_labels == [(s, a) for s in range(3) for a in range(2)]


class TestBuildFinite:
    def test_horizon_one_reduces_to_initial_split(self):
        inst = random_episodic_instance(1, 3, 2, 0, seed=5)
        lp = build_finite_lp(inst)
        assert lp.flow_matrix.shape == (3, 6)
        assert np.allclose(lp.flow_rhs, inst.init_dist)
        sol = solve_restricted_primal(lp)
        q = sol.q.reshape(3, 2)
        assert np.allclose(q.sum(axis=1), inst.init_dist, atol=1e-9)

    def test_two_period_single_state_blocks(self):
        inst = random_episodic_instance(2, 1, 2, 0, seed=6)
        lp = build_finite_lp(inst)
        # second flow row: +1 on period-2 columns, -P on period-1 columns
        assert np.allclose(lp.flow_matrix[1, 2:], [1.0, 1.0])
        assert np.allclose(lp.flow_matrix[1, :2], -inst.kernels[0, 0, :, 0])

    def test_three_period_matches_backward_induction(self):
        for seed in (1, 2, 3):
            inst = random_episodic_instance(3, 4, 3, 0, seed=seed)
            sol = solve_restricted_primal(build_finite_lp(inst))
            assert abs(sol.value - episodic_dp(inst)) <= 1e-8

    def test_per_period_mass(self):
        inst = random_episodic_instance(3, 3, 2, 1, seed=9)
        sol = solve_restricted_primal(build_finite_lp(inst))
        per_period = sol.q.reshape(3, -1).sum(axis=1)
        assert np.allclose(per_period, 1.0, atol=1e-9)


class TestRestrictedPrimal:
    def test_single_point(self):
        lp = build_infinite_lp(one_state_instance(r=0.8))
        sol = solve_restricted_primal(lp)
        assert abs(sol.q[0] - 1.0) <= 1e-9
        assert abs(sol.value - 0.8) <= 1e-9

    def test_value_iteration_oracle(self):
        for seed in (1, 5, 9):
            inst = unit_instance(seed=seed, K=0, gamma=0.7)
            sol = solve_restricted_primal(build_infinite_lp(inst))
            _, vi_opt = value_iteration(inst)
            assert abs(sol.value - (1 - inst.gamma) * vi_opt) <= 1e-8

    def test_fixing_support_column_infeasible_or_value_drop(self):
        inst = unit_instance(seed=2, S=2, A=2, K=1)
        lp = build_infinite_lp(inst)
        base = solve_restricted_primal(lp)
        support = [i for i in range(4) if base.q[i] > 1e-9]
        # enumeration oracle: smallest positive value drop over all column subsets
        drops = []
        for r in range(1, 4):
            for combo in itertools.combinations(range(4), r):
                sol = solve_restricted_primal(lp, fixed_zero=list(combo))
                if sol.optimal and base.value - sol.value > 1e-7:
                    drops.append(base.value - sol.value)
        delta1 = min(drops)
        for i in support:
            sol = solve_restricted_primal(lp, fixed_zero=[i])
            assert (not sol.optimal) or base.value - sol.value >= delta1 - 1e-9

    def test_monotone_deletion(self):
        inst = unit_instance(seed=13, S=3, A=3, K=1)
        lp = build_infinite_lp(inst)
        values = []
        fixed = []
        for i in (0, 3, 7):
            fixed.append(i)
            sol = solve_restricted_primal(lp, fixed_zero=list(fixed))
            if sol.optimal:
                values.append(sol.value)
        assert all(values[i + 1] <= values[i] + 1e-9 for i in range(len(values) - 1))

    def test_slack_relaxes(self):
        lp = build_infinite_lp(unit_instance(seed=4))
        v0 = solve_restricted_primal(lp).value
        v1 = solve_restricted_primal(lp, slack=0.05).value
        assert v1 >= v0 - 1e-9


class TestRestrictedDual:
    def test_strong_duality_full_rows(self):
        lp = build_infinite_lp(unit_instance(seed=5))
        primal = solve_restricted_primal(lp)
        dual = solve_restricted_dual(lp, cols=list(range(lp.num_cols)), row_subset=None)
        assert abs(dual.value - primal.value) <= 1e-8 * (1 + abs(primal.value))

    def test_row_subset_enumeration_oracle(self):
        # 2 states x 2 actions, K=1: brute-force all row subsets
        inst = unit_instance(seed=3, S=2, A=2, K=1)
        lp = build_infinite_lp(inst)
        base = solve_restricted_primal(lp)
        cols = list(range(lp.num_cols))
        rises = []
        for k_sub in ([], [0]):
            for r in range(3):
                for f_sub in itertools.combinations(range(2), r):
                    if len(k_sub) + len(f_sub) == 3:
                        continue
                    dual = solve_restricted_dual(lp, cols, (list(k_sub), list(f_sub)))
                    if dual.optimal and dual.value - base.value > 1e-7:
                        rises.append(dual.value - base.value)
                    if not dual.optimal:
                        rises.append(np.inf)
        # dropping the full row set must change or unbound the dual somewhere
        assert rises
        delta2 = min(rises)
        assert delta2 > 0

    def test_dual_expansion_monotone(self):
        inst = unit_instance(seed=8, S=3, A=2, K=2)
        lp = build_infinite_lp(inst)
        cols = list(range(lp.num_cols))
        full = solve_restricted_dual(lp, cols, (list(range(2)), list(range(3))))
        sub = solve_restricted_dual(lp, cols, ([0], list(range(3))))
        if sub.optimal and full.optimal:
            assert sub.value >= full.value - 1e-9

    def test_empirical_form_reports_primal_value(self):
        lp = build_infinite_lp(unit_instance(seed=9))
        cols = list(range(lp.num_cols))
        rows = (list(range(lp.num_cost_rows)), list(range(lp.num_flow_rows)))
        d = solve_restricted_dual(lp, cols, rows, slack=0.01)
        p = solve_restricted_primal(lp, row_subset=rows, slack=0.01)
        assert abs(d.value - p.value) <= 1e-9 * (1 + abs(p.value))


class TestDualNormBound:
    def test_bounded_dual_exists(self):
        # a bounded optimal dual exists when the null action gives a Slater point
        for seed in (1, 2, 3, 4, 5):
            inst = unit_instance(seed=seed, K=2, gamma=0.5)
            lp = build_infinite_lp(inst)
            assert slater_witness(inst) is not None
            min_alpha = lp.budgets.min()
            sol = solve_restricted_primal(lp)
            y_bound = 1.0 / min_alpha
            z_bound = 1.0 / ((1 - inst.gamma) * min_alpha)
            ok = (np.abs(sol.dual_y).sum() <= y_bound + 1e-9
                  and np.abs(sol.dual_z).max() <= z_bound + 1e-9)
            if not ok:
                y, z = _min_norm_dual(lp)
                ok = (np.abs(y).sum() <= y_bound + 1e-9
                      and np.abs(z).max() <= z_bound + 1e-9)
            assert ok


def _min_norm_dual(lp):
    """Optimal dual with minimum ||y||_1, per the bounded-dual construction."""
    from scipy.optimize import linprog

    sol = solve_restricted_primal(lp)
    k, s = lp.num_cost_rows, lp.num_flow_rows
    # variables [y, z+, z-]; minimize sum(y) among optimal duals
    c = np.concatenate([np.ones(k), np.zeros(2 * s)])
    a_ub = -np.hstack([lp.cost_matrix.T, lp.flow_matrix.T, -lp.flow_matrix.T])
    b_ub = -lp.objective
    a_eq = np.concatenate([lp.budgets, lp.flow_rhs, -lp.flow_rhs])[None, :]
    b_eq = [sol.value]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * (k + 2 * s), method="highs")
    assert res.status == 0
    y = res.x[:k]
    z = res.x[k:k + s] - res.x[k + s:]
    return y, z


class TestSquareSystem:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(solve_square_system(np.eye(3), b), b)

    def test_diagonal(self):
        x = solve_square_system(np.array([[2.0, 0.0], [0.0, 4.0]]), np.array([2.0, 8.0]))
        assert np.allclose(x, [1.0, 2.0])

    def test_residual_bound_random(self):
        for seed in range(100):
            g = np.random.default_rng(seed)
            a = g.normal(size=(8, 8)) + 8 * np.eye(8)
            b = g.normal(size=8)
            x = solve_square_system(a, b)
            norm_a = np.linalg.norm(a, 2)
            assert np.max(np.abs(a @ x - b)) <= 1e-10 * (norm_a * np.linalg.norm(x)
                                                         + np.linalg.norm(b))

    def test_singular_raises_with_sigma(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularSystemError) as err:
            solve_square_system(a, np.array([1.0, 1.0]))
        assert err.value.sigma_min < 1e-10


class TestSingularValues:
    def test_identity(self):
        assert smallest_singular_value(np.eye(2)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert smallest_singular_value(np.diag([3.0, 0.5])) == pytest.approx(0.5, abs=1e-12)

    def test_matches_lapack(self):
        for seed in range(30):
            g = np.random.default_rng(seed)
            shape = (g.integers(2, 9), g.integers(2, 9))
            a = g.normal(size=shape)
            mine = singular_values(a)
            ref = np.linalg.svd(a, compute_uv=False)
            assert np.allclose(mine, ref, rtol=1e-10, atol=1e-12)

    def test_perturbation_inequality(self):
        # |sigma_min(A) - sigma_min(A+E)| <= ||E||_2
        for seed in range(100):
            g = np.random.default_rng(1000 + seed)
            a = g.normal(size=(6, 6))
            e = 0.05 * g.normal(size=(6, 6))
            gap = abs(smallest_singular_value(a) - smallest_singular_value(a + e))
            assert gap <= np.linalg.norm(e, 2) + 1e-12


class TestExtractPolicy:
    def test_normalization(self):
        q = np.array([0.2, 0.3])
        pi = extract_policy(q, 1, 2)
        assert np.allclose(pi.probs, [[0.4, 0.6]])

    def test_zero_mass_uniform(self):
        q = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        pi = extract_policy(q, 2, 4)
        assert np.allclose(pi.probs[0], 0.25)
        assert np.allclose(pi.probs[1], [1, 0, 0, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=6, max_size=6),
           st.floats(0.1, 50))
    def test_scale_invariance(self, vals, factor):
        q = np.array(vals)
        a = extract_policy(q, 3, 2).probs
        b = extract_policy(factor * q, 3, 2).probs
        assert np.allclose(a, b, atol=1e-12)

    def test_episodic_per_period(self):
        q = np.array([0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        pi = extract_policy(q, 2, 2, horizon=2)
        assert pi.probs.shape == (2, 2, 2)
        assert np.allclose(pi.probs[0, 0], [0.5, 0.5])
        assert np.allclose(pi.probs[1, 0], [1.0, 0.0])
        assert np.allclose(pi.probs[1, 1], [0.5, 0.5])  # zero mass, uniform

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            extract_policy(np.array([-1e-6, 1.0]), 1, 2)


def test_export_lp_text():
    lp = build_infinite_lp(unit_instance(seed=2, S=2, A=2, K=1))
    text = export_lp_text(lp)
    lines = text.strip().split("\n")
    assert lines[0].startswith("objective ")
    assert sum(1 for ln in lines if ln.startswith("cost ")) == 1
    assert sum(1 for ln in lines if ln.startswith("flow ")) == 2


def test_duality_gap_invariant_random_solves():
    g = np.random.default_rng(0)
    for _ in range(40):
        inst = unit_instance(seed=int(g.integers(1 << 30)), S=int(g.integers(2, 5)),
                             A=int(g.integers(2, 4)), K=int(g.integers(0, 3)))
        sol = solve_restricted_primal(build_infinite_lp(inst))
        assert sol.optimal
        assert abs(sol.value - sol.dual_value) <= 1e-8 * (1 + abs(sol.value))
