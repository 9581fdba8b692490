import itertools

import numpy as np
import pytest

from cmdplp import (
    CmdpInstance,
    ConfidenceParams,
    RngHandle,
    build_infinite_lp,
    collect_uniform,
    hardness_constants,
    identify_basis_doubling,
    identify_basis_empirical,
    identify_basis_true,
    rad,
    smallest_singular_value,
    solve_restricted_primal,
    verify_basis,
)
from cmdplp.basis import export_basis_json
from cmdplp.lp import BasisPair
from conftest import deterministic_instance, make_separated_instance, unit_instance


def one_state_two_actions(r1=0.3, r2=0.8, gamma=0.5):
    return CmdpInstance(num_states=1, num_actions=2, gamma=gamma,
                        kernel=np.ones((1, 2, 1)),
                        mean_reward=np.array([[r1, r2]]),
                        mean_costs=np.zeros((0, 1, 2)), budgets=np.zeros(0),
                        init_dist=np.array([1.0]))


def _lemma1_holds(lp, cols, j1, j2, v_opt):
    """Enumeration oracle: does (I, J) pin a positive feasible optimal point?"""
    if len(cols) != len(j1) + len(j2) or not cols:
        return False
    sub = np.vstack([lp.cost_matrix[np.ix_(j1, cols)] if j1 else np.zeros((0, len(cols))),
                     lp.flow_matrix[np.ix_(j2, cols)] if j2 else np.zeros((0, len(cols)))])
    if smallest_singular_value(sub) <= 1e-9:
        return False
    rhs = np.concatenate([lp.budgets[list(j1)], lp.flow_rhs[list(j2)]])
    q_basic = np.linalg.solve(sub, rhs)
    if np.min(q_basic) <= 1e-9:
        return False
    q = np.zeros(lp.num_cols)
    q[list(cols)] = q_basic
    if lp.num_cost_rows and np.max(lp.cost_matrix @ q - lp.budgets) > 1e-9:
        return False
    if np.max(np.abs(lp.flow_matrix @ q - lp.flow_rhs)) > 1e-9:
        return False
    return abs(lp.objective @ q - v_opt) <= 1e-7 * (1 + abs(v_opt))


class TestIdentifyTrue:
    def test_one_state_two_actions(self):
        lp = build_infinite_lp(one_state_two_actions())
        basis = identify_basis_true(lp)
        assert basis == BasisPair(cols=(1,), rows_cost=(), rows_flow=(0,))
        v = solve_restricted_primal(lp).value
        # enumeration oracle confirms this is the only valid single-column pair
        valid = [(cols, j2) for cols in ([0], [1]) for j2 in ([0],)
                 if _lemma1_holds(lp, cols, [], j2, v)]
        assert valid == [([1], [0])]

    def test_degenerate_two_optimal_bases(self):
        # both actions identical: multiple optimal bases; output is deterministic
        lp = build_infinite_lp(one_state_two_actions(r1=0.7, r2=0.7))
        a = identify_basis_true(lp)
        b = identify_basis_true(lp)
        assert a == b
        assert verify_basis(lp, a).passed

    def test_binding_cost_constraint(self):
        # make the unconstrained best action too costly so the budget binds
        inst = CmdpInstance(
            num_states=2, num_actions=2, gamma=0.5,
            kernel=np.full((2, 2, 2), 0.5),
            mean_reward=np.array([[0.1, 1.0], [0.1, 1.0]]),
            mean_costs=np.array([[[0.0, 1.0], [0.0, 1.0]]]),
            budgets=np.array([0.8]),
            init_dist=np.array([0.5, 0.5]))
        lp = build_infinite_lp(inst)
        basis = identify_basis_true(lp)
        assert basis.rows_cost == (0,)
        assert basis.size == len(basis.rows_cost) + len(basis.rows_flow)
        assert verify_basis(lp, basis).passed
        v = solve_restricted_primal(lp).value
        assert _lemma1_holds(lp, list(basis.cols), list(basis.rows_cost),
                             list(basis.rows_flow), v)

    def test_output_passes_verify_on_random_instances(self):
        for seed in range(8):
            lp = build_infinite_lp(unit_instance(seed=seed, S=3, A=3, K=2))
            basis = identify_basis_true(lp)
            report = verify_basis(lp, basis)
            assert report.passed, report.reason

    def test_permanence_and_cardinality(self):
        trace = []
        lp = build_infinite_lp(unit_instance(seed=21, S=3, A=3, K=1))
        basis = identify_basis_true(lp, trace=trace)
        dropped = set()
        for event in trace:
            if event["phase"] == "col":
                assert event["candidate"] not in dropped
                if event["dropped"]:
                    dropped.add(event["candidate"])
        assert dropped.isdisjoint(basis.cols)
        assert basis.size == len(basis.rows_cost) + len(basis.rows_flow)


class TestIdentifyEmpirical:
    def test_exact_estimates_match_true(self):
        # deterministic kernel, zero noise: one sample per pair is exact
        inst = deterministic_instance()
        est = collect_uniform(inst, 1, RngHandle(0))
        pair = identify_basis_empirical(
            est, ConfidenceParams(epsilon=0.5, n0=10**8), gamma=inst.gamma,
            budgets=inst.budgets, init_dist=inst.init_dist, scale=inst.scale)
        true_pair = identify_basis_true(build_infinite_lp(inst))
        assert pair == true_pair

    def test_large_sample_matches_true(self):
        inst = make_separated_instance(seed=0)
        est = collect_uniform(inst, 32768, RngHandle(1))
        pair = identify_basis_empirical(
            est, ConfidenceParams(epsilon=0.3, n0=32768), gamma=inst.gamma,
            budgets=inst.budgets, init_dist=inst.init_dist, scale=inst.scale)
        assert pair == identify_basis_true(build_infinite_lp(inst))

    def test_tiny_sample_accepted_even_if_wrong(self):
        inst = unit_instance(seed=2, S=2, A=2, K=1, noise=0.3)
        est = collect_uniform(inst, 1, RngHandle(3))
        pair = identify_basis_empirical(
            est, ConfidenceParams(epsilon=0.1, n0=1), gamma=inst.gamma,
            budgets=inst.budgets, init_dist=inst.init_dist, scale=inst.scale)
        # no guarantee below the sample threshold; verification may fail
        verify_basis(build_infinite_lp(inst), pair)

    def test_sigma_margin_perturbation(self):
        # every submatrix tested in the row loop stays within ||E||_2 of the truth
        inst = make_separated_instance(seed=3)
        n0 = 4096
        est = collect_uniform(inst, n0, RngHandle(5))
        trace = []
        identify_basis_empirical(
            est, ConfidenceParams(epsilon=0.3, n0=n0), gamma=inst.gamma,
            budgets=inst.budgets, init_dist=inst.init_dist, scale=inst.scale,
            trace=trace)
        true_lp = build_infinite_lp(inst)
        emp_c = est.mean_costs.reshape(inst.num_constraints, -1)
        emp_b = np.kron(np.eye(4), np.ones((1, 4))) \
            - inst.gamma * est.transition_freq().transpose(2, 0, 1).reshape(4, 16)
        checked = 0
        for event in trace:
            if event["phase"] != "row" or "rows" not in event:
                continue
            j1, j2 = event["rows"]
            cols = list(event["cols"])
            sub_emp = np.vstack([emp_c[np.ix_(list(j1), cols)],
                                 emp_b[np.ix_(list(j2), cols)]])
            sub_true = np.vstack([true_lp.cost_matrix[np.ix_(list(j1), cols)],
                                  true_lp.flow_matrix[np.ix_(list(j2), cols)]])
            err_norm = np.linalg.norm(sub_emp - sub_true, 2)
            assert abs(event["sigma"] - smallest_singular_value(sub_true)) <= err_norm + 1e-10
            checked += 1
        assert checked > 0


class TestDoublingDriver:
    def test_agreement_and_budget(self):
        inst = make_separated_instance(seed=1)
        res = identify_basis_doubling(inst, RngHandle(11), epsilon=0.3,
                                      n0_start=16384, sample_budget=2**20)
        assert res.converged
        assert res.samples_used <= 2**20
        assert res.basis == identify_basis_true(build_infinite_lp(inst))

    def test_budget_exhaustion_flagged(self):
        inst = unit_instance(seed=4, S=3, A=3, K=1, noise=0.3)
        res = identify_basis_doubling(inst, RngHandle(2), epsilon=0.1,
                                      n0_start=4, sample_budget=200)
        assert not res.converged
        assert res.basis is not None


class TestVerifyBasis:
    def test_true_output_passes(self, small_instance):
        lp = build_infinite_lp(small_instance)
        assert verify_basis(lp, identify_basis_true(lp)).passed

    def test_swapped_zero_column_fails_positivity(self):
        lp = build_infinite_lp(unit_instance(seed=12, S=2, A=2, K=0))
        basis = identify_basis_true(lp)
        sol = solve_restricted_primal(lp)
        zero_cols = [i for i in range(lp.num_cols) if sol.q[i] <= 1e-9
                     and i not in basis.cols]
        swapped = BasisPair(cols=tuple(sorted((set(basis.cols) - {basis.cols[0]})
                                              | {zero_cols[0]})),
                            rows_cost=basis.rows_cost, rows_flow=basis.rows_flow)
        report = verify_basis(lp, swapped)
        assert not report.passed

    def test_cardinality_mismatch_fails(self):
        lp = build_infinite_lp(unit_instance(seed=13, S=2, A=2, K=1))
        basis = identify_basis_true(lp)
        bad = BasisPair(cols=basis.cols, rows_cost=basis.rows_cost,
                        rows_flow=basis.rows_flow[:-1])
        report = verify_basis(lp, bad)
        assert not report.passed
        assert "cardinality" in report.reason

    def test_redundant_row_swap_fails(self):
        inst = unit_instance(seed=14, S=3, A=2, K=2)
        lp = build_infinite_lp(inst)
        basis = identify_basis_true(lp)
        sol = solve_restricted_primal(lp)
        slack_rows = [k for k in range(lp.num_cost_rows)
                      if lp.cost_matrix[k] @ sol.q < lp.budgets[k] - 1e-6
                      and k not in basis.rows_cost]
        if not slack_rows or not basis.rows_flow:
            pytest.skip("instance lacks a slack row to swap in")
        bad = BasisPair(cols=basis.cols,
                        rows_cost=tuple(sorted(basis.rows_cost + (slack_rows[0],))),
                        rows_flow=basis.rows_flow[:-1])
        report = verify_basis(lp, bad)
        assert not report.passed


class TestHardnessConstants:
    def test_reward_gap_single_state(self):
        g = 0.5
        lp = build_infinite_lp(one_state_two_actions(r1=0.3, r2=0.3 + g))
        hc = hardness_constants(lp)
        assert hc.delta1 == pytest.approx(g, abs=1e-9)
        assert hc.exhaustive

    def test_sigma_star_unconstrained_bound(self):
        # with no cost rows, sigma* is at least 1 - gamma
        for seed in (1, 2, 3):
            inst = unit_instance(seed=seed, K=0, gamma=0.7)
            lp = build_infinite_lp(inst)
            hc = hardness_constants(lp)
            assert hc.sigma_star >= (1 - inst.gamma) - 1e-9

    def test_sigma0_cross_checked_with_svd(self):
        inst = unit_instance(seed=5, S=2, A=2, K=0)
        lp = build_infinite_lp(inst)
        basis = identify_basis_true(lp)
        hc = hardness_constants(lp)
        direct = np.linalg.svd(basis.matrix(lp), compute_uv=False)[-1]
        assert hc.sigma_star == pytest.approx(direct, rel=1e-9)
        assert hc.sigma0 <= hc.sigma_star + 1e-12

    def test_non_exhaustive_flag(self):
        lp = build_infinite_lp(unit_instance(seed=6, S=3, A=3, K=1))
        hc = hardness_constants(lp, limit=3)
        assert not hc.exhaustive


def test_agreement_at_scale_with_theorem_condition():
    # doubling until rad <= min(delta1, delta2, sigma0) / 8 recovers the true
    # basis on at least 18 of 20 separated instances
    matches = 0
    for seed in range(20):
        inst = make_separated_instance(seed=seed)
        lp = build_infinite_lp(inst)
        true_basis = identify_basis_true(lp)
        hc = hardness_constants(lp)
        target = min(hc.delta1, hc.delta2, hc.sigma0) / 8.0
        eps = 0.3
        n0 = 256
        while rad(n0, eps) * inst.scale > target and n0 < 2**17:
            n0 *= 2
        est = collect_uniform(inst, n0, RngHandle(40_000 + seed))
        pair = identify_basis_empirical(
            est, ConfidenceParams(epsilon=eps, n0=n0), gamma=inst.gamma,
            budgets=inst.budgets, init_dist=inst.init_dist, scale=inst.scale)
        matches += pair == true_basis
    assert matches >= 18


def test_basis_json_export():
    lp = build_infinite_lp(unit_instance(seed=7, S=2, A=2, K=1))
    basis = identify_basis_true(lp)
    import json
    doc = json.loads(export_basis_json(lp, basis))
    assert set(doc) == {"cols", "rows_cost", "rows_flow"}
    assert all(len(pair) == 2 for pair in doc["cols"])
