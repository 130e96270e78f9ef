"""Periodic torus solves: closed forms, the additive constant, and guards.

The 1-D problem with A = [[1]] linearizes exactly: the scheme solves
1 + delta2 v = f + sigma node by node, so mean-zero smooth data gives
sigma = 0 and v equal to the double antiderivative up to O(h^2).
"""
import numpy as np
import pytest

from mongeampere import (
    InfeasibleProblem,
    InvalidArgument,
    NonConvergence,
    PeriodicField,
    PeriodicProblem,
    SolveOptions,
    make_torus,
    solve_periodic,
)
from mongeampere.periodic import (
    check_compatibility,
    compare_solutions,
    mollified_continuation,
    residual,
)


def cosine_problem(n_nodes):
    tor = make_torus((1.0,), (n_nodes,))
    x = tor.nodes()[0]
    f = PeriodicField(tor, 1.0 + 0.5 * np.cos(2 * np.pi * x))
    return PeriodicProblem(f, np.eye(1))


def checkerboard_problem(n_nodes):
    tor = make_torus((1.0, 1.0), (n_nodes, n_nodes))
    xx, yy = tor.nodes()
    parity = (np.floor(2 * xx) + np.floor(2 * yy)) % 2
    return PeriodicProblem(PeriodicField(tor, np.where(parity == 0, 0.5, 1.5)), np.eye(2))


def test_flat_rhs_is_solved_by_zero():
    tor = make_torus((1.0, 1.0), (16, 16))
    prob = PeriodicProblem(PeriodicField(tor, np.ones(tor.shape)), np.eye(2))
    v, sigma, rep = solve_periodic(prob)
    assert rep.iterations == 0
    assert abs(sigma) <= 1e-14
    assert np.abs(v.values).max() <= 1e-14


def test_cosine_matches_closed_form_at_second_order():
    errs = {}
    for n in (64, 128):
        prob = cosine_problem(n)
        v, sigma, rep = solve_periodic(prob)
        x = prob.f.lattice.nodes()[0]
        exact = -np.cos(2 * np.pi * x) / (8 * np.pi**2)
        exact -= exact.mean()
        errs[n] = np.abs(v.values - exact).max()
        assert abs(sigma) <= 1e-12
        assert rep.floored_nodes == 0
        assert rep.convexity_defect > 0
    assert errs[64] <= 1.05e-5
    assert 3.5 <= errs[64] / errs[128] <= 4.5


def test_constant_rhs_sigma_is_det_gap():
    # f constant c: v = 0, sigma = det A - c exactly.
    tor = make_torus((1.0, 1.0), (16, 16))
    prob = PeriodicProblem(PeriodicField(tor, np.full(tor.shape, 0.96)), np.eye(2))
    v, sigma, _ = solve_periodic(prob)
    assert sigma == pytest.approx(0.04, abs=1e-12)
    assert np.abs(v.values).max() <= 1e-12


def test_product_cosine_needs_no_constant():
    tor = make_torus((1.0, 1.0), (32, 32))
    xx, yy = tor.nodes()
    f = PeriodicField(
        tor, (1.0 + 0.5 * np.cos(2 * np.pi * xx)) * (1.0 + 0.5 * np.cos(2 * np.pi * yy))
    )
    _, sigma, rep = solve_periodic(PeriodicProblem(f, np.eye(2)))
    assert abs(sigma) <= 1e-12
    assert rep.residual_inf <= 1e-9


def test_checkerboard_sigma_stays_small():
    # Discontinuous f: sigma does not vanish on a fixed grid but stays
    # well inside the compatibility budget.
    _, sigma, rep = solve_periodic(checkerboard_problem(32))
    assert abs(sigma) <= 2e-2
    assert rep.residual_inf <= 2e-10  # tol is scaled by sup f = 1.5
    assert rep.floored_nodes == 0


class TestCompatibility:
    def test_within_limit_returns_mismatch(self):
        tor = make_torus((1.0,), (16,))
        f = PeriodicField(tor, np.full(16, 1.04))
        assert check_compatibility(f, np.eye(1)) == pytest.approx(0.04, abs=1e-12)

    def test_beyond_limit_raises(self):
        tor = make_torus((1.0,), (16,))
        f = PeriodicField(tor, np.full(16, 1.08))
        with pytest.raises(InfeasibleProblem):
            check_compatibility(f, np.eye(1))
        with pytest.raises(InfeasibleProblem):
            solve_periodic(PeriodicProblem(f, np.eye(1)))
        # A wider explicit limit admits the same data.
        assert check_compatibility(f, np.eye(1), limit=0.1) == pytest.approx(0.08, abs=1e-12)

    def test_nonpositive_det_rejected(self):
        tor = make_torus((1.0,), (16,))
        f = PeriodicField(tor, np.ones(16))
        with pytest.raises(InfeasibleProblem):
            check_compatibility(f, -np.eye(1))


def test_anchor_modes():
    prob = cosine_problem(64)
    v_mean, _, _ = solve_periodic(prob, SolveOptions(anchor="mean"))
    assert abs(v_mean.values.mean()) <= 1e-12
    v_org, _, _ = solve_periodic(prob, SolveOptions(anchor="origin", anchor_value=0.7))
    assert v_org.values.flat[0] == pytest.approx(0.7, abs=1e-12)
    # Same solution modulo the constant.
    assert compare_solutions(v_mean, v_org) <= 1e-10


def test_compare_solutions_rejects_lattice_mismatch():
    a = PeriodicField(make_torus((1.0,), (8,)), np.zeros(8))
    b = PeriodicField(make_torus((1.0,), (16,)), np.zeros(16))
    with pytest.raises(InvalidArgument):
        compare_solutions(a, b)


def test_independent_residual_agrees_with_report():
    prob = cosine_problem(64)
    v, sigma, rep = solve_periodic(prob)
    r = residual(prob, v, sigma)
    assert np.abs(r.values).max() <= 1e-12
    assert np.abs(r.values).max() == pytest.approx(rep.residual_inf, abs=1e-13)


def test_continuation_converges_through_schedule():
    prob = checkerboard_problem(32)
    v_direct, sig_direct, _ = solve_periodic(prob)
    v, sigma, rep = mollified_continuation(prob, [0.25, 0.125])
    assert [row["epsilon"] for row in rep.continuation] == [0.25, 0.125]
    dists = [row["distance_to_final"] for row in rep.continuation]
    assert dists[1] < dists[0]
    assert compare_solutions(v, v_direct) <= 1e-10
    assert abs(sigma - sig_direct) <= 1e-10


def test_continuation_rejects_flat_schedule():
    with pytest.raises(InvalidArgument):
        mollified_continuation(checkerboard_problem(16), [0.25, 0.25])


def test_nonconvergence_carries_best_iterate():
    prob = cosine_problem(64)
    with pytest.raises(NonConvergence) as excinfo:
        solve_periodic(prob, SolveOptions(max_newton=1))
    exc = excinfo.value
    best_v, best_sigma = exc.best
    assert isinstance(best_v, PeriodicField)
    assert isinstance(best_sigma, float)
    assert exc.iterations == 1
    assert exc.residual_inf > 0


def test_initial_guess_must_share_lattice():
    prob = cosine_problem(64)
    wrong = PeriodicField(make_torus((1.0,), (32,)), np.zeros(32))
    with pytest.raises(InvalidArgument):
        solve_periodic(prob, SolveOptions(initial=wrong))


def test_warm_start_from_own_solution_is_immediate():
    prob = cosine_problem(64)
    v, sigma, _ = solve_periodic(prob)
    _, _, rep = solve_periodic(prob, SolveOptions(initial=v, initial_sigma=sigma))
    assert rep.iterations == 0


class TestProblemValidation:
    def setup_method(self):
        self.tor = make_torus((1.0, 1.0), (8, 8))
        self.f = PeriodicField(self.tor, np.ones(self.tor.shape))

    def test_rejects_asymmetric_a(self):
        with pytest.raises(InvalidArgument):
            PeriodicProblem(self.f, np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite_a(self):
        with pytest.raises(InfeasibleProblem):
            PeriodicProblem(self.f, np.diag([1.0, -1.0]))

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            PeriodicProblem(self.f, np.eye(3))

    def test_rejects_nonpositive_f(self):
        vals = np.ones(self.tor.shape)
        vals[0, 0] = 0.0
        with pytest.raises(InfeasibleProblem):
            PeriodicProblem(PeriodicField(self.tor, vals), np.eye(2))
