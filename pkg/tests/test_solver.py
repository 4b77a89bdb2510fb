import numpy as np
import pytest
import scipy.sparse as sp

from mdgbrinkman import problems as pb
from mdgbrinkman.assembly import assemble_system
from mdgbrinkman.mesh import build_uniform_unit_square
from mdgbrinkman.postprocess import compute_errors, kappa_tilde
from mdgbrinkman.solver import (SolverError, block_inverse, cholmod, iteration_cap, minres_preconditioner, solve,
                                solve_problem)
from mdgbrinkman.spaces import interpolate


def patch_problem():
    """kappa = 1, u = (1, 0), p = 0, sigma = 0, so f = (1, 0) and g = (1, 0)."""
    return pb.custom(pb.KappaInvField.constant(1.0), f=(1.0, 0.0), g=(1.0, 0.0))


def example1_system(k=0, n=8, inv_kappa=1.0):
    prob = pb.example1(inv_kappa)
    return assemble_system(build_uniform_unit_square(n), k, prob.kappa_inv, prob.f, prob.g)[2]


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("n", [2, 4])
def test_patch_solution_satisfies_discrete_equations(k, n):
    # residual substitution: the exact fields are discrete, so they solve the system
    prob = patch_problem()
    mesh = build_uniform_unit_square(n)
    _, v_space, system = assemble_system(mesh, k, prob.kappa_inv, prob.f, prob.g)
    u = interpolate(v_space, lambda x, y: np.stack([1 + 0 * x, 0 * y], -1)).values
    x = np.concatenate([np.zeros(system.n_sigma), u, [0.0]])
    assert np.linalg.norm(system.apply(x) - system.rhs) <= 1e-13 * np.linalg.norm(system.rhs)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("n", [2, 4])
def test_patch_test(k, n):
    sol = solve_problem(patch_problem(), build_uniform_unit_square(n), k)
    u = sol.u.evaluate(np.array([[0.2, 0.2], [0.6, 0.3], [0.1, 0.8]]))["values"]
    np.testing.assert_allclose(u, np.broadcast_to([1.0, 0.0], u.shape), atol=1e-10)
    assert np.abs(sol.sigma.values).max() <= 1e-10


def test_zero_rhs_gives_zero_solution():
    prob = pb.custom(pb.KappaInvField.constant(3.0))
    sol = solve_problem(prob, build_uniform_unit_square(3), 1)
    assert not sol.sigma.values.any() and not sol.u.values.any() and sol.multiplier == 0.0


def test_example1_table_value():
    prob = pb.example1(1.0)
    mesh = build_uniform_unit_square(4)
    sol = solve_problem(prob, mesh, 0)
    err = compute_errors(sol, prob.exact, kappa_tilde(prob.kappa_inv, mesh))
    assert err.u_l2 == pytest.approx(3.18199e-03, rel=0.25)


@pytest.mark.parametrize("k", [0, 1])
def test_residual_contract_and_constraint(k):
    system = example1_system(k, 8, 1e3)
    sigma, u, lam, report = solve(system, tol=1e-10)
    x = np.concatenate([sigma, u, [lam]])
    assert np.linalg.norm(system.apply(x) - system.rhs) <= 1e-10 * np.linalg.norm(system.rhs)
    assert report.relative_residual <= 1e-10 and report.iterations == 0 and report.method == "direct"
    assert abs(system.c @ sigma) <= 1e-9 * np.linalg.norm(sigma)
    assert abs(lam) <= 1e-8 * np.linalg.norm(system.rhs)


def test_minres_matches_direct():
    system = example1_system(0, 8)
    sd, ud, _, _ = solve(system)
    sm, um, lam, report = solve(system, method="minres", tol=1e-12)
    x = np.concatenate([sd, ud])
    assert np.linalg.norm(np.concatenate([sm, um]) - x) <= 1e-8 * np.linalg.norm(x)
    assert report.iterations > 0 and report.relative_residual <= 1e-12
    assert abs(lam) <= 1e-8 * np.linalg.norm(system.rhs)


def test_block_preconditioner_needs_fewer_iterations():
    system = example1_system(0, 8)
    counts = {}
    for kind in ("block", "identity"):
        try:
            counts[kind] = solve(system, method="minres", tol=1e-8, preconditioner=kind)[3].iterations
        except SolverError:
            counts[kind] = iteration_cap(system.size)
    assert counts["block"] <= counts["identity"]
    assert counts["block"] <= 60


def test_identity_preconditioner_is_plain_minres():
    system = example1_system(0, 4)
    P = minres_preconditioner(system, "identity")
    x = np.random.default_rng(0).standard_normal(system.size)
    np.testing.assert_array_equal(P @ x, x)


@pytest.mark.parametrize("kind", ["block", "cell"])
def test_preconditioner_is_spd(kind):
    system = example1_system(1, 2)
    P = minres_preconditioner(system, kind) @ np.eye(system.size)
    assert np.allclose(P, P.T, atol=1e-10 * np.abs(P).max())
    assert np.linalg.eigvalsh(0.5 * (P + P.T)).min() > 0


def test_minres_failure_reports_history():
    system = example1_system(0, 4)
    with pytest.raises(SolverError) as info:
        solve(system, method="minres", preconditioner="identity", maxiter=3)
    assert info.value.residual_history and info.value.residual_history[-1] > 1e-10


@pytest.mark.skipif(cholmod is None, reason="needs cvxopt")
def test_backends_agree():
    system = example1_system(1, 4, 1e-3)
    a = np.concatenate(solve(system, backend="cholmod")[:2])
    b = np.concatenate(solve(system, backend="superlu")[:2])
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)


def test_bad_arguments():
    system = example1_system(0, 2)
    with pytest.raises(ValueError):
        solve(system, tol=0.0)
    with pytest.raises(ValueError):
        solve(system, method="cg")
    with pytest.raises(ValueError):
        minres_preconditioner(system, "jacobi")
    with pytest.raises(ValueError):
        solve(system, backend="magic")
    with pytest.raises(ValueError):
        solve_problem(pb.example1(), build_uniform_unit_square(2), 0, penalty_scaling="sometimes")


def test_block_inverse():
    rng = np.random.default_rng(5)
    blocks = [rng.standard_normal((3, 3)) + 4 * np.eye(3) for _ in range(4)]
    blocks = [b @ b.T for b in blocks]
    M = sp.block_diag(blocks, format="csr")
    np.testing.assert_allclose((block_inverse(M, 3) @ M).toarray(), np.eye(12), atol=1e-12)
    with pytest.raises(ValueError):
        block_inverse(M, 5)


def test_deterministic():
    system = example1_system(1, 4)
    a, b = solve(system), solve(system)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_viscosity_scaling_of_solution():
    mesh = build_uniform_unit_square(4)
    prob = pb.example2(0.1)
    s2 = solve_problem(prob, mesh, 1, penalty_scaling="scaled")
    assert s2.nu == 0.1
    # the scaled system sees f / nu; sigma_h comes back multiplied by nu
    scaled = pb.nu_scale(prob)
    _, _, system = assemble_system(mesh, 1, scaled.kappa_inv, scaled.f, scaled.g)
    sigma, u, _, _ = solve(system)
    np.testing.assert_allclose(s2.sigma.values, 0.1 * sigma, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s2.u.values, u, rtol=1e-12, atol=1e-14)


def test_physical_penalty_equals_scaled_penalty_with_nu_eta():
    mesh = build_uniform_unit_square(4)
    prob = pb.example2(0.01)
    a = solve_problem(prob, mesh, 1, eta=1.0)
    b = solve_problem(prob, mesh, 1, eta=0.01, penalty_scaling="scaled")
    np.testing.assert_allclose(a.u.values, b.u.values, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a.sigma.values, b.sigma.values, rtol=1e-12, atol=1e-14)
