"""Linear solvers for the constrained saddle-point system.

The direct path eliminates the cellwise velocity mass ``S`` and factors the
stress operator ``K = A + B^T S^-1 B``. ``K`` is positive semidefinite with the
global identity tensor as its only null vector; the multiplier and the trace
constraint fix that direction exactly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem

try:
    from cvxopt import cholmod, matrix as cvx_matrix, spmatrix as cvx_spmatrix
except ImportError:  # pragma: no cover - exercised only without cvxopt
    cholmod = None

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


@dataclass
class SolveReport:
    method: str
    relative_residual: float
    iterations: int
    wall_time: float
    residual_history: list = field(default_factory=list)


def iteration_cap(n: int) -> int:
    return int(10 * np.sqrt(n)) + 1000


def block_inverse(M, block_size: int) -> sp.csr_matrix:
    """Inverse of a block-diagonal matrix with square blocks of ``block_size``."""
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if block_size <= 0 or n % block_size:
        raise ValueError(f"block size {block_size} does not divide {n}")
    idx = np.arange(n).reshape(-1, block_size)
    inv = np.linalg.inv(_gather_blocks(M, idx))
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    rows = np.broadcast_to(idx[:, :, None], inv.shape)
    cols = np.broadcast_to(idx[:, None, :], inv.shape)
    return sp.csr_matrix((inv.ravel(), (rows.ravel(), cols.ravel())), shape=M.shape)


def _gather_blocks(M: sp.csr_matrix, idx: np.ndarray) -> np.ndarray:
    coo = M.tocoo()
    b = idx.shape[1]
    keep = coo.row // b == coo.col // b
    out = np.zeros(idx.shape + (b,))
    np.add.at(out, (coo.row[keep] // b, coo.row[keep] % b, coo.col[keep] % b), coo.data[keep])
    return out


def _stress_operator(system: SaddleSystem):
    inv_S = block_inverse(system.S, system.u_block)
    K = (system.A + system.B.T @ inv_S @ system.B).tocsc()
    return K, inv_S


def minres_preconditioner(system: SaddleSystem, kind: str = "block", backend: str | None = None):
    """SPD block-diagonal preconditioner, applied as its inverse.

    ``"block"``: the factored stress operator ``A + B^T S^-1 B`` (null
    direction pinned), ``S^-1`` and the scalar Schur complement of the
    constraint. ``"cell"``: the same with only the per-cell diagonal blocks of
    the stress operator. ``"identity"``: no preconditioning.
    """
    n = system.size
    if kind == "identity":
        return spla.LinearOperator((n, n), matvec=lambda x: x, dtype=float)
    if kind == "block":
        K_solve, inv_S = _pinned_stress_factor(system, backend)
    elif kind == "cell":
        K, inv_S = _stress_operator(system)
        blocks = _gather_blocks(K.tocsr(), np.arange(system.n_sigma).reshape(-1, system.sigma_block))
        # cells without interior edges leave the identity direction singular
        blocks += 1e-12 * np.abs(blocks).max() * np.eye(system.sigma_block)
        inv_K = block_inverse(sp.block_diag(list(blocks), format="csr"), system.sigma_block)
        K_solve = inv_K.__matmul__
    else:
        raise ValueError(f"unknown preconditioner {kind!r}")
    schur = float(system.c @ K_solve(system.c)) or 1.0
    ns, nu = system.n_sigma, system.n_u

    def apply(x):
        x = np.ravel(x)
        return np.concatenate([K_solve(x[:ns]), inv_S @ x[ns:ns + nu], x[-1:] / schur])
    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def _relative_residual(system, x, rhs):
    nrm = np.linalg.norm(rhs)
    r = np.linalg.norm(system.apply(x) - rhs)
    return r / nrm if nrm > 0 else r


def _to_cholmod(K_lower):
    K_lower = sp.coo_matrix(K_lower)
    return cvx_spmatrix(cvx_matrix(K_lower.data), cvx_matrix(K_lower.row.astype(np.int64)),
                        cvx_matrix(K_lower.col.astype(np.int64)), size=K_lower.shape)


def _cholmod_solver(Kc):
    F = cholmod.symbolic(Kc)
    cholmod.numeric(Kc, F)

    def apply(b):
        x = cvx_matrix(np.array(b, dtype=float))
        cholmod.solve(F, x)
        return np.array(x).ravel()
    return apply


def factor_spd(K_lower, backend: str = "cholmod"):
    """Factor a sparse SPD matrix given by its lower triangle; returns a solve callable."""
    if backend == "cholmod":
        if cholmod is None:
            raise RuntimeError("backend 'cholmod' needs cvxopt")
        return _cholmod_solver(_to_cholmod(K_lower))
    if backend == "superlu":
        K_lower = sp.csc_matrix(K_lower)
        full = (K_lower + sp.tril(K_lower, -1).T).tocsc()
        lu = spla.splu(full, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        return lu.solve
    raise ValueError(f"unknown factorization backend {backend!r}")


def _pinned_stress_factor(system: SaddleSystem, backend: str | None = None):
    """Cholesky solve of ``A + B^T S^-1 B`` with one dof pinned along its
    null vector, and ``S^-1``. The pinned operator is SPD and reproduces
    ``K sigma = r`` whenever ``z.r = 0``."""
    inv_S = block_inverse(system.S, system.u_block)
    K = sp.tril(system.A + system.B.T @ inv_S @ system.B, format="coo")
    j = int(np.argmax(np.abs(system.identity)))
    on_diag = K.row == K.col
    K.data[on_diag & (K.row == j)] += float(np.mean(K.data[on_diag]))
    backend = backend or ("cholmod" if cholmod is not None else "superlu")
    if backend == "cholmod" and cholmod is not None:
        # hand CHOLMOD its own copy and release ours before factoring
        Kc = _to_cholmod(K)
        del K
        return _cholmod_solver(Kc), inv_S
    return factor_spd(K, backend), inv_S


class _ReducedFactor:
    """Factorization of the stress operator with the null direction pinned."""

    def __init__(self, system: SaddleSystem, backend: str | None = None):
        self.system = system
        self._solve, self.inv_S = _pinned_stress_factor(system, backend)

    def apply(self, r_sigma, r_u, r_lam):
        """Solve ``M x = (r_sigma, r_u, r_lam)`` exactly up to rounding."""
        sys_, z, c = self.system, self.system.identity, self.system.c
        r = r_sigma + sys_.B.T @ (self.inv_S @ r_u)
        # testing with the identity tensor isolates the multiplier
        lam = float(z @ r) / float(z @ c)
        sigma = self._solve(r - lam * c)
        sigma += (r_lam - c @ sigma) / (c @ z) * z
        u = self.inv_S @ (sys_.B @ sigma - r_u)
        return np.concatenate([sigma, u, [lam]])


def _solve_direct(system: SaddleSystem, rhs, tol, history, backend=None, max_refine=6):
    factor = _ReducedFactor(system, backend)
    ns, nu = system.n_sigma, system.n_u
    x = np.zeros_like(rhs)
    r = rhs.copy()
    for _ in range(max_refine + 1):
        x += factor.apply(r[:ns], r[ns:ns + nu], r[-1])
        r = rhs - system.apply(x)
        history.append(np.linalg.norm(r) / np.linalg.norm(rhs))
        stalled = len(history) > 1 and history[-1] > 0.5 * history[-2]
        if history[-1] <= 0.1 * tol or stalled:
            break
    return x


def solve(system: SaddleSystem, method: str = "direct", tol: float = 1e-10,
          preconditioner: str = "block", maxiter: int | None = None,
          backend: str | None = None):
    """Solve for stress coefficients, velocity coefficients and the multiplier.

    Returns ``(sigma, u, lam, report)``; raises :class:`SolverError` if the
    relative residual of the full system exceeds ``tol``. ``backend`` picks
    the sparse Cholesky used by the direct method (``"cholmod"`` when cvxopt
    is importable, else ``"superlu"``).
    """
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    rhs = system.rhs
    t0 = time.perf_counter()
    history: list[float] = []
    iterations = 0
    if not np.any(rhs):
        x = np.zeros_like(rhs)
    elif method == "direct":
        try:
            x = _solve_direct(system, rhs, tol, history, backend)
        except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    elif method == "minres":
        M = spla.LinearOperator((system.size, system.size), matvec=system.apply, dtype=float)
        P = minres_preconditioner(system, preconditioner, backend)
        cap = maxiter or iteration_cap(system.size)
        x = np.zeros_like(rhs)

        def count(_):
            nonlocal iterations
            iterations += 1

        # minres monitors the preconditioned residual; restart until the true one meets tol
        rtol = tol
        for _ in range(6):
            x, info = spla.minres(M, rhs, x0=x, M=P, rtol=rtol, maxiter=cap, callback=count)
            history.append(_relative_residual(system, x, rhs))
            if history[-1] <= tol or iterations >= cap:
                break
            rtol *= 0.1
        if history[-1] > tol:
            raise SolverError(f"MINRES did not reach {tol:.1e} in {iterations} iterations "
                              f"(relative residual {history[-1]:.3e})", history)
    else:
        raise ValueError(f"unknown solver method {method!r}")

    res = _relative_residual(system, x, rhs)
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"{method} solve left relative residual {res:.3e} > {tol:.1e}; "
                          "the discrete problem is well-posed, so this points at the assembly", history)
    report = SolveReport(method, res, iterations, time.perf_counter() - t0, history)
    log.debug("solve %s: n=%d residual=%.3e iterations=%d time=%.2fs",
              method, system.size, res, iterations, report.wall_time)
    return (*system.split(x), report)


@dataclass(eq=False)
class DiscreteSolution:
    """Solved fields in physical (unscaled) variables."""

    mesh: object
    k: int
    sigma: object          # FieldCoefficients, symmetric tensor of degree k+1
    u: object              # FieldCoefficients, vector of degree k
    multiplier: float
    nu: float
    eta: float
    report: SolveReport
    quad_degree: int       # rule used for the volume and edge integrals of the system


def solve_problem(problem, mesh, k: int, eta: float = 1.0, method: str = "direct",
                  tol: float = 1e-10, quad_degree: int | None = None,
                  penalty_scaling: str = "physical", **solver_options) -> DiscreteSolution:
    """Assemble and solve ``problem`` on ``mesh`` with the pair of degrees k+1 / k.

    The viscosity-free system is solved with ``f / nu``; the returned stress
    is multiplied back by ``nu``. With ``penalty_scaling="physical"`` the
    penalty ``eta / h_e`` acts on jumps of the physical stress, which puts
    ``nu * eta`` in front of the jumps of the scaled stress; ``"scaled"`` uses
    ``eta`` there unchanged. The two coincide for ``nu = 1``.
    """
    from .assembly import assemble_system
    from .problems import nu_scale
    from .spaces import FieldCoefficients

    if penalty_scaling not in ("physical", "scaled"):
        raise ValueError(f"unknown penalty scaling {penalty_scaling!r}")
    scaled = nu_scale(problem)
    quad_degree = quad_degree or 2 * (k + 2)
    eta_scaled = eta * scaled.nu if penalty_scaling == "physical" else eta
    sigma_space, v_space, system = assemble_system(mesh, k, scaled.kappa_inv, scaled.f, scaled.g,
                                                   eta=eta_scaled, quad_degree=quad_degree)
    sigma, u, lam, report = solve(system, method=method, tol=tol, **solver_options)
    return DiscreteSolution(mesh, k, FieldCoefficients(sigma_space, scaled.nu * sigma),
                            FieldCoefficients(v_space, u), lam, scaled.nu, eta, report, quad_degree)
