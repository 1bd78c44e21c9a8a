"""Volume-constrained, pressure-stabilized nonlocal Stokes system on a point cloud.

Unknowns are ordered ``[u_1 on interior, ..., u_n on interior, p on all points, lambda]``.
Layer velocities are not unknowns: they are identically zero.  Each equation is
multiplied by its point's weight ``V_i`` and the momentum rows are negated, which
turns the discrete system into a symmetric indefinite one::

    [ -V L_II       V G_I.      0 ] [u]   [ -V (M f)_I ]
    [ (V G_I.)^T    V Lbar      V ] [p] = [     0      ]
    [    0          V^T         0 ] [l]   [     0      ]

The middle row is ``V_i * (-(D u)_i + (Lbar p)_i + lambda)``; ``(V G)^T = -V D`` holds
exactly because Grad and Div share their pair coefficients.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DegeneratePartitionError, PointCloud
from .kernels import ScaledKernel
from .operators import OperatorConfigError, OperatorSet, assemble_operators

log = logging.getLogger(__name__)

# Fill-in of the dense-stencil factorization grows roughly like size^2.
DIRECT_MAX_UNKNOWNS = 8_000


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


@dataclass
class SolverOptions:
    method: str = "auto"  # "direct", "krylov" or "auto"
    rtol: float = 1e-10
    max_iter: int = 20_000


@dataclass(eq=False)
class NonlocalStokesProblem:
    cloud: PointCloud
    kernel: ScaledKernel
    f: np.ndarray  # (N, n) forcing samples at every point
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).reshape(len(self.cloud), self.cloud.dim)
        if not np.all(np.isfinite(self.f)):
            raise ValueError("forcing has non-finite samples")


@dataclass(eq=False)
class AssembledSystem:
    ops: OperatorSet
    interior: np.ndarray
    rhs: np.ndarray
    Auu: sp.csr_matrix  # -V_I L_II, shared by every velocity component
    Aup: tuple  # V_I G_k[I, :], one per component
    App: sp.csr_matrix  # V Lbar
    constraint: np.ndarray  # V
    forcing: np.ndarray
    _matrix: sp.csr_matrix | None = None

    @property
    def dim(self) -> int:
        return self.ops.cloud.dim

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_points(self) -> int:
        return len(self.ops.cloud)

    @property
    def size(self) -> int:
        return self.dim * self.n_interior + self.n_points + 1

    def split(self, x: np.ndarray):
        """Unknown vector -> (u on all points (N, n), p (N,), lambda)."""
        n, m, N = self.dim, self.n_interior, self.n_points
        u = np.zeros((N, n))
        u[self.interior] = x[: n * m].reshape(n, m).T
        return u, x[n * m : n * m + N].copy(), float(x[-1])

    def join(self, u: np.ndarray, p: np.ndarray, lam: float) -> np.ndarray:
        return np.concatenate([u[self.interior].T.ravel(), p, [lam]])

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            n = self.dim
            blocks = [[None] * (n + 2) for _ in range(n + 2)]
            for k in range(n):
                blocks[k][k] = self.Auu
                blocks[k][n] = self.Aup[k]
                blocks[n][k] = self.Aup[k].T
            c = sp.csr_matrix(self.constraint.reshape(-1, 1))
            blocks[n][n] = self.App
            blocks[n][n + 1] = c
            blocks[n + 1][n] = c.T
            blocks[n + 1][n + 1] = sp.csr_matrix((1, 1))
            self._matrix = sp.bmat(blocks, format="csr")
        return self._matrix

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n, m, N = self.dim, self.n_interior, self.n_points
        uu = x[: n * m].reshape(n, m)
        p = x[n * m : n * m + N]
        lam = x[-1]
        out = np.empty_like(x)
        pp = self.App @ p + self.constraint * lam
        for k in range(n):
            out[k * m : (k + 1) * m] = self.Auu @ uu[k] + self.Aup[k] @ p
            pp += self.Aup[k].T @ uu[k]
        out[n * m : n * m + N] = pp
        out[-1] = self.constraint @ p
        return out

    def operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.size, self.size), matvec=self.matvec, dtype=float)

    def raw_residual(self, u: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residuals of the unscaled point equations (momentum on interior, continuity everywhere)."""
        ops = self.ops
        Mf = ops.mollify @ self.forcing
        mom = ops.apply_lap(u) - ops.apply_grad(p) - Mf
        cont = -ops.apply_div(u) + ops.stab @ p
        return mom[self.interior], cont


@dataclass
class Solution:
    u: np.ndarray
    p: np.ndarray
    lam: float
    residual: float
    method: str
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    energy_gap: float = float("nan")
    timings: dict = field(default_factory=dict)


def assemble_system(problem: NonlocalStokesProblem) -> AssembledSystem:
    cloud, kernel = problem.cloud, problem.kernel
    if cloud.tags is None:
        raise OperatorConfigError("cloud must be partitioned before assembly")
    interior = cloud.interior
    if len(interior) == 0:
        raise DegeneratePartitionError("no interior points: the momentum block is empty")
    ops = assemble_operators(cloud, kernel)
    V = cloud.weights
    VI = sp.diags(V[interior])
    Auu = (-(VI @ ops.lap[interior][:, interior])).tocsr()
    Aup = tuple((VI @ g[interior]).tocsr() for g in ops.grad)
    App = (sp.diags(V) @ ops.stab).tocsr()
    Mf = ops.mollify @ problem.f
    n, m, N = cloud.dim, len(interior), len(cloud)
    rhs = np.zeros(n * m + N + 1)
    for k in range(n):
        rhs[k * m : (k + 1) * m] = -V[interior] * Mf[interior, k]
    return AssembledSystem(ops, interior, rhs, Auu, Aup, App, V.copy(), problem.f)


def _block_preconditioner(system: AssembledSystem) -> spla.LinearOperator:
    """SPD block-diagonal preconditioner: Jacobi on velocity, weight (mass) scaling on pressure."""
    n, m = system.dim, system.n_interior
    dinv = np.concatenate([1.0 / system.Auu.diagonal()] * n)
    V = system.constraint
    pinv = 1.0 / V
    linv = 1.0 / V.sum()

    def apply(x):
        x = np.asarray(x).ravel()
        return np.concatenate([dinv * x[: n * m], pinv * x[n * m : -1], [linv * x[-1]]])

    return spla.LinearOperator((system.size, system.size), matvec=apply, dtype=float)


def solve(system: AssembledSystem, method: str = "auto", rtol: float = 1e-10, max_iter: int = 20_000) -> Solution:
    if method == "auto":
        method = "direct" if system.size <= DIRECT_MAX_UNKNOWNS else "krylov"
    b = system.rhs
    bnorm = np.linalg.norm(b)
    t0 = time.perf_counter()
    history: list[float] = []
    iterations = 0
    if method == "direct":
        try:
            lu = spla.splu(system.matrix.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(b)
        r = np.linalg.norm(system.matvec(x) - b)
        if bnorm > 0 and r > 1e-10 * bnorm:
            # one step of iterative refinement
            x += lu.solve(b - system.matvec(x))
            r = np.linalg.norm(system.matvec(x) - b)
        history.append(r)
    elif method == "krylov":
        x = np.zeros_like(b)
        if bnorm == 0.0:
            r = 0.0
        else:
            A = system.operator()
            M = _block_preconditioner(system)
            r = np.inf
            inner_tol = rtol
            while iterations < max_iter:
                count = [0]

                def cb(_xk):
                    count[0] += 1

                x, _info = spla.minres(A, b, x0=x, rtol=inner_tol, maxiter=max_iter - iterations, M=M, callback=cb)
                iterations += count[0]
                r = np.linalg.norm(system.matvec(x) - b)
                history.append(r / bnorm)
                log.debug("minres pass: %d its, rel residual %.3e", count[0], r / bnorm)
                if r <= rtol * bnorm or count[0] == 0:
                    break
                # the internal stopping test is a backward-error estimate; tighten and restart
                inner_tol = max(inner_tol * 0.1, 1e-16)
            if not r <= rtol * bnorm:
                raise SolverError(
                    f"MINRES stopped at relative residual {r / bnorm:.3e} after {iterations} iterations",
                    history,
                )
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("solution contains non-finite values", history)
    u, p, lam = system.split(x)
    rel = r / bnorm if bnorm > 0 else r
    sol = Solution(u, p, lam, float(rel), method, iterations, history)
    sol.timings["solve"] = time.perf_counter() - t0
    sol.energy_gap = energy_identity_gap(sol, system)
    return sol


def solve_problem(problem: NonlocalStokesProblem) -> tuple[Solution, AssembledSystem]:
    t0 = time.perf_counter()
    system = assemble_system(problem)
    t_asm = time.perf_counter() - t0
    o = problem.options
    sol = solve(system, o.method, o.rtol, o.max_iter)
    sol.timings["assemble"] = t_asm
    return sol, system


def _pair_energy(matrix: sp.csr_matrix, V: np.ndarray, w: np.ndarray) -> float:
    """sum_{i != j} matrix_ij V_i |w_i - w_j|^2 for a matrix whose off-diagonal is kernel * V_j."""
    m = matrix.tocoo()
    off = m.row != m.col
    i, j, a = m.row[off], m.col[off], m.data[off]
    diff = w[i] - w[j]
    sq = np.einsum("ij,ij->i", diff, diff) if diff.ndim == 2 else diff * diff
    return float(np.sum(a * V[i] * sq))


def velocity_energy(ops: OperatorSet, u: np.ndarray) -> float:
    """(1/delta^2) sum_ij R(x_i,x_j) |u_i - u_j|^2 V_i V_j."""
    return _pair_energy(ops.lap, ops.cloud.weights, np.asarray(u))


def pressure_energy(ops: OperatorSet, p: np.ndarray) -> float:
    """sum_ij Rbar(x_i,x_j) (p_i - p_j)^2 V_i V_j."""
    return _pair_energy(ops.stab, ops.cloud.weights, np.asarray(p))


def energy_identity_gap(solution: Solution, system: AssembledSystem) -> float:
    """|E_u + E_p + 2 <M f, u>_V| / max(E_u, eps); vanishes for exact discrete solutions."""
    ops = system.ops
    V = ops.cloud.weights
    Eu = velocity_energy(ops, solution.u)
    Ep = pressure_energy(ops, solution.p)
    Mf = ops.mollify @ system.forcing
    work = float(np.sum(V[:, None] * Mf * solution.u))
    scale = max(Eu, np.finfo(float).tiny)
    if Eu == 0.0 and Ep == 0.0 and work == 0.0:
        return 0.0
    return abs(Eu + Ep + 2.0 * work) / scale


def weighted_norm(V: np.ndarray, w: np.ndarray) -> float:
    w = np.asarray(w)
    sq = np.einsum("ij,ij->i", w, w) if w.ndim == 2 else w * w
    return float(np.sqrt(np.sum(V * sq)))


def stability_ratio(solution: Solution, problem: NonlocalStokesProblem) -> float:
    """(|u|_V + |p|_V) / |f|_V with weighted discrete L2 norms."""
    V = problem.cloud.weights
    fn = weighted_norm(V, problem.f)
    if fn == 0.0:
        raise ValueError("stability ratio undefined for zero forcing")
    return (weighted_norm(V, solution.u) + weighted_norm(V, solution.p)) / fn
