"""Invariant suites run by ``nlstokes check``: each returns a list of measured-vs-threshold rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .analysis import poincare_constant_pressure, poincare_constant_velocity
from .geometry import Domain, PointCloud, partition, sample_grid
from .kernels import (
    KernelProfile,
    KernelValidationError,
    make_kernel,
    mass,
    second_moment,
)
from .operators import OperatorSet, assemble_operators
from .system import NonlocalStokesProblem, SolverOptions, solve_problem, weighted_norm


@dataclass
class CheckRow:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""


def _le(name, measured, threshold, detail=""):
    return CheckRow(name, float(measured), float(threshold), bool(measured <= threshold), detail)


def _gt(name, measured, threshold, detail=""):
    return CheckRow(name, float(measured), float(threshold), bool(measured > threshold), detail)


def _lt(name, measured, threshold, detail=""):
    return CheckRow(name, float(measured), float(threshold), bool(measured < threshold), detail)


def _ge(name, measured, threshold, detail=""):
    return CheckRow(name, float(measured), float(threshold), bool(measured >= threshold), detail)


def kernel_suite(profile: KernelProfile | Exception, dims=(1, 2, 3), delta: float = 0.1) -> list[CheckRow]:
    if isinstance(profile, KernelValidationError):
        return [CheckRow(profile.assumption, float("nan"), 0.0, False, str(profile))]
    rows = []
    for n in dims:
        k = make_kernel(profile, delta, n)
        rows.append(_le(f"normalization n={n}", abs(mass(k) - 1.0), 1e-10, f"mass={mass(k):.12f}"))
        rows.append(_le(f"moment identity n={n}", abs(second_moment(k) - 1.0), 1e-10))
    r = np.linspace(0.0, 1.0, 201)
    e = 1e-6
    rr = np.clip(r, e, 1 - e)
    fd = (profile.Rbar(rr + e) - profile.Rbar(rr - e)) / (2 * e)
    rows.append(_le("Rbar' = -R", float(np.max(np.abs(fd + profile.R(rr)))), 1e-6))
    rows.append(_ge("nondegeneracy", float(np.min(profile.R(np.linspace(0, 0.5, 501)))), profile.gamma0))
    rows.append(_ge("positivity", float(np.min(profile.R(r))), 0.0))
    return rows


def adjointness_defect(ops: OperatorSet, v: np.ndarray, p: np.ndarray) -> float:
    """|<v, G p>_V + <D v, p>_V| / (|v|_V |p|_V |G|-scale); zero up to rounding."""
    V = ops.cloud.weights
    Gp = ops.apply_grad(p)
    Dv = ops.apply_div(v)
    a = float(np.sum(V[:, None] * v * Gp))
    b = float(np.sum(V * p * Dv))
    scale = float(np.sum(V[:, None] * np.abs(v) * np.abs(Gp))) + float(np.sum(V * np.abs(p) * np.abs(Dv)))
    return abs(a + b) / max(scale, np.finfo(float).tiny)


def symmetry_defect(ops: OperatorSet, matrix: sp.csr_matrix) -> float:
    W = (sp.diags(ops.cloud.weights) @ matrix).tocsr()
    diff = abs(W - W.T).max()
    return float(diff / abs(W).max())


def row_sum_defect(matrix: sp.csr_matrix) -> float:
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    scale = np.asarray(abs(matrix).sum(axis=1)).ravel()
    return float(np.max(np.abs(sums) / scale))


def quadratic_form_max(ops: OperatorSet, matrix: sp.csr_matrix, rng, trials: int = 200) -> float:
    V = ops.cloud.weights
    worst = -np.inf
    for _ in range(trials):
        w = rng.standard_normal(len(V))
        worst = max(worst, float(np.sum(V * w * (matrix @ w))))
    return worst


def interior_closure(cloud: PointCloud, ops: OperatorSet) -> float:
    """Largest signed distance among neighbors of interior rows (must be < 0)."""
    I = cloud.interior
    cols = ops.lap[I].indices
    return float(np.max(cloud.domain.signed_distance(cloud.points[np.unique(cols)])))


def operator_suite(cloud: PointCloud, ops: OperatorSet, seed: int = 0, pairs: int = 50,
                   quad_trials: int = 200) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    N, n = len(cloud), cloud.dim
    worst = 0.0
    for _ in range(pairs):
        worst = max(worst, adjointness_defect(ops, rng.standard_normal((N, n)), rng.standard_normal(N)))
    rows = [
        _le("adjointness <v,Gp> = -<Dv,p>", worst, 1e-12),
        _le("Lap row sums", row_sum_defect(ops.lap), 1e-12),
        _le("Stab row sums", row_sum_defect(ops.stab), 1e-12),
        _le("Lap weighted symmetry", symmetry_defect(ops, ops.lap), 1e-12),
        _le("Stab weighted symmetry", symmetry_defect(ops, ops.stab), 1e-12),
        _le("Lap semidefinite", quadratic_form_max(ops, ops.lap, rng, quad_trials), 1e-10),
        _le("Stab semidefinite", quadratic_form_max(ops, ops.stab, rng, quad_trials), 1e-10),
    ]
    if cloud.domain is not None:
        rows.append(_lt("interior rows stay inside domain", interior_closure(cloud, ops), 0.0))
    return rows


def poincare_suite(domain: Domain, profile: KernelProfile, deltas, h_of_delta) -> list[CheckRow]:
    vel, pres = [], []
    for d in deltas:
        cloud = partition(sample_grid(domain, h_of_delta(d)), d)
        k = make_kernel(profile, d, domain.dim)
        vel.append(poincare_constant_velocity(cloud, k))
        pres.append(poincare_constant_pressure(cloud, k))
    rows = []
    for d, a, b in zip(deltas, vel, pres):
        rows.append(_gt(f"velocity constant delta={d:g}", a, 0.0))
        rows.append(_gt(f"pressure constant delta={d:g}", b, 0.0))
    if len(deltas) > 1:
        rows.append(_ge("velocity uniformity (min / first)", min(vel) / vel[0], 0.5))
        rows.append(_ge("pressure uniformity (min / first)", min(pres) / pres[0], 0.5))
    return rows


def energy_suite(cloud: PointCloud, profile: KernelProfile, f: np.ndarray, options: SolverOptions) -> list[CheckRow]:
    k = make_kernel(profile, cloud.delta, cloud.dim)
    sol, _ = solve_problem(NonlocalStokesProblem(cloud, k, f, options))
    V = cloud.weights
    pn = weighted_norm(V, sol.p)
    return [
        _le("energy identity gap", sol.energy_gap, 1e-8),
        _le("relative residual", sol.residual, max(options.rtol, 1e-10)),
        _le("pressure mean", abs(float(np.sum(V * sol.p))), 1e-10 * max(pn, 1.0)),
        _le("layer velocity", float(np.max(np.abs(sol.u[cloud.layer]), initial=0.0)), 0.0),
    ]
