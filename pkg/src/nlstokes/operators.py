"""Sparse assembly of the discrete nonlocal operators on a tagged point cloud.

With weights ``V_j`` and the rescaled kernels, row ``i`` of each operator is

* ``Lap``:      (1/delta^2) sum_j R(x_i, x_j) (u_j - u_i) V_j
* ``Grad``:     (1/(2 delta^2)) sum_j R(x_i, x_j) (x_j - x_i) p_j V_j
* ``Div``:      (1/(2 delta^2)) sum_j R(x_i, x_j) (x_j - x_i) . u_j V_j
* ``Stab``:     sum_j Rbar(x_i, x_j) (p_j - p_i) V_j
* ``Mollify``:  sum_j Rbar(x_i, x_j) f_j V_j

All matrices share one CSR pattern (the 2*delta neighbor graph), built in a single
pass over the neighbor pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import PointCloud, iter_pairs
from .kernels import ScaledKernel

_DROP = 1e-300


class OperatorConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OperatorSet:
    lap: sp.csr_matrix
    grad: tuple  # n csr matrices, one per component of (x_j - x_i)
    stab: sp.csr_matrix
    mollify: sp.csr_matrix
    kernel: ScaledKernel
    cloud: PointCloud

    @property
    def div(self) -> tuple:
        # Div and Grad carry identical per-pair coefficients; only the contraction differs.
        return self.grad

    @property
    def delta(self) -> float:
        return self.kernel.delta

    def apply_grad(self, p: np.ndarray) -> np.ndarray:
        return np.column_stack([g @ p for g in self.grad])

    def apply_div(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u).reshape(len(self.cloud), -1)
        return sum(g @ u[:, k] for k, g in enumerate(self.grad))

    def apply_lap(self, u: np.ndarray) -> np.ndarray:
        """Blockwise Laplacian: applied to each column of an (N, n) field."""
        return self.lap @ u


def _check(cloud: PointCloud, kernel: ScaledKernel):
    if cloud.tags is None or cloud.delta is None:
        raise OperatorConfigError("operators need a partitioned cloud")
    if not np.isclose(cloud.delta, kernel.delta, rtol=1e-14, atol=0.0):
        raise OperatorConfigError(f"cloud tagged with delta={cloud.delta} but kernel has delta={kernel.delta}")
    if cloud.dim != kernel.dim:
        raise OperatorConfigError(f"cloud is {cloud.dim}-D but kernel is {kernel.dim}-D")


def assemble_operators(cloud: PointCloud, kernel: ScaledKernel) -> OperatorSet:
    """Assemble every operator in one traversal of the neighbor pairs (cached per cloud)."""
    _check(cloud, kernel)
    key = ("ops", id(kernel), kernel.delta)
    cached = cloud._cache.get(key)
    if cached is not None and cached.kernel is kernel:
        return cached

    N, n, d = len(cloud), cloud.dim, kernel.delta
    V = cloud.weights
    X = cloud.points
    cols, lap, stab, moll = [], [], [], []
    grad = [[] for _ in range(n)]
    counts = np.zeros(N, dtype=np.int64)
    lap_diag = np.zeros(N)
    stab_diag = np.zeros(N)
    for i, j, d2 in iter_pairs(cloud, kernel.support_radius):
        Rw = kernel.R_of_dist2(d2) * V[j]
        Rbw = kernel.Rbar_of_dist2(d2) * V[j]
        keep = (Rw >= _DROP) | (Rbw >= _DROP) | (i == j)
        i, j, Rw, Rbw = i[keep], j[keep], Rw[keep], Rbw[keep]
        self_pair = i == j
        lw = Rw / (d * d)
        lw[self_pair] = 0.0
        sw = Rbw.copy()
        sw[self_pair] = 0.0
        lap_diag += np.bincount(i, weights=lw, minlength=N)
        stab_diag += np.bincount(i, weights=sw, minlength=N)
        counts += np.bincount(i, minlength=N)
        cols.append(j.astype(np.int32))
        lap.append(lw)
        stab.append(sw)
        moll.append(Rbw)
        gw = Rw / (2.0 * d * d)
        for k in range(n):
            grad[k].append(gw * (X[j, k] - X[i, k]))
        # mark diagonal slots for the row-sum fill below
        lap[-1][self_pair] = np.nan
        stab[-1][self_pair] = np.nan

    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.concatenate(cols)

    def build(data):
        return sp.csr_matrix((data, indices, indptr), shape=(N, N), copy=False)

    lap = np.concatenate(lap)
    stab = np.concatenate(stab)
    diag_slot = np.isnan(lap)
    rows_of_diag = np.repeat(np.arange(N), counts)[diag_slot]
    lap[diag_slot] = -lap_diag[rows_of_diag]
    stab[diag_slot] = -stab_diag[rows_of_diag]

    ops = OperatorSet(
        lap=build(lap),
        grad=tuple(build(np.concatenate(g)) for g in grad),
        stab=build(stab),
        mollify=build(np.concatenate(moll)),
        kernel=kernel,
        cloud=cloud,
    )
    cloud._cache[key] = ops
    return ops


def assemble_laplacian(cloud: PointCloud, kernel: ScaledKernel) -> sp.csr_matrix:
    return assemble_operators(cloud, kernel).lap


def assemble_gradient(cloud: PointCloud, kernel: ScaledKernel) -> tuple:
    """Gradient as ``n`` CSR matrices; component k of (G p)_i is ``grad[k] @ p``."""
    return assemble_operators(cloud, kernel).grad


def assemble_divergence(cloud: PointCloud, kernel: ScaledKernel) -> tuple:
    """Divergence as ``n`` CSR matrices; (D u)_i = sum_k ``div[k] @ u[:, k]``."""
    return assemble_operators(cloud, kernel).div


def assemble_stabilizer(cloud: PointCloud, kernel: ScaledKernel) -> sp.csr_matrix:
    return assemble_operators(cloud, kernel).stab


def assemble_mollifier(cloud: PointCloud, kernel: ScaledKernel) -> sp.csr_matrix:
    return assemble_operators(cloud, kernel).mollify


def export_coo(matrix, path) -> None:
    """Write ``row col value`` lines; a tuple of matrices adds a component column."""
    with open(path, "w") as fh:
        if isinstance(matrix, (tuple, list)):
            for k, m in enumerate(matrix):
                m = m.tocoo()
                for r, c, v in zip(m.row, m.col, m.data):
                    fh.write(f"{r} {c} {float(v)!r} {k}\n")
        else:
            m = matrix.tocoo()
            for r, c, v in zip(m.row, m.col, m.data):
                fh.write(f"{r} {c} {float(v)!r}\n")
