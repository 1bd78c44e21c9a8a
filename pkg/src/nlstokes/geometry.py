"""Domains, lattice point clouds, interior/layer partition and neighbor search."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

INTERIOR = 0
LAYER = 1
TAG_NAMES = {INTERIOR: "interior", LAYER: "layer"}


class EmptyCloudError(ValueError):
    pass


class DegeneratePartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    dim: int
    name: str
    signed_distance: Callable[[np.ndarray], np.ndarray]
    bounding_box: tuple[np.ndarray, np.ndarray]
    volume: float
    surface_area: float
    params: dict = field(default_factory=dict)

    @property
    def diameter(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))


def unit_disk(radius: float = 1.0) -> Domain:
    def sd(x):
        x = np.atleast_2d(x)
        return np.linalg.norm(x, axis=1) - radius

    box = (np.full(2, -radius), np.full(2, radius))
    return Domain(2, "unit-disk", sd, box, math.pi * radius**2, 2 * math.pi * radius, {"radius": radius})


def unit_ball(radius: float = 1.0) -> Domain:
    def sd(x):
        x = np.atleast_2d(x)
        return np.linalg.norm(x, axis=1) - radius

    box = (np.full(3, -radius), np.full(3, radius))
    vol = 4.0 / 3.0 * math.pi * radius**3
    return Domain(3, "unit-ball", sd, box, vol, 4 * math.pi * radius**2, {"radius": radius})


def interval(half_width: float = 1.0) -> Domain:
    def sd(x):
        x = np.atleast_2d(x)
        return np.abs(x[:, 0]) - half_width

    box = (np.array([-half_width]), np.array([half_width]))
    return Domain(1, "interval", sd, box, 2 * half_width, 2.0, {"half_width": half_width})


def unit_square(side: float = 1.0) -> Domain:
    """The square [0, side]^2.  Its corners are not C^2; fine for demos, not for rates."""
    c = np.full(2, side / 2)

    def sd(x):
        q = np.abs(np.atleast_2d(x) - c) - side / 2
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    box = (np.zeros(2), np.full(2, side))
    return Domain(2, "unit-square", sd, box, side**2, 4 * side, {"side": side})


DOMAINS = {
    "unit-disk": unit_disk,
    "unit-square": unit_square,
    "unit-ball": unit_ball,
    "interval": interval,
}


def make_domain(name: str, **params) -> Domain:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise KeyError(f"unknown domain {name!r}; available: {sorted(DOMAINS)}") from None
    return factory(**params)


class SpatialHash:
    """Uniform cell grid over a point set; cell edge is at least the query radius."""

    def __init__(self, points: np.ndarray, cell_size: float):
        self.points = points
        self.cell_size = float(cell_size)
        self.origin = points.min(axis=0)
        cells = np.floor((points - self.origin) / self.cell_size).astype(np.int64)
        self.shape = cells.max(axis=0) + 1
        self.cell_of = cells
        flat = np.ravel_multi_index(cells.T, self.shape)
        self.order = np.argsort(flat, kind="stable")
        ncell = int(np.prod(self.shape))
        counts = np.bincount(flat, minlength=ncell)
        self.start = np.concatenate([[0], np.cumsum(counts)])
        dim = points.shape[1]
        self.offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * dim, indexing="ij")).reshape(dim, -1).T

    def candidates(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All (row, point) pairs whose cells touch; rows are cloud indices."""
        out_r, out_c = [], []
        base = self.cell_of[rows]
        for off in self.offsets:
            nb = base + off
            ok = np.all((nb >= 0) & (nb < self.shape), axis=1)
            r = rows[ok]
            flat = np.ravel_multi_index(nb[ok].T, self.shape)
            s, e = self.start[flat], self.start[flat + 1]
            cnt = e - s
            total = int(cnt.sum())
            if total == 0:
                continue
            rr = np.repeat(r, cnt)
            pos = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(s, cnt)
            out_r.append(rr)
            out_c.append(self.order[pos])
        if not out_r:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(out_r), np.concatenate(out_c)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    weights: np.ndarray
    h: float
    tags: np.ndarray | None = None
    delta: float | None = None
    domain: Domain | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def interior(self) -> np.ndarray:
        """Indices of interior points (ascending)."""
        self._require_tags()
        return np.flatnonzero(self.tags == INTERIOR)

    @property
    def layer(self) -> np.ndarray:
        self._require_tags()
        return np.flatnonzero(self.tags == LAYER)

    def _require_tags(self):
        if self.tags is None:
            raise ValueError("cloud is not partitioned; call partition() first")

    def spatial_hash(self, radius: float) -> SpatialHash:
        key = ("hash", radius)
        if key not in self._cache:
            self._cache[key] = SpatialHash(self.points, radius)
        return self._cache[key]


def sample_grid(domain: Domain, h: float) -> PointCloud:
    """Lattice points ``(k + 1/2) h`` strictly inside the domain, each with weight h^n."""
    if not 0 < h < domain.diameter:
        raise EmptyCloudError(f"spacing h={h} must lie in (0, diameter={domain.diameter:.4g})")
    lo, hi = domain.bounding_box
    axes = []
    for a, b in zip(lo, hi):
        k0 = math.floor(a / h - 0.5)
        k1 = math.ceil(b / h - 0.5)
        axes.append((np.arange(k0, k1 + 1) + 0.5) * h)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    pts = grid[domain.signed_distance(grid) < 0.0]
    if len(pts) == 0:
        raise EmptyCloudError(f"no lattice points with h={h} fall inside {domain.name}")
    return PointCloud(pts, np.full(len(pts), h**domain.dim), float(h), domain=domain)


def partition(cloud: PointCloud, delta: float) -> PointCloud:
    """Tag points: interior iff the 2*delta ball stays off the boundary, layer otherwise."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if cloud.domain is None:
        raise ValueError("partition needs the cloud's domain")
    dist = -cloud.domain.signed_distance(cloud.points)
    tags = np.where(dist > 2.0 * delta, INTERIOR, LAYER).astype(np.int8)
    if not np.any(tags == INTERIOR):
        raise DegeneratePartitionError(
            f"delta={delta} leaves no interior points (2*delta exceeds the inradius on this cloud)"
        )
    return replace(cloud, tags=tags, delta=float(delta), _cache={})


def iter_pairs(cloud: PointCloud, radius: float, rows=None, chunk: int = 2_000_000) -> Iterator:
    """Yield ``(i, j, |x_i - x_j|^2)`` for ``|x_i - x_j| < radius``.

    Chunks follow ascending ``i``; within a row ``j`` ascends.  ``chunk`` bounds the
    number of candidate pairs held at once.
    """
    grid = cloud.spatial_hash(radius)
    rows = np.arange(len(cloud)) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        return
    # candidates per row ~ 3^n * points per cell
    per_cell = len(cloud) / max(int(np.prod(grid.shape)), 1)
    per_row = max(1, int(3 ** cloud.dim * per_cell * 2))
    step = max(1, chunk // per_row)
    r2 = radius * radius
    for a in range(0, len(rows), step):
        i, j = grid.candidates(rows[a : a + step])
        d = cloud.points[i] - cloud.points[j]
        d2 = np.einsum("ij,ij->i", d, d)
        keep = d2 < r2
        i, j, d2 = i[keep], j[keep], d2[keep]
        order = np.lexsort((j, i))
        yield i[order], j[order], d2[order]


def neighbors(cloud: PointCloud, i: int, radius: float | None = None) -> np.ndarray:
    """Indices j with |x_i - x_j| < radius (default 2*delta), ascending, including i."""
    if radius is None:
        if cloud.delta is None:
            raise ValueError("untagged cloud: pass the radius explicitly")
        radius = 2.0 * cloud.delta
    _, j, _ = next(iter_pairs(cloud, radius, rows=[i]))
    return j


def brute_force_neighbors(cloud: PointCloud, i: int, radius: float) -> np.ndarray:
    d = cloud.points - cloud.points[i]
    return np.flatnonzero(np.einsum("ij,ij->i", d, d) < radius * radius)


def write_cloud_csv(cloud: PointCloud, path) -> None:
    n = cloud.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(n)] + ["V", "tag"])
        tags = cloud.tags if cloud.tags is not None else [None] * len(cloud)
        for x, v, t in zip(cloud.points, cloud.weights, tags):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v)), TAG_NAMES.get(t, "")])


def read_cloud_csv(path, h: float, delta: float | None = None, domain: Domain | None = None) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = header.index("V")
    pts = np.array([[float(c) for c in r[:n]] for r in body])
    weights = np.array([float(r[n]) for r in body])
    names = {v: k for k, v in TAG_NAMES.items()}
    raw = [r[n + 1] for r in body]
    tags = np.array([names[t] for t in raw], dtype=np.int8) if all(raw) else None
    return PointCloud(pts, weights, float(h), tags=tags, delta=delta if tags is not None else None, domain=domain)
