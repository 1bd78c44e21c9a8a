"""Radial kernel profiles and their delta-rescaled, normalized forms.

A profile ``R`` lives on ``[0, 1]`` and is evaluated at ``r = |x - y|^2 / (4 delta^2)``,
so the rescaled kernels reach out to ``|x - y| = 2 delta``.  ``Rbar`` is the tail
integral of ``R``; its rescaled version integrates to one over R^n.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate

BUILTIN_PROFILES = ("quadratic", "cosine")

# (n) -> surface area of the unit sphere in R^n
SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

_QUAD_TOL = 1e-13


class KernelValidationError(ValueError):
    """A profile violates one of the admissibility assumptions.

    ``assumption`` is one of ``"positivity"``, ``"compact support"``,
    ``"regularity"``, ``"nondegeneracy"`` or ``"normalization"``.
    """

    def __init__(self, assumption: str, detail: str):
        super().__init__(f"{assumption}: {detail}")
        self.assumption = assumption


@dataclass(frozen=True)
class KernelProfile:
    name: str
    R: Callable[[np.ndarray], np.ndarray]
    Rprime: Callable[[np.ndarray], np.ndarray]
    Rbar: Callable[[np.ndarray], np.ndarray]
    gamma0: float


def _clip_support(fn):
    def wrapped(r):
        r = np.asarray(r, dtype=float)
        inside = (r >= 0.0) & (r <= 1.0)
        out = np.zeros_like(r)
        out[inside] = fn(r[inside])
        return out if out.ndim else float(out)

    return wrapped


def _quadratic():
    R = _clip_support(lambda r: (1.0 - r) ** 2)
    Rp = _clip_support(lambda r: -2.0 * (1.0 - r))
    Rbar = _clip_support(lambda r: (1.0 - r) ** 3 / 3.0)
    return R, Rp, Rbar


def _cosine():
    R = _clip_support(lambda r: 0.5 * (1.0 + np.cos(np.pi * r)))
    Rp = _clip_support(lambda r: -0.5 * np.pi * np.sin(np.pi * r))
    # sin(pi r) rounds to ~1e-16 at r = 1; clamp so Rbar stays exactly nonnegative
    Rbar = _clip_support(lambda r: np.maximum(0.5 * (1.0 - r) - np.sin(np.pi * r) / (2.0 * np.pi), 0.0))
    return R, Rp, Rbar


def _min_on_half(R) -> float:
    r = np.linspace(0.0, 0.5, 2001)
    return float(np.min(R(r)))


def _validate(R, Rprime) -> float:
    r = np.linspace(0.0, 1.0, 1001)
    vals = np.asarray(R(r), dtype=float)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
        bad = float(r[np.argmin(np.where(np.isfinite(vals), vals, -np.inf))])
        raise KernelValidationError("positivity", f"R(r) < 0 near r={bad:.4g}")
    outside = np.asarray(R(np.linspace(1.0 + 1e-9, 4.0, 301)), dtype=float)
    if np.any(outside != 0.0):
        raise KernelValidationError("compact support", "R(r) must vanish for r > 1")
    e = 1e-6
    rr = np.linspace(2 * e, 1.0 - 2 * e, 257)
    fd = (np.asarray(R(rr + e)) - np.asarray(R(rr - e))) / (2 * e)
    mismatch = np.abs(fd - np.asarray(Rprime(rr)))
    if np.max(mismatch) > 10 * e + 1e-6 * np.max(np.abs(fd)):
        raise KernelValidationError(
            "regularity", f"R' disagrees with finite differences by {np.max(mismatch):.3g}"
        )
    gamma0 = _min_on_half(R)
    if gamma0 <= 0.0:
        raise KernelValidationError("nondegeneracy", "R must stay positive on [0, 1/2]")
    return gamma0


def make_profile(name: str, R=None, Rprime=None) -> KernelProfile:
    """Built-in profile by name, or a validated custom profile from ``R`` and ``Rprime``."""
    if R is None:
        if name == "quadratic":
            R, Rp, Rbar = _quadratic()
        elif name == "cosine":
            R, Rp, Rbar = _cosine()
        else:
            raise KeyError(f"unknown kernel profile {name!r}; built-ins are {BUILTIN_PROFILES}")
        return KernelProfile(name, R, Rp, Rbar, _min_on_half(R))

    if Rprime is None:
        raise ValueError("custom profiles need both R and Rprime")
    gamma0 = _validate(R, Rprime)
    R = _clip_support(R)
    Rprime = _clip_support(Rprime)
    # Rbar is tabulated once from adaptive quadrature and interpolated with
    # Hermite cubics (slope -R at the nodes) so assembly stays vectorized.
    nodes = np.linspace(0.0, 1.0, 2049)
    tail = np.array([_tail_integral(R, float(t)) for t in nodes])
    Rbar = _clip_support(interpolate.CubicHermiteSpline(nodes, tail, -np.asarray(R(nodes))))
    return KernelProfile(name, R, Rprime, Rbar, gamma0)


def _tail_integral(R, r: float) -> float:
    if r >= 1.0:
        return 0.0
    val, _ = integrate.quad(lambda s: float(R(s)), max(r, 0.0), 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def profile_from_table(path, name: str | None = None) -> KernelProfile:
    """Custom profile from a two-column CSV of ``(r, R(r))`` on a monotone grid over [0, 1].

    The table is interpolated with a cubic spline; a header row is allowed.
    """
    rs, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                r, v = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            rs.append(r)
            vals.append(v)
    rs = np.asarray(rs)
    vals = np.asarray(vals)
    if len(rs) < 4 or np.any(np.diff(rs) <= 0):
        raise ValueError(f"{path}: need at least 4 rows with strictly increasing r")
    if rs[0] != 0.0 or rs[-1] != 1.0:
        raise ValueError(f"{path}: r grid must span [0, 1]")
    if np.any(vals < 0.0):
        bad = rs[np.argmin(vals)]
        raise KernelValidationError("positivity", f"tabulated R(r) < 0 at r={bad:.4g}")
    spline = interpolate.CubicSpline(rs, vals)
    # spline extrapolation past r = 1 is discarded, support is by construction
    return make_profile(
        name or str(path), R=_clip_support(spline), Rprime=_clip_support(spline.derivative())
    )


def rbar_of(profile: KernelProfile, r):
    """Tail integral of the profile from ``r`` to 1 (zero beyond the support).

    Closed form for built-ins, adaptive quadrature otherwise.
    """
    if profile.name in BUILTIN_PROFILES:
        return profile.Rbar(r)
    r = np.asarray(r, dtype=float)
    out = np.array([_tail_integral(profile.R, float(t)) for t in r.ravel()]).reshape(r.shape)
    return out if out.ndim else float(out)


def _radial_integral(fn, upper: float, dim: int) -> float:
    val, _ = integrate.quad(
        lambda t: float(fn(t)) * t ** (dim - 1), 0.0, upper, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=400
    )
    return SPHERE_AREA[dim] * val


def normalization_constant(profile: KernelProfile, dim: int) -> float:
    """alpha_n such that alpha_n * S_n * int_0^2 Rbar(t^2/4) t^(n-1) dt = 1."""
    if dim not in SPHERE_AREA:
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    total = _radial_integral(lambda t: profile.Rbar(t * t / 4.0), 2.0, dim)
    if not total > 0.0:
        raise KernelValidationError("normalization", f"radial integral of Rbar is {total}")
    return 1.0 / total


@dataclass(frozen=True)
class ScaledKernel:
    profile: KernelProfile
    delta: float
    dim: int
    alpha_n: float = field(init=False)
    C_delta: float = field(init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        alpha = normalization_constant(self.profile, self.dim)
        object.__setattr__(self, "alpha_n", alpha)
        object.__setattr__(self, "C_delta", alpha * self.delta ** (-self.dim))

    @property
    def support_radius(self) -> float:
        return 2.0 * self.delta

    def R_of_dist2(self, d2):
        """Rescaled R at squared separation(s) ``d2``."""
        return self.C_delta * self.profile.R(np.asarray(d2) / (4.0 * self.delta**2))

    def Rbar_of_dist2(self, d2):
        return self.C_delta * self.profile.Rbar(np.asarray(d2) / (4.0 * self.delta**2))


def make_kernel(profile: KernelProfile | str, delta: float, dim: int) -> ScaledKernel:
    if isinstance(profile, str):
        profile = make_profile(profile)
    return ScaledKernel(profile, float(delta), int(dim))


def _dist2(x, y) -> float:
    d = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(np.asarray(y, dtype=float))
    return float(d @ d)


def eval_R(kernel: ScaledKernel, x, y) -> float:
    return float(kernel.R_of_dist2(_dist2(x, y)))


def eval_Rbar(kernel: ScaledKernel, x, y) -> float:
    return float(kernel.Rbar_of_dist2(_dist2(x, y)))


def second_moment(kernel: ScaledKernel) -> float:
    """(1/2 delta^2) * int R_delta(z) z_1^2 dz; equals 1 for a normalized kernel."""
    d = kernel.delta
    n = kernel.dim
    # z_1^2 averages to |z|^2 / n over spheres
    m = _radial_integral(lambda t: kernel.R_of_dist2(t * t) * t * t, 2.0 * d, n) / n
    return m / (2.0 * d * d)


def stabilizer_coefficient(kernel: ScaledKernel) -> float:
    """beta_n = (1 / (2 n delta^2)) * int Rbar_delta(z) |z|^2 dz (delta-independent)."""
    d = kernel.delta
    n = kernel.dim
    m = _radial_integral(lambda t: kernel.Rbar_of_dist2(t * t) * t * t, 2.0 * d, n)
    return m / (2.0 * n * d * d)


def mass(kernel: ScaledKernel, which: str = "Rbar") -> float:
    """Total mass of the rescaled kernel over R^n (1 for ``Rbar`` by construction)."""
    fn = kernel.Rbar_of_dist2 if which == "Rbar" else kernel.R_of_dist2
    return _radial_integral(lambda t: fn(t * t), 2.0 * kernel.delta, kernel.dim)
