"""Closed-form oscillating example with a nonuniform exponential dichotomy.

On ``Z = X x Y`` with constant blocks ``A`` (spectrum left of ``-omega``) and
``B`` (spectrum right of ``omega``) the process

    U(t, s) = exp(A (t - s)) exp(-I(t, s)),   V(t, s) = exp(B (t - s)) exp(I(t, s)),

with ``I(t, s) = a (sin t - t cos t - sin s + s cos s)`` is generated by
``A - a t sin t`` and ``B + a t sin t``.  Because ``|I(t, s)|`` can grow like
``a (|t| + |s|)`` the dichotomy bound grows like ``exp(2 a |s|)``: it has
exponent ``omega - a`` and bound ``M exp(2a) exp(2a |s|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .dichotomy import DichotomyCertificate, ProjectionFamily
from .errors import ArgumentError
from .process import ContinuousProcess, TimeGrid, operator_norm

__all__ = [
    "GalleryParams",
    "PRESETS",
    "preset",
    "oscillation_integral",
    "make_gallery_process",
    "analytic_projections",
    "analytic_certificate",
    "make_perturbation",
    "gallery_bound_rhs",
]


@dataclass(frozen=True)
class GalleryParams:
    """Parameters of the oscillating example.

    ``A_block`` and ``B_block`` default to ``-omega`` and ``omega`` times the
    identity of sizes ``dim_x`` and ``dim_y``.
    """

    omega: float = 1.0
    a: float = 0.1
    M: float = 1.0
    dim_x: int = 1
    dim_y: int = 1
    A_block: np.ndarray | None = field(default=None, compare=False)
    B_block: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.omega > self.a > 0):
            raise ArgumentError(f"need omega > a > 0, got omega={self.omega}, a={self.a}")
        if not self.M >= 1:
            raise ArgumentError("M must be >= 1")
        if self.dim_x < 0 or self.dim_y < 0 or self.dim_x + self.dim_y == 0:
            raise ArgumentError("block dimensions must be nonnegative and not both zero")
        A = (-self.omega * np.eye(self.dim_x) if self.A_block is None
             else np.atleast_2d(np.asarray(self.A_block, dtype=float)))
        B = (self.omega * np.eye(self.dim_y) if self.B_block is None
             else np.atleast_2d(np.asarray(self.B_block, dtype=float)))
        if A.shape != (self.dim_x, self.dim_x) or B.shape != (self.dim_y, self.dim_y):
            raise ArgumentError("block shapes do not match dim_x, dim_y")
        object.__setattr__(self, "A_block", A)
        object.__setattr__(self, "B_block", B)
        self._check_block_bounds()

    def _check_block_bounds(self):
        gaps = np.linspace(0.0, 10.0, 41)
        for g in gaps:
            if self.dim_x:
                if operator_norm(expm(self.A_block * g)) > self.M * np.exp(-self.omega * g) * (1 + 1e-9):
                    raise ArgumentError(f"|exp(A t)| exceeds M exp(-omega t) at t={g}")
            if self.dim_y:
                if operator_norm(expm(-self.B_block * g)) > self.M * np.exp(-self.omega * g) * (1 + 1e-9):
                    raise ArgumentError(f"|exp(-B t)| exceeds M exp(-omega t) at t={g}")

    @property
    def dimension(self):
        return self.dim_x + self.dim_y

    def to_dict(self):
        return {
            "omega": self.omega,
            "a": self.a,
            "M": self.M,
            "dim_x": self.dim_x,
            "dim_y": self.dim_y,
            "A_block": self.A_block.tolist(),
            "B_block": self.B_block.tolist(),
        }


PRESETS = {"paper-default": dict(omega=1.0, a=0.1, M=1.0, dim_x=1, dim_y=1)}


def preset(name):
    try:
        return GalleryParams(**PRESETS[name])
    except KeyError:
        raise ArgumentError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


def oscillation_integral(a, t, s):
    """Closed form of the integral of ``a tau sin(tau)`` from ``s`` to ``t``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = a * (np.sin(t) - t * np.cos(t) - np.sin(s) + s * np.cos(s))
    return float(out) if out.ndim == 0 else out


class _BlockExp:
    """``exp(C g)`` for constant ``C``, cached per gap; scalar blocks use ``exp``."""

    def __init__(self, C):
        self.C = C
        self.scalar = C.shape == (1, 1)
        self.cache = {}

    def __call__(self, gaps):
        gaps = np.asarray(gaps, dtype=float)
        n = self.C.shape[0]
        if self.scalar:
            return np.exp(self.C[0, 0] * gaps)[..., None, None]
        out = np.empty(gaps.shape + (n, n))
        flat = out.reshape(-1, n, n)
        for i, g in enumerate(gaps.ravel()):
            key = round(float(g), 12)
            val = self.cache.get(key)
            if val is None:
                val = expm(self.C * g)
                if len(self.cache) < 100000:
                    self.cache[key] = val
            flat[i] = val
        return out


def make_gallery_process(p):
    """Closed-form block-diagonal process of the example (no ODE integration)."""
    if not isinstance(p, GalleryParams):
        raise ArgumentError("expected GalleryParams")
    nx, d = p.dim_x, p.dimension
    expA, expB = _BlockExp(p.A_block), _BlockExp(p.B_block)

    def evaluator(t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        gap = t - s
        I = np.asarray(oscillation_integral(p.a, t, s))
        out = np.zeros(gap.shape + (d, d))
        if nx:
            out[..., :nx, :nx] = expA(gap) * np.exp(-I)[..., None, None]
        if d - nx:
            out[..., nx:, nx:] = expB(gap) * np.exp(I)[..., None, None]
        return out

    def generator(t):
        t = np.asarray(t, dtype=float)
        w = p.a * t * np.sin(t)
        out = np.zeros(t.shape + (d, d))
        out[..., :nx, :nx] = p.A_block - w[..., None, None] * np.eye(nx)
        out[..., nx:, nx:] = p.B_block + w[..., None, None] * np.eye(d - nx)
        return out

    return ContinuousProcess.closed_form(evaluator, d, generator=generator, vectorized=True)


def analytic_projections(p):
    """Constant projection onto the ``Y`` block."""
    Q = np.zeros((p.dimension, p.dimension))
    Q[p.dim_x:, p.dim_x:] = np.eye(p.dim_y)
    return ProjectionFamily.constant(Q)


def analytic_certificate(p, grid=None):
    """Certificate ``D = M exp(2a)``, ``nu = 2a``, ``alpha = omega - a``."""
    return DichotomyCertificate(D=p.M * np.exp(2 * p.a), nu=2 * p.a, alpha=p.omega - p.a,
                                grid=grid)


def make_perturbation(eps, a, shape, check_grid=None):
    """Perturbation ``eps exp(-6a|t|) shape(t)`` with ``|shape(t)| <= 1``.

    ``shape`` is a matrix or a callable ``t -> matrix``.  Its norm is checked on
    ``check_grid`` (default ``[-20, 20]`` with step 0.25).
    """
    if eps < 0:
        raise ArgumentError("eps must be nonnegative")
    const = None if callable(shape) else np.atleast_2d(np.asarray(shape, dtype=float))
    grid = check_grid or TimeGrid(-20.0, 20.0, 0.25)
    if const is not None:
        norms = np.array([operator_norm(const)])
    else:
        norms = np.array([operator_norm(np.asarray(shape(float(t)), dtype=float))
                          for t in grid.times])
    if np.any(norms > 1 + 1e-12):
        raise ArgumentError(f"shape norm reaches {norms.max():.6g} > 1")

    def B(t):
        t = np.asarray(t, dtype=float)
        env = eps * np.exp(-6 * a * np.abs(t))
        if const is not None:
            return env[..., None, None] * const
        if t.ndim == 0:
            return env * np.asarray(shape(float(t)), dtype=float)
        vals = np.array([np.asarray(shape(float(x)), dtype=float) for x in t.ravel()])
        return env[..., None, None] * vals.reshape(t.shape + vals.shape[-2:])

    B.eps, B.a = eps, a
    return B


def gallery_bound_rhs(p, t, s, side):
    """Block bounds of the example.

    ``forward`` (``t >= s``): ``M exp((a - omega)(t - s) + 2a|s| + 2a)`` bounds
    ``|U(t, s)|``.  ``backward`` (``t < s``): ``M exp(2a + 2a|s|) exp((omega - a)(t - s))``
    bounds ``|V(t, s)|``.
    """
    if side == "forward":
        if t < s:
            raise ArgumentError("forward bound needs t >= s")
        return p.M * np.exp((p.a - p.omega) * (t - s) + 2 * p.a * abs(s) + 2 * p.a)
    if side == "backward":
        if not t < s:
            raise ArgumentError("backward bound needs t < s")
        return p.M * np.exp(2 * p.a + 2 * p.a * abs(s)) * np.exp((p.omega - p.a) * (t - s))
    raise ArgumentError(f"side must be 'forward' or 'backward', got {side!r}")
