"""Discrete and continuous linear evolution processes on R^d.

A process is a two-parameter family of d x d matrices ``S(t, s)``, ``t >= s``,
with ``S(t, t) = I`` and ``S(t, r) S(r, s) = S(t, s)``.  Discrete processes are
built from one-step matrices; continuous ones are either closed-form, generated
by a matrix ODE ``x' = A(t) x``, or sampled on a time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArgumentError, NumericError, WindowError

__all__ = [
    "TimeGrid",
    "DiscreteProcess",
    "ContinuousProcess",
    "propagate_discrete",
    "integrate_generator",
    "integrate_generator_batch",
    "operator_norm",
    "propagator_table",
]

DEFAULT_STEP = 1e-3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling ``t_min, t_min + step, ..., t_max`` of a real interval."""

    t_min: float
    t_max: float
    step: float

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ArgumentError(f"grid step must be positive, got {self.step}")
        if not self.t_max > self.t_min:
            raise ArgumentError("grid needs t_max > t_min")
        n = (self.t_max - self.t_min) / self.step
        count = int(round(n)) + 1
        scale = max(abs(self.t_min), abs(self.t_max), self.step)
        if abs(self.t_min + (count - 1) * self.step - self.t_max) > 1e-12 * scale * max(1, count):
            raise ArgumentError(
                f"[{self.t_min}, {self.t_max}] is not a whole number of steps {self.step}"
            )

    @classmethod
    def from_count(cls, t_min, step, count):
        if count < 2:
            raise ArgumentError("a grid needs at least two points")
        return cls(float(t_min), float(t_min + (count - 1) * step), float(step))

    @classmethod
    def parse(cls, text):
        """Parse ``"t_min:t_max:step"``."""
        try:
            a, b, h = (float(x) for x in text.split(":"))
        except ValueError:
            raise ArgumentError(f"grid spec must look like -10:10:0.25, got {text!r}") from None
        return cls(a, b, h)

    @property
    def count(self):
        return int(round((self.t_max - self.t_min) / self.step)) + 1

    @property
    def times(self):
        return self.t_min + self.step * np.arange(self.count)

    def scaled(self, factor):
        return TimeGrid(self.t_min * factor, self.t_max * factor, self.step * factor)

    def to_dict(self):
        return {"t_min": self.t_min, "t_max": self.t_max, "step": self.step, "count": self.count}


def operator_norm(M):
    """Spectral norm (largest singular value) of a matrix or a stack of matrices."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericError("operator_norm: matrix has non-finite entries")
    if M.ndim == 2:
        if M.size == 0:
            return 0.0
        return float(np.linalg.norm(M, 2))
    if M.shape[-1] == 0 or M.shape[-2] == 0:
        return np.zeros(M.shape[:-2])
    return np.linalg.svd(M, compute_uv=False)[..., 0]


def _check_square_stack(steps):
    steps = np.asarray(steps, dtype=float)
    if steps.ndim != 3 or steps.shape[1] != steps.shape[2]:
        raise ArgumentError(f"steps must have shape (count, d, d), got {steps.shape}")
    if not np.all(np.isfinite(steps)):
        raise NumericError("process steps contain non-finite entries")
    return steps


class DiscreteProcess:
    """Process generated by one-step matrices ``S_n``, ``n_min <= n < n_max``.

    The window ``[n_min, n_max]`` is the set of indices at which states live;
    ``propagate(n, m)`` is defined for ``n_min <= m <= n <= n_max``.
    """

    def __init__(self, steps, start=0):
        self.steps = _check_square_stack(steps)
        self.steps.setflags(write=False)
        self.start = int(start)
        self.dimension = self.steps.shape[1]

    @classmethod
    def from_function(cls, step_fn, n_min, n_max):
        return cls(np.array([step_fn(n) for n in range(n_min, n_max)]), start=n_min)

    @classmethod
    def autonomous(cls, S, n_min, n_max):
        S = np.asarray(S, dtype=float)
        return cls(np.broadcast_to(S, (n_max - n_min,) + S.shape).copy(), start=n_min)

    @property
    def window(self):
        return (self.start, self.start + len(self.steps))

    def step(self, n):
        lo, hi = self.window
        if not lo <= n < hi:
            raise WindowError(f"step index {n} outside [{lo}, {hi})")
        return self.steps[n - self.start]

    def __call__(self, n, m):
        return propagate_discrete(self, n, m)

    def __repr__(self):
        return f"DiscreteProcess(d={self.dimension}, window={self.window})"


def propagate_discrete(P, n, m):
    """Ordered product ``S_{n-1} ... S_m``; the identity when ``n == m``."""
    if int(n) != n or int(m) != m:
        raise ArgumentError("discrete indices must be integers")
    n, m = int(n), int(m)
    if n < m:
        raise ArgumentError(
            f"propagate_discrete needs n >= m (got n={n}, m={m}); "
            "backward maps exist only on projection ranges"
        )
    lo, hi = P.window
    if m < lo or n > hi:
        raise WindowError(f"[{m}, {n}] not inside window [{lo}, {hi}]")
    out = np.eye(P.dimension)
    for k in range(m, n):
        out = P.steps[k - P.start] @ out
    return out


def _eval_generator(A, times, d, vectorized):
    times = np.asarray(times, dtype=float)
    if vectorized:
        out = np.asarray(A(times), dtype=float)
        if out.shape != times.shape + (d, d):
            out = np.broadcast_to(out, times.shape + (d, d))
    else:
        out = np.array([np.asarray(A(float(t)), dtype=float) for t in times.ravel()])
        out = out.reshape(times.shape + (d, d))
    if not np.all(np.isfinite(out)):
        raise NumericError("generator returned non-finite values")
    return out


def _probe_vectorized(A, t0, d):
    """True if ``A`` maps an array of times to a stack of matrices."""
    try:
        out = np.asarray(A(np.array([t0, t0 + 0.5])), dtype=float)
    except Exception:
        return False
    if out.shape != (2, d, d):
        return False
    single = np.asarray(A(float(t0)), dtype=float)
    return np.allclose(out[0], single, rtol=1e-13, atol=1e-13)


def _split_steps(duration, step):
    if duration == 0:
        return 0, 0.0
    k = int(duration / step)
    rem = duration - k * step
    if rem <= 1e-12 * max(1.0, duration):
        rem = 0.0
    elif step - rem <= 1e-12 * max(1.0, duration):
        k, rem = k + 1, 0.0
    return k, rem


def _rk4_batch(A, starts, duration, step, d, vectorized):
    starts = np.asarray(starts, dtype=float)
    phi = np.broadcast_to(np.eye(d), starts.shape + (d, d)).copy()
    k, rem = _split_steps(duration, step)
    sizes = [step] * k + ([rem] if rem > 0 else [])
    tau = starts.copy()
    a0 = _eval_generator(A, tau, d, vectorized) if sizes else None
    offset = 0.0
    for h in sizes:
        a_mid = _eval_generator(A, starts + (offset + h / 2), d, vectorized)
        a1 = _eval_generator(A, starts + (offset + h), d, vectorized)
        k1 = a0 @ phi
        k2 = a_mid @ (phi + (h / 2) * k1)
        k3 = a_mid @ (phi + (h / 2) * k2)
        k4 = a1 @ (phi + h * k3)
        phi = phi + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        a0 = a1
        offset += h
    if not np.all(np.isfinite(phi)):
        raise NumericError("matrix ODE solution overflowed")
    return phi


def integrate_generator(A, t, s, step=DEFAULT_STEP, dimension=None):
    """Solution operator of ``Phi' = A(tau) Phi``, ``Phi(s) = I``, at time ``t``.

    Classical fixed-step RK4; the final step is shortened to land on ``t``.
    """
    if t < s:
        raise ArgumentError(f"integrate_generator needs t >= s (t={t}, s={s})")
    if not step > 0:
        raise ArgumentError("step must be positive")
    a_s = np.atleast_2d(np.asarray(A(float(s)), dtype=float))
    if not np.all(np.isfinite(a_s)):
        raise NumericError("generator returned non-finite values")
    d = dimension or a_s.shape[0]
    return _rk4_batch(A, np.array([float(s)]), float(t - s), step, d, False)[0]


def integrate_generator_batch(A, starts, duration, step=DEFAULT_STEP, dimension=None,
                              vectorized=None):
    """Propagators ``Phi(s_i + duration, s_i)`` for every start ``s_i`` at once."""
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    if duration < 0:
        raise ArgumentError("duration must be nonnegative")
    d = dimension or np.atleast_2d(np.asarray(A(float(starts[0])))).shape[0]
    if vectorized is None:
        vectorized = _probe_vectorized(A, float(starts[0]), d)
    return _rk4_batch(A, starts, float(duration), step, d, vectorized)


def _gap_key(x):
    return round(float(x), 10)


@dataclass(eq=False)
class ContinuousProcess:
    """Continuous-time linear process ``(t, s) -> S(t, s)`` for ``t >= s``.

    ``kind`` is ``"closed_form"`` (exact evaluator), ``"ode_generated"``
    (RK4 on ``generator``) or ``"sampled"`` (only grid times are evaluable).
    ``vectorized`` marks evaluators/generators that accept arrays of times.
    ``domain`` optionally restricts evaluable times.
    """

    kind: str
    evaluator: Callable
    dimension: int
    generator: Callable | None = None
    vectorized: bool = False
    domain: tuple | None = None
    step: float = DEFAULT_STEP
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("closed_form", "ode_generated", "sampled"):
            raise ArgumentError(f"unknown process kind {self.kind!r}")

    @classmethod
    def closed_form(cls, evaluator, dimension, generator=None, vectorized=False, domain=None):
        return cls("closed_form", evaluator, int(dimension), generator, vectorized, domain)

    @classmethod
    def from_generator(cls, A, dimension=None, step=DEFAULT_STEP, vectorized=None, domain=None):
        t0 = 0.0 if domain is None else float(domain[0])
        d = dimension or np.atleast_2d(np.asarray(A(t0))).shape[0]
        if vectorized is None:
            vectorized = _probe_vectorized(A, t0, d)
        proc = cls("ode_generated", None, int(d), A, vectorized, domain, step)
        proc.evaluator = proc._integrate_pair
        return proc

    @classmethod
    def autonomous(cls, C):
        """Closed-form ``exp(C (t - s))`` for a constant generator ``C``."""
        from scipy.linalg import expm

        C = np.atleast_2d(np.asarray(C, dtype=float))
        w, V = np.linalg.eig(C)
        diagonalizable = np.linalg.cond(V) < 1e8

        def ev(t, s):
            gap = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
            if diagonalizable:
                e = np.exp(np.multiply.outer(gap, w))
                out = np.einsum("ij,...j,jk->...ik", V, e, np.linalg.inv(V))
                return np.real_if_close(out, tol=1e6).real
            if gap.ndim == 0:
                return expm(C * float(gap))
            return np.array([expm(C * g) for g in gap.ravel()]).reshape(gap.shape + C.shape)

        return cls.closed_form(ev, C.shape[0], generator=lambda t: _const_stack(C, t),
                               vectorized=True)

    @classmethod
    def from_samples(cls, grid, steps):
        """Process known only on ``grid`` through its one-step matrices."""
        steps = _check_square_stack(steps)
        times = grid.times
        if len(steps) != len(times) - 1:
            raise ArgumentError("need one step matrix per grid interval")
        disc = DiscreteProcess(steps)

        def index(t):
            k = (t - grid.t_min) / grid.step
            i = int(round(k))
            if abs(k - i) > 1e-9 or not 0 <= i < len(times):
                raise WindowError(f"time {t} is not a node of the sampling grid")
            return i

        def ev(t, s):
            return propagate_discrete(disc, index(t), index(s))

        return cls("sampled", ev, disc.dimension, domain=(grid.t_min, grid.t_max))

    def _check_pair(self, t, s):
        if t < s - 1e-12 * max(1.0, abs(s)):
            raise ArgumentError(f"forward propagator needs t >= s (t={t}, s={s})")
        if self.domain is not None:
            lo, hi = self.domain
            tol = 1e-9 * max(1.0, abs(lo), abs(hi))
            if s < lo - tol or t > hi + tol:
                raise WindowError(f"[{s}, {t}] outside process domain [{lo}, {hi}]")

    def _integrate_pair(self, t, s):
        key = (_gap_key(s), _gap_key(t - s))
        hit = self._cache.get(key)
        if hit is None:
            hit = _rk4_batch(self.generator, np.array([float(s)]), float(t - s), self.step,
                             self.dimension, self.vectorized)[0]
            self._cache[key] = hit
        return hit

    def __call__(self, t, s):
        t, s = float(t), float(s)
        self._check_pair(t, s)
        if t == s:
            return np.eye(self.dimension)
        out = np.asarray(self.evaluator(t, s), dtype=float)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"process value at ({t}, {s}) is not finite")
        return out

    def batch(self, t, s):
        """Evaluate ``S(t_i, s_i)`` for paired arrays; returns shape ``(B, d, d)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if t.shape != s.shape:
            raise ArgumentError("t and s must have the same shape")
        if t.size and self.domain is not None:
            self._check_pair(max(t.max(), s.min()), s.min())
        if np.any(t < s - 1e-12 * np.maximum(1.0, np.abs(s))):
            raise ArgumentError("forward propagator needs t >= s")
        d = self.dimension
        if self.kind == "closed_form" and self.vectorized:
            out = np.asarray(self.evaluator(t, s), dtype=float).reshape(t.shape + (d, d))
        elif self.kind == "ode_generated":
            out = np.empty(t.shape + (d, d))
            gaps = np.array([_gap_key(g) for g in t - s])
            for g in np.unique(gaps):
                idx = np.nonzero(gaps == g)[0]
                keys = [(_gap_key(x), g) for x in s[idx]]
                missing = {}
                for j, k in zip(idx, keys):
                    if k not in self._cache and k not in missing:
                        missing[k] = s[j]
                if missing:
                    vals = _rk4_batch(self.generator, np.array(list(missing.values())), float(g),
                                      self.step, d, self.vectorized)
                    for k, v in zip(missing, vals):
                        self._cache[k] = v
                for j, k in zip(idx, keys):
                    out[j] = self._cache[k]
        else:
            out = np.array([self(ti, si) for ti, si in zip(t, s)]).reshape(t.shape + (d, d))
        if not np.all(np.isfinite(out)):
            raise NumericError("process values are not finite")
        return out


def _const_stack(C, t):
    t = np.asarray(t, dtype=float)
    return np.broadcast_to(C, t.shape + C.shape)


def propagator_table(P, times):
    """All forward propagators on a set of increasing times.

    Returns ``F`` with ``F[i, j] = S(t_i, t_j)`` for ``i >= j`` and zeros above
    the diagonal.  Closed-form processes are evaluated pair by pair; the rest
    are chained from consecutive steps.
    """
    times = np.asarray(times)
    n = len(times)
    if n < 1 or np.any(np.diff(times) <= 0):
        raise ArgumentError("times must be strictly increasing")
    d = P.dimension
    F = np.zeros((n, n, d, d))
    idx = np.arange(n)
    F[idx, idx] = np.eye(d)
    if isinstance(P, ContinuousProcess) and P.kind == "closed_form":
        ii, jj = np.tril_indices(n, -1)
        if len(ii):
            F[ii, jj] = P.batch(times[ii], times[jj])
        return F
    if isinstance(P, DiscreteProcess):
        steps = np.array([P(int(times[i + 1]), int(times[i])) for i in range(n - 1)])
    else:
        steps = P.batch(times[1:], times[:-1]) if n > 1 else np.zeros((0, d, d))
    for i in range(n - 1):
        F[i + 1, : i + 1] = steps[i] @ F[i, : i + 1]
    return F
