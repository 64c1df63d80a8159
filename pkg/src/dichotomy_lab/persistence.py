"""Bounded solutions of semilinear systems near a hyperbolic solution.

For ``y' = A(t) y + f(t, y)`` with a bounded solution ``xi`` whose
linearization ``L_f`` has a nonuniform dichotomy, bounded solutions of a
nearby system ``y' = A(t) y + g(t, y)`` are fixed points of

    (F phi)(t) = int G_f(t, s) h(s, phi(s)) ds,
    h(s, phi) = g(s, xi + phi) - f(s, xi) - D_x f(s, xi) phi,

with ``G_f`` the Green function of ``L_f``.  Picard iteration of ``F`` on a
truncated time window yields the persisted solution ``psi = xi + phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import growth_constant, perturbation_bound_check, robust_continuous, vcf_process
from .dichotomy import (
    DichotomyCertificate,
    ProjectionFamily,
    dichotomy_tables,
    fit_certificate,
    verify_tables,
)
from .discrete import estimate_projections
from .errors import (
    ArgumentError,
    ConvergenceError,
    DegeneracyError,
    DivergenceError,
    HypothesisError,
    NonContractionError,
    WindowError,
)
from .process import ContinuousProcess, DiscreteProcess, TimeGrid, operator_norm

__all__ = [
    "SemilinearSystem",
    "GlobalTrajectory",
    "FixedPointReport",
    "GreenOperator",
    "PersistenceSetup",
    "mild_solve",
    "linearize_along",
    "rho_of_eps",
    "isolation_radius",
    "green_integral_apply",
    "prepare_persistence",
    "persist_solution",
]

BLOWUP = 1e8


@dataclass
class SemilinearSystem:
    """``y' = A(t) y + f(t, y)`` over the linear process ``base``.

    ``f(t, x)`` returns a vector and ``df(t, x)`` the Jacobian in ``x``.  With
    ``vectorized=True`` both accept a time array of shape ``(n,)`` and states
    of shape ``(n, d)``, returning ``(n, d)`` and ``(n, d, d)``.
    """

    base: ContinuousProcess
    f: object
    df: object
    vectorized: bool = False

    @property
    def dimension(self):
        return self.base.dimension

    def f_many(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.vectorized:
            return np.asarray(self.f(t, x), dtype=float).reshape(x.shape)
        return np.array([np.asarray(self.f(float(a), b), dtype=float) for a, b in zip(t, x)])

    def df_many(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        d = self.dimension
        if self.vectorized:
            return np.asarray(self.df(t, x), dtype=float).reshape(x.shape[:-1] + (d, d))
        return np.array([np.asarray(self.df(float(a), b), dtype=float) for a, b in zip(t, x)])

    def check_derivative(self, times, states, rel_tol=1e-5, h=1e-6):
        """Largest relative mismatch between ``df`` and central differences of ``f``."""
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        d = self.dimension
        J = self.df_many(times, states)
        fd = np.empty_like(J)
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            fd[..., :, k] = (self.f_many(times, states + e) - self.f_many(times, states - e)) / (2 * h)
        err = operator_norm(J - fd) / np.maximum(1.0, operator_norm(J))
        worst = float(np.max(err))
        if worst > rel_tol:
            raise ArgumentError(f"df disagrees with finite differences of f ({worst:.2e})")
        return worst


@dataclass
class GlobalTrajectory:
    """States ``values[i]`` at the grid nodes; ``bound`` is an upper bound on their norms."""

    grid: TimeGrid
    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.count:
            raise ArgumentError("values must have one row per grid node")
        sup = self.sup_norm()
        if self.bound is None:
            self.bound = sup
        elif sup > self.bound * (1 + 1e-12) + 1e-300:
            raise ArgumentError(f"trajectory norm {sup:.3e} exceeds its bound {self.bound:.3e}")

    @classmethod
    def zeros(cls, grid, dimension, bound=None):
        return cls(grid, np.zeros((grid.count, dimension)), bound)

    @property
    def times(self):
        return self.grid.times

    @property
    def dimension(self):
        return self.values.shape[1]

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def __call__(self, t):
        """Linear interpolation between nodes; outside the grid raises ``WindowError``."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.grid.t_min, self.grid.t_max
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise WindowError(f"time outside trajectory window [{lo}, {hi}]")
        times = self.times
        out = np.stack([np.interp(t, times, self.values[:, k]) for k in range(self.dimension)],
                       axis=-1)
        return out

    def to_rows(self):
        return [[float(t), *map(float, v)] for t, v in zip(self.times, self.values)]


@dataclass
class FixedPointReport:
    iterations: int
    contraction_ratios: list
    final_residual: float
    sup_distance: float
    converged: bool
    residual_history: list = field(default_factory=list)
    hypotheses: dict = field(default_factory=dict)
    tolerance: float = 1e-8
    truncation_bound: float = 0.0

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "contraction_ratios": list(self.contraction_ratios),
            "final_residual": self.final_residual,
            "sup_distance": self.sup_distance,
            "converged": bool(self.converged),
            "residual_history": list(self.residual_history),
            "tolerance": self.tolerance,
            "truncation_bound": self.truncation_bound,
            "hypotheses": self.hypotheses,
        }


def _rk4_semilinear(S, s, y, n, h):
    d = S.dimension
    A = S.base.generator
    out = np.empty((n + 1, d))
    out[0] = y

    def rhs(t, x):
        return np.asarray(A(t), dtype=float) @ x + S.f_many(np.array([t]), x[None])[0]

    t = s
    for i in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = s + (i + 1) * h
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > BLOWUP:
            raise DivergenceError(f"mild solution blew up near t={t:.4g}")
        out[i + 1] = y
    return out


def _picard_semilinear(S, s, y0, grid, tol=1e-12, max_iter=200):
    times = grid.times
    n = len(times) - 1
    h = grid.step
    steps = S.base.batch(times[1:], times[:-1])
    d = S.dimension
    lin = np.empty((n + 1, d))
    lin[0] = y0
    for i in range(n):
        lin[i + 1] = steps[i] @ lin[i]
    y = lin.copy()
    for _ in range(max_iter):
        fv = S.f_many(times, y)
        new = np.empty_like(y)
        new[0] = y0
        acc = np.zeros(d)
        for i in range(n):
            acc = steps[i] @ (acc + 0.5 * h * fv[i]) + 0.5 * h * fv[i + 1]
            new[i + 1] = lin[i + 1] + acc
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > BLOWUP:
            raise DivergenceError("mild solution blew up")
        change = float(np.max(np.abs(new - y)))
        y = new
        if change < tol * (1 + float(np.max(np.abs(y)))):
            return y
    raise ConvergenceError("Picard iteration for the mild solution did not converge")


def mild_solve(S, s, y_s, horizon, step=1e-3):
    """Solution of ``y = T(t,s) y_s + int_s^t T(t,r) f(r, y(r)) dr`` on ``[s, s + horizon]``.

    RK4 on ``y' = A y + f`` when the base has a generator, otherwise Picard
    iteration with trapezoidal quadrature.
    """
    if not step > 0 or not horizon > 0:
        raise ArgumentError("step and horizon must be positive")
    n = max(1, int(round(horizon / step)))
    h = horizon / n
    grid = TimeGrid.from_count(s, h, n + 1)
    y_s = np.asarray(y_s, dtype=float)
    if S.base.generator is not None:
        vals = _rk4_semilinear(S, float(s), y_s, n, h)
    else:
        vals = _picard_semilinear(S, float(s), y_s, grid)
    return GlobalTrajectory(grid, vals)


def _vectorized_along(S, xi):
    """``t -> df(t, xi(t))`` accepting scalar or array times."""

    def B(t):
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        J = S.df_many(flat, xi(flat))
        return J.reshape(t.shape + J.shape[-2:])

    return B


def linearize_along(S, xi, step=1e-3):
    """Variational process ``z' = (A(t) + D_x f(t, xi(t))) z`` on the window of ``xi``.

    ``xi`` is interpolated linearly between its nodes.  When ``D_x f`` vanishes
    at every node and midpoint of ``xi`` the base process is returned.
    """
    domain = (xi.grid.t_min, xi.grid.t_max)
    B = _vectorized_along(S, xi)
    t = xi.times
    mids = 0.5 * (t[1:] + t[:-1])
    if not np.any(B(t)) and not np.any(B(mids)):
        return S.base
    if S.base.generator is not None:
        A = S.base.generator
        base_vec = S.base.vectorized

        def gen(tt):
            tt = np.asarray(tt, dtype=float)
            if base_vec:
                a = np.asarray(A(tt), dtype=float)
            elif tt.ndim == 0:
                a = np.asarray(A(float(tt)), dtype=float)
            else:
                a = np.array([A(float(x)) for x in tt.ravel()]).reshape(tt.shape + (S.dimension,) * 2)
            return a + B(tt)

        return ContinuousProcess.from_generator(gen, S.dimension, step=step, vectorized=True,
                                                domain=domain)
    proc = vcf_process(S.base, B, step=step)
    proc.domain = domain
    return proc


def _ball_samples(d, radius, count, seed):
    """Coordinate boundary points, the origin direction set, and uniform ball samples."""
    rng = np.random.default_rng(seed)
    eye = np.eye(d)
    boundary = np.concatenate([eye, -eye]) * radius
    g = rng.standard_normal((count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / d)
    return np.concatenate([boundary, g * r[:, None]])


def rho_of_eps(S, xi, eps, nu, sample_count=200, seed=42, times=None):
    """Sampled ``sup e^{nu|t|} |f(t, xi+x) - f(t, xi) - D_x f(t, xi) x| / |x|`` over ``|x| <= eps``.

    Times default to the nodes of ``xi``; directions are the coordinate
    boundary points plus ``sample_count`` seeded uniform samples of the ball.
    """
    if not eps > 0:
        raise ArgumentError("eps must be positive")
    t = xi.times if times is None else np.asarray(times, dtype=float)
    base = xi(t)
    X = _ball_samples(S.dimension, eps, sample_count, seed)
    norms = np.linalg.norm(X, axis=1)
    X, norms = X[norms > 0], norms[norms > 0]
    f0 = S.f_many(t, base)
    J = S.df_many(t, base)
    weight = np.exp(nu * np.abs(t))
    worst = 0.0
    for x, nx in zip(X, norms):
        pert = S.f_many(t, base + x)
        rem = pert - f0 - J @ x
        worst = max(worst, float(np.max(np.linalg.norm(rem, axis=1) * weight)) / nx)
    return worst


def isolation_radius(C, rho_fn, k_max=30):
    """Largest ``eps = 2^{-k}`` with ``2 D rho(eps) / alpha < 1``."""
    if not C.valid:
        raise ArgumentError("certificate needs alpha > nu")
    for k in range(k_max + 1):
        eps = 2.0 ** (-k)
        if 2 * C.D * rho_fn(eps) / C.alpha < 1:
            return eps
    raise DegeneracyError(f"no isolation radius down to 2^-{k_max}")


class GreenOperator:
    """Trapezoidal discretization of ``phi -> int G(t, s) phi(s) ds`` on a uniform grid.

    The kernel jumps by the identity across ``s = t``; the diagonal node gets
    the average ``(I - 2 Q(t)) / 2`` of its one-sided limits.  Integration runs
    over ``[t - tail_T, t + tail_T]`` clipped to the grid.
    """

    def __init__(self, process, projections, grid, tail_T=None, tables=None):
        self.grid = grid
        self.times = grid.times
        self.tail_T = tail_T
        n, h = len(self.times), grid.step
        F, Qs, Bk = tables if tables is not None else dichotomy_tables(
            process, projections, self.times)
        d = Qs.shape[-1]
        eye = np.eye(d)
        G = np.zeros((n, n, d, d))
        ii, jj = np.tril_indices(n, -1)
        G[ii, jj] = F[ii, jj] @ (eye - Qs[jj])
        bi, bj = np.triu_indices(n, 1)
        G[bi, bj] = -Bk[bi, bj]
        idx = np.arange(n)
        G[idx, idx] = 0.5 * (eye - 2 * Qs)
        w = np.full((n, n), h)
        if tail_T is not None:
            w[np.abs(self.times[:, None] - self.times[None, :]) > tail_T + 1e-9 * h] = 0.0
        # one-sided ends of each integration range get half weight
        reach = np.abs(self.times[:, None] - self.times[None, :]) <= (tail_T or np.inf) + 1e-9 * h
        first = np.argmax(reach, axis=1)
        last = n - 1 - np.argmax(reach[:, ::-1], axis=1)
        w[idx, first] *= 0.5
        w[idx, last] *= 0.5
        # the diagonal carries both one-sided limits, so ends that coincide with it
        # must use the matching one-sided value instead of the average
        left_end = first == idx
        right_end = last == idx
        G[idx[left_end], idx[left_end]] = -Qs[left_end]
        G[idx[right_end], idx[right_end]] = eye - Qs[right_end]
        w[idx[left_end], idx[left_end]] = 0.5 * h
        w[idx[right_end], idx[right_end]] = 0.5 * h
        self.kernel = G * w[:, :, None, None]
        self.first, self.last = first, last

    def apply(self, hvals):
        return np.einsum("ijab,jb->ia", self.kernel, hvals)

    def truncation_bound(self, C, H):
        """Certificate bound on the integral dropped outside each node's range."""
        t = self.times
        left = t - t[self.first]
        right = t[self.last] - t
        tail = C.D * H * (np.exp(-C.alpha * left) + np.exp(-C.alpha * right)) / C.alpha
        return float(np.max(tail))


def _check_envelope(times, hvals, C):
    """Raise if ``e^{nu|s|} |h(s)|`` grows at the window ends at rate ``>= alpha``."""
    w = np.linalg.norm(hvals, axis=1) * np.exp(C.nu * np.abs(times))
    H = float(np.max(w))
    n = len(times)
    q = max(3, n // 4)
    for sl in (slice(0, q), slice(n - q, n)):
        ws = w[sl]
        if np.all(ws > 0):
            slope = np.polyfit(np.abs(times[sl]), np.log(ws), 1)[0]
            if slope >= C.alpha:
                raise DivergenceError(
                    f"forcing envelope grows at rate {slope:.3g} >= alpha={C.alpha:.3g}"
                )
    return H


def green_integral_apply(G, h, phi, quad_step=None, tail_T=None, tol=1e-8, operator=None):
    """``(F phi)(t) = int G(t, s) h(s, phi(s)) ds`` at the nodes of ``phi``.

    Parameters
    ----------
    G : GreenFunction
        Carries the process, projections and a certificate.
    h : callable
        ``h(times, states)`` returning forcing values of shape ``(n, d)``.
    phi : GlobalTrajectory
    quad_step : float, optional
        Quadrature step; must divide the node spacing of ``phi``.
    tail_T : float, optional
        Half-width of the integration range.  By default the smallest width
        whose certificate tail ``2 D H e^{-alpha T} / alpha`` is below
        ``0.1 tol``, where ``H = sup e^{nu|s|} |h(s, phi(s))|``.
    operator : GreenOperator, optional
        Precomputed kernel on the quadrature grid.

    Returns
    -------
    GlobalTrajectory
    """
    C = G.certificate
    if C is None:
        raise ArgumentError("green_integral_apply needs a certificate on the Green function")
    if not C.valid:
        raise HypothesisError("alpha <= nu", item="alpha>nu")
    grid = phi.grid
    step = quad_step or grid.step
    ratio = grid.step / step
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-9:
        raise ArgumentError("quad_step must divide the trajectory step")
    qgrid = grid if r == 1 else TimeGrid(grid.t_min, grid.t_max, grid.step / r)
    qt = qgrid.times
    states = phi(qt) if r > 1 else phi.values
    hvals = np.asarray(h(qt, states), dtype=float).reshape(len(qt), -1)
    H = _check_envelope(qt, hvals, C)
    if tail_T is None and H > 0:
        tail_T = max(qgrid.step, math.log(max(2 * C.D * H / (C.alpha * 0.1 * tol), 1.0)) / C.alpha)
    if operator is None:
        operator = GreenOperator(G.process, G.projections, qgrid, tail_T)
    out = operator.apply(hvals)[::r]
    return GlobalTrajectory(grid, out)


@dataclass
class PersistenceSetup:
    """Linearization along ``xi`` with its dichotomy data on a working grid."""

    system: SemilinearSystem
    xi: GlobalTrajectory
    process: ContinuousProcess
    projections: ProjectionFamily
    certificate: DichotomyCertificate
    grid: TimeGrid
    operator: GreenOperator
    verification: dict


def prepare_persistence(S_f, xi, certificate=None, projections=None, window=20.0, step=0.1,
                        horizon=12):
    """Linearize along ``xi`` and tabulate its Green function on ``[-window, window]``.

    Without ``projections`` they are estimated from unit samplings of ``L_f``
    (which then needs ``xi`` on ``[-window - horizon, window + horizon]``);
    without ``certificate`` one is fitted on the working grid.
    """
    n = int(round(2 * window / step))
    grid = TimeGrid.from_count(-window, 2 * window / n, n + 1)
    L_f = linearize_along(S_f, xi)
    if projections is None:
        mats = []
        for t in grid.times:
            starts = t + np.arange(-horizon, horizon)
            steps = L_f.batch(starts + 1.0, starts)
            proc = DiscreteProcess(steps, start=-horizon)
            mats.append(estimate_projections(proc, horizon, indices=[0])(0.0))
        projections = ProjectionFamily.from_samples(grid.times, np.array(mats))
    tables = dichotomy_tables(L_f, projections, grid.times)
    if certificate is None:
        certificate = fit_certificate(L_f, projections, grid)
    report = verify_tables(grid.times, *tables, certificate, grid.to_dict())
    op = GreenOperator(L_f, projections, grid, None, tables=tables)
    return PersistenceSetup(S_f, xi, L_f, projections, certificate, grid, op, report.to_dict())


def _closeness(S_f, S_g, times, M, samples, seed):
    """``sup_{|x| <= M} |f - g| + |D_x f - D_x g|`` at each time."""
    d = S_f.dimension
    X = np.concatenate([np.zeros((1, d)), _ball_samples(d, M, samples, seed)]) if M > 0 \
        else np.zeros((1, d))
    worst = np.zeros(len(times))
    for x in X:
        xs = np.broadcast_to(x, (len(times), d))
        diff = np.linalg.norm(S_f.f_many(times, xs) - S_g.f_many(times, xs), axis=1)
        ddiff = operator_norm(S_f.df_many(times, xs) - S_g.df_many(times, xs))
        worst = np.maximum(worst, diff + ddiff)
    return worst


def _derivative_envelope(S_f, times, M, nu, samples, seed):
    d = S_f.dimension
    X = np.concatenate([np.zeros((1, d)), _ball_samples(d, M, samples, seed)]) if M > 0 \
        else np.zeros((1, d))
    weight = np.exp(nu * np.abs(times))
    return max(float(np.max(operator_norm(S_f.df_many(times, np.broadcast_to(x, (len(times), d))))
                            * weight)) for x in X)


def check_persistence_hypotheses(setup, S_g, eps, delta, sample_count=200, seed=42):
    """Evaluate the persistence hypotheses on the working grid; returns a dict of items."""
    S_f, xi, C = setup.system, setup.xi, setup.certificate
    times = setup.grid.times
    items = {}
    L = growth_constant(S_f.base, C.nu, 1.0, setup.grid)
    items["base_growth"] = {"value": L.value, "ok": bool(np.isfinite(L.value))}
    items["dichotomy"] = {"alpha": C.alpha, "nu": C.nu, "D": C.D,
                          "ok": bool(C.valid and setup.verification["pass"])}
    items["xi_bound"] = {"sup": xi.sup_norm(), "M": xi.bound,
                         "ok": bool(xi.sup_norm() <= xi.bound * (1 + 1e-12))}
    rho = rho_of_eps(S_f, xi, eps, C.nu, sample_count, seed, times=times)
    items["rho"] = {"rho": rho, "value": 4 * C.D * rho / C.alpha,
                    "ok": bool(4 * C.D * rho / C.alpha < 1)}
    env = _derivative_envelope(S_f, times, xi.bound, C.nu, sample_count, seed)
    items["derivative_envelope"] = {"value": env, "ok": bool(np.isfinite(env))}
    close = _closeness(S_f, S_g, times, xi.bound, sample_count, seed)
    allowed = np.exp(-3 * C.nu * np.abs(times)) * min(eps * C.alpha / (4 * C.D), delta)
    items["closeness"] = {"worst_ratio": float(np.max(close / allowed)),
                          "ok": bool(np.all(close < allowed))}
    return items


def persist_solution(S_f, xi, S_g, eps, delta, certificate=None, projections=None, initial=None,
                     tol=1e-8, max_iter=200, setup=None, certify=True, check_hypotheses=True,
                     window=20.0, step=0.1, horizon=12, check_window=8.0, sample_count=200,
                     seed=42):
    """Persisted solution ``psi`` of the ``g``-system near the hyperbolic solution ``xi``.

    Parameters
    ----------
    S_f, S_g : SemilinearSystem
        Original and perturbed systems over the same base process.
    xi : GlobalTrajectory
        Bounded solution of the ``f``-system; its ``bound`` plays the role of ``M``.
    eps : float
        Radius of the ball in which the fixed point is sought.
    delta : float
        Perturbation size for which the dichotomy of the linearization is robust.
    certificate, projections : optional
        Dichotomy data of the linearization along ``xi``.
    initial : array or GlobalTrajectory, optional
        Starting deviation ``phi_0`` on the working grid (default zero), or a
        trajectory used as the first guess for ``psi``.
    setup : PersistenceSetup, optional
        Reuse a precomputed linearization and Green kernel.
    certify : bool
        Certify the linearization along ``psi`` as a perturbation of that
        along ``xi``.

    Returns
    -------
    (GlobalTrajectory, FixedPointReport, DichotomyCertificate or None)
    """
    if not eps > 0 or not delta > 0:
        raise ArgumentError("eps and delta must be positive")
    if setup is None:
        setup = prepare_persistence(S_f, xi, certificate, projections, window, step, horizon)
    C, grid = setup.certificate, setup.grid
    times = grid.times
    d = S_f.dimension
    hyp = {}
    if check_hypotheses:
        hyp = check_persistence_hypotheses(setup, S_g, eps, delta, sample_count, seed)
        for name, item in hyp.items():
            if not item["ok"]:
                raise HypothesisError(f"persistence hypothesis '{name}' fails: {item}", item=name,
                                      report=hyp)
    xi_t = xi(times)
    f_xi = S_f.f_many(times, xi_t)
    J_xi = S_f.df_many(times, xi_t)

    def h(phi):
        return S_g.f_many(times, xi_t + phi) - f_xi - np.einsum("nab,nb->na", J_xi, phi)

    if initial is None:
        phi = np.zeros((len(times), d))
    elif isinstance(initial, GlobalTrajectory):
        phi = initial(times) - xi_t
    else:
        phi = np.array(initial, dtype=float)
    if phi.shape != (len(times), d):
        raise ArgumentError(f"initial guess must have shape {(len(times), d)}")
    residuals, ratios = [], []
    slow = 0
    H = 0.0
    converged = False
    for it in range(max_iter + 1):
        hv = h(phi)
        H = max(H, _check_envelope(times, hv, C))
        new = setup.operator.apply(hv)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > BLOWUP:
            raise DivergenceError("Picard iterates blew up")
        res = float(np.max(np.linalg.norm(new - phi, axis=1)))
        if residuals:
            ratio = res / residuals[-1] if residuals[-1] > 0 else 0.0
            ratios.append(ratio)
            slow = slow + 1 if ratio > 0.9 else 0
            if slow >= 5:
                raise NonContractionError(f"contraction ratio above 0.9 for 5 iterations (last {ratio:.3f})")
        residuals.append(res)
        phi = new
        if res < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (residual {residuals[-1]:.2e})")
    psi_vals = xi_t + phi
    sup_dist = float(np.max(np.linalg.norm(phi, axis=1)))
    report = FixedPointReport(
        iterations=len(residuals) - 1,
        contraction_ratios=ratios,
        final_residual=residuals[-1],
        sup_distance=sup_dist,
        converged=converged,
        residual_history=residuals,
        hypotheses=hyp,
        tolerance=tol,
        truncation_bound=setup.operator.truncation_bound(C, H),
    )
    if not sup_dist < eps:
        raise HypothesisError(f"fixed point leaves the eps-ball (sup {sup_dist:.3e} >= {eps})",
                              item="eps_ball", report=report.to_dict())
    psi = GlobalTrajectory(grid, psi_vals)
    cert_g = None
    if certify:
        cert_g = certify_linearization(setup, S_g, psi, delta, horizon, check_window, report)
    return psi, report, cert_g


def certify_linearization(setup, S_g, psi, delta, horizon=12, check_window=8.0, report=None):
    """Dichotomy of the linearization along ``psi`` as a perturbation of that along ``xi``."""
    C = setup.certificate
    L_g = linearize_along(S_g, psi)
    B_f = _vectorized_along(setup.system, setup.xi)
    B_g = _vectorized_along(S_g, psi)

    def B(t):
        return B_g(t) - B_f(t)

    check = TimeGrid(-check_window, check_window, 0.25)
    small = perturbation_bound_check(B, delta, C.nu, setup.grid)
    _, cert, rob = robust_continuous(setup.process, C, setup.projections, L_g, check,
                                     horizon=horizon)
    if report is not None:
        report.hypotheses["linearization_perturbation"] = {"delta": delta, "ok": small}
        report.hypotheses["robustness"] = rob.to_dict()
    if not rob.passed:
        raise HypothesisError("linearization along psi fails its reconstructed certificate",
                              item="robustness", report=rob.to_dict())
    return cert
