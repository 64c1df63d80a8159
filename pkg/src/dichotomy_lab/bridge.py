"""Passing between continuous and discrete dichotomies.

Sampling a continuous process at step ``l`` gives a discrete process whose
dichotomy exponent is ``alpha l``.  Conversely, discrete dichotomies of all
the samplings ``S(t + (n+1) l, t + n l)`` glue back into a continuous one once
the growth on short intervals is controlled.  This is how a small perturbation
of a continuous process is shown to keep its dichotomy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .dichotomy import DichotomyCertificate, ProjectionFamily, verify_dichotomy
from .discrete import admissibility_threshold, estimate_projections, perturbed_constants
from .errors import (
    AdmissibilityError,
    ArgumentError,
    ConvergenceError,
    HypothesisError,
    RobustnessHypothesisError,
)
from .parallel import ordered_map
from .process import (
    ContinuousProcess,
    DiscreteProcess,
    TimeGrid,
    integrate_generator,
    operator_norm,
)

__all__ = [
    "DiscretizationSpec",
    "Discretization",
    "GrowthConstant",
    "discretize",
    "sampled_steps",
    "growth_constant",
    "strip_pairs",
    "reconstruct_dichotomy",
    "robust_continuous",
    "RobustnessReport",
    "vcf_propagator",
    "vcf_process",
    "vcf_residual",
    "perturbation_bound_check",
    "gronwall_check",
]


@dataclass(frozen=True)
class DiscretizationSpec:
    """Sampling ``t + n l`` for ``n`` in ``window`` (inclusive index bounds)."""

    base_time: float
    step: float
    window: tuple = (-30, 30)

    def __post_init__(self):
        if not self.step > 0:
            raise ArgumentError("discretization step must be positive")
        if self.window[1] <= self.window[0]:
            raise ArgumentError("discretization window must contain at least one step")


@dataclass
class Discretization:
    """Discrete process sampled from a continuous one, with its projections.

    ``D`` and ``nu`` are the continuous-time constants of the bound
    ``K(t + m l) = D exp(nu |t + m l|)``; ``certificate`` is the discrete
    certificate ``(D exp(nu |t|), nu l, alpha l)``.
    """

    process: DiscreteProcess
    projections: ProjectionFamily
    certificate: DichotomyCertificate
    base_time: float
    step: float
    D: float
    nu: float


def sampled_steps(P, base_time, l, window):
    """One-step matrices ``P(t + (n+1) l, t + n l)`` for ``n`` in ``window``."""
    lo, hi = window
    starts = base_time + l * np.arange(lo, hi)
    return P.batch(starts + l, starts)


def discretize(P, spec, C, Q):
    """Sample ``P`` at ``t + n l``; the dichotomy carries over with exponent ``alpha l``."""
    lo, hi = int(spec.window[0]), int(spec.window[1])
    t, l = float(spec.base_time), float(spec.step)
    steps = sampled_steps(P, t, l, (lo, hi))
    idx = np.arange(lo, hi + 1)
    proj = ProjectionFamily.from_samples(idx.astype(float), Q.batch(t + l * idx), rank=Q.rank)
    cert = DichotomyCertificate(
        D=C.D * math.exp(C.nu * abs(t)), nu=C.nu * l, alpha=C.alpha * l
    )
    return Discretization(DiscreteProcess(steps, start=lo), proj, cert, t, l, C.D, C.nu)


@dataclass(frozen=True)
class GrowthConstant:
    """``L(nu, l)``: largest ``exp(-nu |t|) |S(t, s)|`` over ``0 <= t - s <= l``."""

    nu: float
    l: float
    value: float
    grid: TimeGrid
    argmax: tuple
    resolution: float

    def to_dict(self):
        return {
            "nu": self.nu,
            "l": self.l,
            "value": self.value,
            "grid": self.grid.to_dict(),
            "argmax": list(self.argmax),
            "resolution": self.resolution,
        }


def strip_pairs(grid, l, resolution=None):
    """Sample pairs ``(t, s)`` with ``0 <= t - s <= l`` inside the grid interval.

    Start times run over a lattice of spacing ``resolution`` (default
    ``min(grid.step, l / 10)``) and gaps over ``l / ceil(l / resolution)``.
    Returns arrays ``t, s`` grouped by gap, and the resolution used.
    """
    if not l > 0:
        raise ArgumentError("strip width must be positive")
    res = resolution or min(grid.step, l / 10)
    n_gap = int(math.ceil(l / res - 1e-9))
    gaps = np.linspace(0.0, l, n_gap + 1)
    n_s = int(math.floor((grid.t_max - grid.t_min) / res + 1e-9))
    s_all = grid.t_min + res * np.arange(n_s + 1)
    ts, ss = [], []
    for g in gaps:
        s = s_all[s_all + g <= grid.t_max + 1e-9]
        ts.append(s + g)
        ss.append(s)
    t = np.concatenate(ts)
    s = np.concatenate(ss)
    if t.size == 0:
        raise ArgumentError("the strip contains no grid pairs")
    return t, s, res


def growth_constant(P, nu, l, grid, resolution=None):
    """Sampled ``L(nu, l) = sup exp(-nu |t|) |P(t, s)|`` over ``0 <= t - s <= l``."""
    t, s, res = strip_pairs(grid, l, resolution)
    norms = operator_norm(P.batch(t, s)) * np.exp(-nu * np.abs(t))
    i = int(np.argmax(norms))
    return GrowthConstant(float(nu), float(l), float(norms[i]), grid, (float(t[i]), float(s[i])),
                          float(res))


def _estimated_zero_projection(disc, horizon):
    fam = estimate_projections(disc.process, horizon, indices=[0])
    return fam(0.0)


def reconstruct_dichotomy(discretizations, l, L, process=None, grid=None, estimate_horizon=None):
    """Glue discrete dichotomies of the samplings into a continuous one.

    Parameters
    ----------
    discretizations : mapping ``t -> Discretization``
        One sampling per base time, sharing the exponent ``alpha``.
    l : float
        Sampling step.
    L : GrowthConstant or float
        Short-interval growth ``L(nu, l)``.
    process : ContinuousProcess, optional
        When given (with ``grid``), the reconstructed certificate is verified.
    estimate_horizon : int, optional
        Estimate ``Q_0(t)`` from each sampled process instead of using the
        stored projections.

    Returns
    -------
    (ProjectionFamily, DichotomyCertificate, dict)
        ``Q(t) = Q_0(t)``, the certificate with exponent ``(alpha - nu l) / l``,
        bound ``D^2 e^{2 alpha} max(L, L^2)`` and rate ``2 nu``, and a report.
    """
    if not discretizations:
        raise ArgumentError("no discretizations given")
    items = sorted(discretizations.items())
    alpha = min(d.certificate.alpha for _, d in items)
    D = max(d.D for _, d in items)
    nu = max(d.nu for _, d in items)
    if not nu * l < alpha:
        raise HypothesisError(f"nu l = {nu * l:.6g} >= alpha = {alpha:.6g}", item="nu*l<alpha")
    Lval = float(L.value if isinstance(L, GrowthConstant) else L)
    times = np.array([t for t, _ in items], dtype=float)
    if estimate_horizon is None:
        mats = np.array([d.projections(0.0) for _, d in items])
    else:
        mats = np.array([_estimated_zero_projection(d, estimate_horizon) for _, d in items])
    rank = items[0][1].projections.rank
    Q = ProjectionFamily.from_samples(times, mats, rank=rank)
    alpha_hat = (alpha - nu * l) / l
    D_hat = D * D * math.exp(2 * alpha) * max(Lval, Lval * Lval)
    cert = DichotomyCertificate(D=max(1.0, D_hat), nu=2 * nu, alpha=alpha_hat, grid=grid)
    report = {
        "alpha_discrete": alpha,
        "nu": nu,
        "D": D,
        "l": l,
        "L": Lval,
        "alpha_hat": alpha_hat,
        "D_hat": D_hat,
        "nu_hat": 2 * nu,
    }
    if process is not None:
        if grid is None:
            raise ArgumentError("verification needs a grid")
        vr = verify_dichotomy(process, Q, cert, grid)
        report["verification"] = vr.to_dict()
    return Q, cert, report


@dataclass
class RobustnessReport:
    eps: float
    eps_pair: tuple
    threshold: float
    constants: dict
    L_T: dict
    alpha_hat: float
    D_tilde: float
    D_hat: float
    nu: float
    verification: dict = field(default_factory=dict)
    horizon: int = 30
    strip_resolution: float = 0.0

    @property
    def passed(self):
        return bool(self.verification.get("pass", False))

    def to_dict(self):
        return {
            "pass": self.passed,
            "eps": self.eps,
            "eps_pair": list(self.eps_pair),
            "threshold": self.threshold,
            "constants": self.constants,
            "L_T": self.L_T,
            "alpha_hat": self.alpha_hat,
            "D_tilde": self.D_tilde,
            "D_hat": self.D_hat,
            "nu": self.nu,
            "horizon": self.horizon,
            "strip_resolution": self.strip_resolution,
            "verification": self.verification,
        }


def _measure_eps(P, T, C, grid, resolution=None):
    t, s, res = strip_pairs(grid, 1.0, resolution)
    diff = operator_norm(P.batch(t, s) - T.batch(t, s)) * C.bound(t)
    i = int(np.argmax(diff))
    return float(diff[i]), (float(t[i]), float(s[i])), res


def robust_continuous(P, C, Q, T, grid, horizon=30, strip_resolution=None):
    """Dichotomy of a perturbed process ``T`` from that of ``P``.

    Measures ``eps = sup K(t) |P(t, s) - T(t, s)|`` over ``0 <= t - s <= 1``,
    turns it into perturbed discrete constants for the unit samplings, and
    reconstructs a continuous certificate with exponent ``alpha~ - nu`` and
    bound ``D~^2 e^{2 alpha~} max(L_T, L_T^2) e^{2 nu |s|}``.  Projections of
    ``T`` are estimated at each grid time from its unit sampling.

    Returns
    -------
    (ProjectionFamily, DichotomyCertificate, RobustnessReport)
    """
    if not C.valid:
        raise RobustnessHypothesisError("certificate needs alpha > nu", item="alpha>nu")
    eps, pair, res = _measure_eps(P, T, C, grid, strip_resolution)
    threshold = admissibility_threshold(C.alpha)
    partial = {"eps": eps, "eps_pair": list(pair), "threshold": threshold, "nu": C.nu}
    if not eps < threshold:
        raise RobustnessHypothesisError(
            f"perturbation eps={eps:.4g} is not below the threshold {threshold:.4g}",
            item="eps<threshold", report=partial,
        )
    try:
        const = perturbed_constants(C.alpha, eps, C.D)
    except AdmissibilityError as exc:
        raise RobustnessHypothesisError(str(exc), item=exc.item, report=partial) from exc
    partial["constants"] = const.to_dict()
    if not const.alpha_tilde > C.nu:
        raise RobustnessHypothesisError(
            f"perturbed exponent {const.alpha_tilde:.4g} does not exceed nu={C.nu:.4g}",
            item="alpha_tilde>nu", report=partial,
        )
    D_tilde = C.D * (1 + eps / ((1 - const.rho) * (1 - math.exp(-C.alpha)))) * max(const.D1,
                                                                                  const.D2)
    L_T = growth_constant(T, C.nu, 1.0, grid, strip_resolution)
    times = [float(t) for t in grid.times]
    # one batch for every unit step, then independent projection estimates per time
    starts = np.unique(np.round(np.add.outer(times, np.arange(-horizon, horizon)).ravel(), 10))
    T.batch(starts + 1.0, starts)

    def sample(t):
        steps = sampled_steps(T, t, 1.0, (-horizon, horizon))
        proc = DiscreteProcess(steps, start=-horizon)
        Qt = estimate_projections(proc, horizon, indices=[0])
        cert = DichotomyCertificate(D=D_tilde * math.exp(C.nu * abs(t)), nu=C.nu,
                                    alpha=const.alpha_tilde)
        return Discretization(proc, Qt, cert, t, 1.0, D_tilde, C.nu)

    discs = dict(zip(times, ordered_map(sample, times)))
    QT, cert, rec = reconstruct_dichotomy(discs, 1.0, L_T, process=T, grid=grid)
    report = RobustnessReport(
        eps=eps,
        eps_pair=pair,
        threshold=threshold,
        constants=const.to_dict(),
        L_T=L_T.to_dict(),
        alpha_hat=cert.alpha,
        D_tilde=D_tilde,
        D_hat=rec["D_hat"],
        nu=C.nu,
        verification=rec["verification"],
        horizon=horizon,
        strip_resolution=res,
    )
    return QT, cert, report


def _sum_generator(A, B):
    def gen(t):
        return np.asarray(A(t), dtype=float) + np.asarray(B(t), dtype=float)

    return gen


def _picard_vcf(P, B, t, s, step, tol=1e-10, max_iter=100):
    duration = t - s
    n = max(1, int(math.ceil(duration / step - 1e-9)))
    nodes = s + np.minimum(np.arange(n + 1) * step, duration)
    nodes[-1] = t
    d = P.dimension
    S_steps = np.array([P(nodes[i + 1], nodes[i]) for i in range(n)])
    S_from_s = np.empty((n + 1, d, d))
    S_from_s[0] = np.eye(d)
    for i in range(n):
        S_from_s[i + 1] = S_steps[i] @ S_from_s[i]
    Bn = np.array([np.asarray(B(float(x)), dtype=float) for x in nodes])
    h = np.diff(nodes)
    Tn = S_from_s.copy()
    for it in range(max_iter):
        new = np.empty_like(Tn)
        new[0] = np.eye(d)
        acc = np.zeros((d, d))
        for i in range(n):
            acc = S_steps[i] @ (acc + 0.5 * h[i] * Bn[i] @ Tn[i]) + 0.5 * h[i] * Bn[i + 1] @ Tn[i + 1]
            new[i + 1] = S_from_s[i + 1] + acc
        change = float(np.max(np.abs(new - Tn)))
        Tn = new
        if change < tol * max(1.0, float(np.max(np.abs(Tn)))):
            return Tn[-1]
    raise ConvergenceError(f"Picard iteration did not converge in {max_iter} iterations")


def vcf_propagator(P, B, t, s, step=1e-3):
    """Solution ``T(t, s)`` of ``T = S + int_s^t S(t, r) B(r) T(r, s) dr``.

    Uses the generator ``A + B`` when ``P`` has one, else Picard iteration
    with trapezoidal quadrature at resolution ``step``.
    """
    if t < s:
        raise ArgumentError("vcf_propagator needs t >= s")
    if t == s:
        return np.eye(P.dimension)
    if P.generator is not None:
        return integrate_generator(_sum_generator(P.generator, B), t, s, step, P.dimension)
    return _picard_vcf(P, B, float(t), float(s), step)


def vcf_process(P, B, step=1e-3):
    """Perturbed process ``T`` as a ``ContinuousProcess``."""
    if P.generator is not None:
        gen = _sum_generator(P.generator, B)
        return ContinuousProcess.from_generator(gen, P.dimension, step=step, domain=P.domain)
    return ContinuousProcess.closed_form(lambda t, s: _picard_vcf(P, B, t, s, step), P.dimension,
                                         domain=P.domain)


def vcf_residual(P, B, T, t, s, step=1e-3):
    """Relative residual ``|T - S - int S B T| / |T|`` with trapezoidal quadrature."""
    n = max(1, int(math.ceil((t - s) / step - 1e-9)))
    r = np.linspace(s, t, n + 1)
    # T(r_i, s) by chaining one batch of consecutive steps
    steps = T.batch(r[1:], r[:-1])
    T_from_s = np.empty((n + 1, P.dimension, P.dimension))
    T_from_s[0] = np.eye(P.dimension)
    for i in range(n):
        T_from_s[i + 1] = steps[i] @ T_from_s[i]
    S_to_t = P.batch(np.full_like(r, t), r)
    B_r = np.array([np.asarray(B(float(x)), dtype=float) for x in r])
    integrand = S_to_t @ B_r @ T_from_s
    integral = trapezoid(integrand, r, axis=0)
    Tts = T(t, s)
    return operator_norm(Tts - P(t, s) - integral) / max(operator_norm(Tts), 1e-300)


def perturbation_bound_check(B, delta, nu, grid):
    """True iff ``|B(t)| < delta exp(-3 nu |t|)`` at every grid node."""
    times = grid.times
    vals = np.asarray(B(times), dtype=float)
    if vals.shape[:1] != times.shape:
        vals = np.array([np.asarray(B(float(x)), dtype=float) for x in times])
    norms = operator_norm(vals)
    return bool(np.all(norms < delta * np.exp(-3 * nu * np.abs(times))))


def gronwall_check(P, B, T, nu, grid, L_S=None, quad_points=201):
    """Ratios of ``exp(-nu|t|)|T(t,s)|`` to the Gronwall bound on ``0 <= t - s <= 1``.

    The bound is ``L_S exp(L_S int_s^t |B(r)| exp(nu |r|) dr)``; every ratio
    should be at most 1.  Returns ``(ratios, L_S)``.
    """
    if L_S is None:
        L_S = growth_constant(P, nu, 1.0, grid).value
    t, s, _ = strip_pairs(grid, 1.0)
    lhs = operator_norm(T.batch(t, s)) * np.exp(-nu * np.abs(t))
    u = np.linspace(0.0, 1.0, quad_points)
    r = s[:, None] + (t - s)[:, None] * u[None, :]
    vals = np.asarray(B(r.ravel()), dtype=float).reshape(r.shape + (P.dimension, P.dimension))
    w = operator_norm(vals) * np.exp(nu * np.abs(r))
    integral = (t - s) * trapezoid(w, u, axis=1)
    rhs = L_S * np.exp(L_S * integral)
    return lhs / rhs, float(L_S)
