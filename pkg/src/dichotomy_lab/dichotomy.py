"""Projection families, dichotomy certificates and Green functions.

A process ``S`` has a nonuniform exponential dichotomy with projections
``Q(t)`` when ``Q(t) S(t, s) = S(t, s) Q(s)``, ``S(t, s)`` is invertible from
``range Q(s)`` onto ``range Q(t)``, and with ``K(s) = D exp(nu |s|)``

* ``|S(t, s)(I - Q(s))| <= K(s) exp(-alpha (t - s))`` for ``t >= s``,
* ``|S(t, s) Q(s)| <= K(s) exp(alpha (t - s))`` for ``t < s``,

where in the second line ``S(t, s)`` is the inverse on the unstable range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import (
    ArgumentError,
    NoDichotomyError,
    NumericError,
    SingularityError,
    WindowError,
)
from .process import DiscreteProcess, TimeGrid, operator_norm, propagator_table

__all__ = [
    "ProjectionFamily",
    "DichotomyCertificate",
    "GreenFunction",
    "VerificationReport",
    "range_basis",
    "green_eval",
    "backward_on_range",
    "verify_dichotomy",
    "verify_tables",
    "dichotomy_tables",
    "fit_certificate",
    "grid_times",
]

RANK_TOL = 1e-8
RATIO_TOL = 1e-6
COMMUTATOR_TOL = 1e-6
SINGULAR_COND = 1e12


def range_basis(Q, rank=None):
    """Orthonormal basis (columns) of the column space of ``Q``."""
    U, sv, _ = np.linalg.svd(np.asarray(Q, dtype=float))
    k = int(np.sum(sv > RANK_TOL)) if rank is None else int(rank)
    return U[:, :k]


class ProjectionFamily:
    """Time-indexed projections ``Q(t)`` of constant rank.

    Parameters
    ----------
    at : callable
        Maps a time (or integer index) to a ``d x d`` matrix.
    dimension : int
    rank : int
        Rank of every ``Q(t)``; the dimension of the unstable range.
    vectorized : bool
        Whether ``at`` accepts an array of times and returns a stack.
    """

    def __init__(self, at, dimension, rank, vectorized=False):
        self.at = at
        self.dimension = int(dimension)
        self.rank = int(rank)
        self.vectorized = vectorized
        if not 0 <= self.rank <= self.dimension:
            raise ArgumentError(f"rank {rank} outside [0, {dimension}]")

    @classmethod
    def constant(cls, Q):
        Q = np.array(Q, dtype=float)
        Q.setflags(write=False)
        rank = int(np.sum(np.linalg.svd(Q, compute_uv=False) > RANK_TOL))

        def at(t):
            t = np.asarray(t)
            return Q if t.ndim == 0 else np.broadcast_to(Q, t.shape + Q.shape)

        fam = cls(at, Q.shape[0], rank, vectorized=True)
        fam.constant_value = Q
        return fam

    @classmethod
    def from_samples(cls, times, matrices, rank=None, tol=1e-9):
        """Family known only at the given times (lookup with tolerance ``tol``)."""
        times = np.asarray(times, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if mats.shape[0] != len(times) or mats.ndim != 3:
            raise ArgumentError("need one matrix per sample time")
        order = np.argsort(times)
        times, mats = times[order], mats[order]
        if rank is None:
            rank = int(np.sum(np.linalg.svd(mats[0], compute_uv=False) > RANK_TOL))

        def lookup(t):
            i = int(np.searchsorted(times, t))
            for j in (i - 1, i):
                if 0 <= j < len(times) and abs(times[j] - t) <= tol * max(1.0, abs(t)):
                    return mats[j]
            raise WindowError(f"no projection sample at t={t}")

        def at(t):
            t = np.asarray(t, dtype=float)
            if t.ndim == 0:
                return lookup(float(t))
            return np.array([lookup(x) for x in t.ravel()]).reshape(t.shape + mats.shape[1:])

        fam = cls(at, mats.shape[1], rank, vectorized=True)
        fam.sample_times = times
        fam.samples = mats
        return fam

    def __call__(self, t):
        return np.asarray(self.at(t), dtype=float)

    def batch(self, times):
        times = np.asarray(times)
        d = self.dimension
        if self.vectorized:
            out = np.asarray(self.at(times), dtype=float)
            return np.broadcast_to(out, times.shape + (d, d))
        return np.array([self(t) for t in times.ravel()]).reshape(times.shape + (d, d))

    def check(self, times):
        """Largest idempotence defect ``|Q^2 - Q|``; raises if the rank drifts."""
        Qs = self.batch(np.asarray(times))
        defect = float(np.max(operator_norm(Qs @ Qs - Qs)))
        sv = np.linalg.svd(Qs, compute_uv=False)
        ranks = np.sum(sv > RANK_TOL, axis=-1)
        if np.any(ranks != self.rank):
            raise ArgumentError(f"projection rank varies: found {sorted(set(ranks.tolist()))}")
        if defect > RANK_TOL:
            raise ArgumentError(f"projections are not idempotent (defect {defect:.3e})")
        return defect


@dataclass(frozen=True)
class DichotomyCertificate:
    """Dichotomy constants ``(D, nu, alpha)`` with the grid they were checked on."""

    D: float
    nu: float
    alpha: float
    grid: TimeGrid | None = None
    margin: float = 0.0

    def __post_init__(self):
        for name in ("D", "nu", "alpha", "margin"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.D >= 1:
            raise ArgumentError(f"D must be >= 1, got {self.D}")
        if not self.alpha > 0:
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        if not self.nu >= 0:
            raise ArgumentError(f"nu must be nonnegative, got {self.nu}")

    @property
    def valid(self):
        return self.alpha > self.nu

    def bound(self, s):
        """``K(s) = D exp(nu |s|)``."""
        return self.D * np.exp(self.nu * np.abs(s))

    def to_dict(self):
        return {
            "D": self.D,
            "nu": self.nu,
            "alpha": self.alpha,
            "margin": self.margin,
            "valid": self.valid,
            "grid": None if self.grid is None else self.grid.to_dict(),
        }


@dataclass
class GreenFunction:
    process: object
    projections: ProjectionFamily
    certificate: DichotomyCertificate | None = None

    def __call__(self, t, s):
        return green_eval(self, t, s)


def _forward(P, t, s):
    if isinstance(P, DiscreteProcess):
        return P(int(t), int(s))
    return P(t, s)


def backward_on_range(P, Q, t, s):
    """``S(t, s) Q(s)`` for ``t < s`` via the inverse of the restricted forward map."""
    Qt, Qs = Q(t), Q(s)
    if Q.rank == 0:
        return np.zeros((Q.dimension, Q.dimension))
    Ut = range_basis(Qt, Q.rank)
    Us = range_basis(Qs, Q.rank)
    R = Us.T @ _forward(P, s, t) @ Ut
    if np.linalg.cond(R) > SINGULAR_COND:
        raise SingularityError(
            f"restricted propagator on range Q({t}) is singular (cond {np.linalg.cond(R):.2e})"
        )
    return Ut @ np.linalg.solve(R, Us.T @ Qs)


def green_eval(G, t, s):
    """Green function ``S(t,s)(I - Q(s))`` for ``t >= s``, ``-S(t,s)Q(s)`` otherwise."""
    Q = G.projections
    if t >= s:
        return _forward(G.process, t, s) @ (np.eye(Q.dimension) - Q(s))
    return -backward_on_range(G.process, Q, t, s)


@dataclass
class VerificationReport:
    passed: bool
    worst_forward_ratio: float
    worst_backward_ratio: float
    max_commutator: float
    relative_commutator: float
    grid: dict
    certificate: dict = field(default_factory=dict)
    worst_forward_pair: tuple | None = None
    worst_backward_pair: tuple | None = None
    ratio_tolerance: float = RATIO_TOL
    commutator_tolerance: float = COMMUTATOR_TOL

    def to_dict(self):
        return {
            "pass": bool(self.passed),
            "worst_forward_ratio": self.worst_forward_ratio,
            "worst_backward_ratio": self.worst_backward_ratio,
            "max_commutator": self.max_commutator,
            "grid": self.grid,
            "relative_commutator": self.relative_commutator,
            "worst_forward_pair": self.worst_forward_pair,
            "worst_backward_pair": self.worst_backward_pair,
            "certificate": self.certificate,
            "ratio_tolerance": self.ratio_tolerance,
            "commutator_tolerance": self.commutator_tolerance,
        }


def grid_times(P, grid):
    """Sample times for ``P``: grid nodes, or the whole index window of a discrete process."""
    if grid is None:
        if isinstance(P, DiscreteProcess):
            lo, hi = P.window
            return np.arange(lo, hi + 1, dtype=float), {"t_min": lo, "t_max": hi, "step": 1,
                                                         "count": hi - lo + 1}
        raise ArgumentError("a grid is required for continuous processes")
    times = grid.times
    if isinstance(P, DiscreteProcess):
        if np.any(np.abs(times - np.round(times)) > 1e-9):
            raise ArgumentError("discrete processes need an integer grid")
        times = np.round(times)
    return times, grid.to_dict()


def dichotomy_tables(P, Q, times):
    """Forward propagators, projections and backward maps on range Q over ``times``.

    Returns ``F[i, j] = S(t_i, t_j)`` (``i >= j``), ``Qs[i]``, and
    ``Bk[i, j] = S(t_i, t_j) Q(t_j)`` for ``i < j``.  The backward maps chain
    one-step restricted inverses, which keeps long gaps well conditioned.
    """
    if isinstance(P, DiscreteProcess):
        lo, hi = P.window
        if times[0] < lo or times[-1] > hi:
            raise WindowError(f"grid [{times[0]}, {times[-1]}] outside window [{lo}, {hi}]")
        times_i = times.astype(int)
        F = propagator_table(P, times_i)
    else:
        F = propagator_table(P, times)
    Qs = Q.batch(times)
    n, d = len(times), Q.dimension
    k = Q.rank
    Bk = np.zeros((n, n, d, d))
    if k == 0 or n < 2:
        return F, Qs, Bk
    U = np.array([range_basis(q, k) for q in Qs])
    idx = np.arange(n - 1)
    R = np.einsum("iab,ibc,icd->iad", U[1:].transpose(0, 2, 1), F[idx + 1, idx], U[:-1])
    conds = np.linalg.cond(R)
    if np.any(~np.isfinite(conds)) or np.any(conds > SINGULAR_COND):
        i = int(np.nanargmax(np.where(np.isfinite(conds), conds, np.inf)))
        raise SingularityError(
            f"restricted one-step propagator singular at t={times[i]} (cond {conds[i]:.2e})"
        )
    Rinv = np.linalg.inv(R)
    # C[i, j] maps range coordinates at t_j to range coordinates at t_i, i < j.
    C = np.zeros((n, n, k, k))
    for i in range(n - 2, -1, -1):
        C[i, i + 1] = Rinv[i]
        C[i, i + 2:] = Rinv[i] @ C[i + 1, i + 2:]
    proj = np.einsum("jab,jbc->jac", U.transpose(0, 2, 1), Qs)
    ii, jj = np.triu_indices(n, 1)
    Bk[ii, jj] = np.einsum("pab,pbc,pcd->pad", U[ii], C[ii, jj], proj[jj])
    return F, Qs, Bk


def _branch_norms(F, Qs, Bk):
    n, d = Qs.shape[0], Qs.shape[1]
    eye = np.eye(d)
    ii, jj = np.tril_indices(n)
    fwd = np.full((n, n), np.nan)
    fwd[ii, jj] = operator_norm(F[ii, jj] @ (eye - Qs[jj]))
    bi, bj = np.triu_indices(n, 1)
    bwd = np.full((n, n), np.nan)
    if len(bi):
        bwd[bi, bj] = operator_norm(Bk[bi, bj])
    return fwd, bwd


def verify_dichotomy(P, Q, C, grid=None):
    """Check the dichotomy inequalities of ``C`` for ``P`` and ``Q`` on all grid pairs."""
    times, grid_info = grid_times(P, grid)
    return verify_tables(times, *dichotomy_tables(P, Q, times), C, grid_info)


def verify_tables(times, F, Qs, Bk, C, grid_info=None):
    """Dichotomy check on precomputed tables (see ``dichotomy_tables``)."""
    fwd, bwd = _branch_norms(F, Qs, Bk)
    n = len(times)
    gap = times[:, None] - times[None, :]
    K = C.bound(times)[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        fwd_ratio = fwd / (K * np.exp(-C.alpha * gap))
        bwd_ratio = bwd / (K * np.exp(C.alpha * gap))

    def worst(r):
        if np.all(np.isnan(r)):
            return 0.0, None
        i, j = np.unravel_index(np.nanargmax(r), r.shape)
        return float(r[i, j]), (float(times[i]), float(times[j]))

    wf, pf = worst(fwd_ratio)
    wb, pb = worst(bwd_ratio)
    ii, jj = np.tril_indices(n)
    comm = operator_norm(Qs[ii] @ F[ii, jj] - F[ii, jj] @ Qs[jj])
    max_comm = float(np.max(comm))
    scale = max(1.0, float(np.max(operator_norm(F[ii, jj]))))
    rel_comm = max_comm / scale
    if not np.isfinite(wf) or not np.isfinite(wb):
        raise NumericError("bound ratios are not finite")
    passed = wf <= 1 + RATIO_TOL and wb <= 1 + RATIO_TOL and rel_comm <= COMMUTATOR_TOL
    if grid_info is None:
        grid_info = {"t_min": float(times[0]), "t_max": float(times[-1]),
                     "step": float(times[1] - times[0]) if n > 1 else 0.0, "count": n}
    return VerificationReport(
        passed=bool(passed),
        worst_forward_ratio=wf,
        worst_backward_ratio=wb,
        max_commutator=max_comm,
        relative_commutator=rel_comm,
        grid=grid_info,
        certificate=C.to_dict(),
        worst_forward_pair=pf,
        worst_backward_pair=pb,
    )


def _envelope_rate(logn, times, nu, backward):
    """Decay rate of the worst-case weighted log-norm against the gap.

    ``logn[i, j]`` holds ``log|.|`` at the pair ``(t_i, t_j)``.  For each gap
    ``k`` the envelope is ``max_j (logn - nu |t_j|)`` and the rate is the
    negative least-squares slope of that envelope in the gap length.
    """
    n = len(times)
    h = times[1] - times[0]
    kmax = (n - 1) // 2
    ks = np.arange(1, kmax + 1)
    weight = nu * np.abs(times)
    env = np.empty(kmax)
    for m, k in enumerate(ks):
        if backward:
            vals = np.diagonal(logn, offset=k) - weight[k:]
        else:
            vals = np.diagonal(logn, offset=-k) - weight[: n - k]
        env[m] = np.max(vals)
    tau = ks * h
    slope = np.polyfit(tau, env, 1)[0]
    return -slope


def fit_certificate(P, Q, grid=None):
    """Fit dichotomy constants to a process on a grid.

    The exponent is the decay rate of the worst-case envelope of
    ``log|S(t,s)(I-Q(s))| - nu |s|`` over gaps up to half the grid span,
    taken jointly with the backward branch.  Increasing ``nu`` lowers the
    envelope at large ``|s|`` and therefore the fitted rate until it
    plateaus; ``nu`` is the start of that plateau.  ``D`` is then the
    smallest constant (at least 1) for which every grid inequality holds.
    """
    times, grid_info = grid_times(P, grid)
    n = len(times)
    if (n - 1) // 2 < 2:
        raise ArgumentError("fit_certificate needs at least two distinct gaps")
    F, Qs, Bk = dichotomy_tables(P, Q, times)
    fwd, bwd = _branch_norms(F, Qs, Bk)
    tiny = 1e-300
    use_fwd = Q.rank < Q.dimension
    use_bwd = Q.rank > 0
    with np.errstate(divide="ignore"):
        log_f = np.log(np.maximum(fwd, tiny))
        log_b = np.log(np.maximum(bwd, tiny))

    def rate(nu):
        rates = []
        if use_fwd:
            rates.append(_envelope_rate(log_f, times, nu, backward=False))
        if use_bwd:
            rates.append(_envelope_rate(log_b, times, nu, backward=True))
        return min(rates)

    alpha0 = rate(0.0)
    if not alpha0 > 1e-9:
        raise NoDichotomyError(f"fitted exponent {alpha0:.3e} is not positive")
    nus = np.linspace(0.0, alpha0, 201)
    rates = np.array([rate(v) for v in nus])
    best = rates.min()
    pick = int(np.argmax(rates <= best + 1e-3 * abs(best)))
    nu, alpha = float(nus[pick]), float(rates[pick])
    if not alpha > 0:
        raise NoDichotomyError(f"fitted exponent {alpha:.3e} is not positive")
    gap = times[:, None] - times[None, :]
    weight = np.exp(nu * np.abs(times))[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = []
        if use_fwd:
            ratios.append(np.nanmax(fwd / (weight * np.exp(-alpha * gap))))
        if use_bwd and n > 1:
            ratios.append(np.nanmax(bwd / (weight * np.exp(alpha * gap))))
    worst = float(max(ratios))
    D = max(1.0, worst)
    grid_obj = grid if grid is not None else TimeGrid(times[0], times[-1], 1.0)
    return DichotomyCertificate(D=D, nu=nu, alpha=alpha, grid=grid_obj, margin=1 - worst / D)
