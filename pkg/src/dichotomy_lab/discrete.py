"""Discrete-time dichotomy tools.

Green-sum solutions of ``x_{n+1} = S_n x_n + f_n``, projection estimation from
singular-value splittings, the projection-mismatch bound between two nearby
processes and the explicit constants that survive a small perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dichotomy import (
    DichotomyCertificate,
    ProjectionFamily,
    SINGULAR_COND,
    fit_certificate,
    range_basis,
)
from .errors import (
    AdmissibilityError,
    ArgumentError,
    DegeneracyError,
    HypothesisError,
    NoDichotomyError,
    SingularityError,
    WindowError,
)
from .process import DiscreteProcess, TimeGrid, operator_norm

__all__ = [
    "Forcing",
    "RobustnessConstants",
    "MismatchReport",
    "green_sum_solve",
    "tail_length",
    "estimate_projections",
    "projection_mismatch",
    "perturbed_constants",
    "admissibility_threshold",
    "check_perturbation_admissible",
]


@dataclass
class Forcing:
    """Sparse forcing sequence ``n -> f_n``; indices not stored are zero."""

    values: dict

    def __post_init__(self):
        self.values = {int(k): np.asarray(v, dtype=float) for k, v in self.values.items()}

    @classmethod
    def impulse(cls, index, vector):
        return cls({int(index): vector})

    @classmethod
    def from_array(cls, start, array):
        return cls({start + i: v for i, v in enumerate(np.asarray(array, dtype=float))})

    def weighted_sup(self, C):
        """``M_f = sup_n |f_n| K(n+1)``."""
        if not self.values:
            return 0.0
        return max(float(np.linalg.norm(v)) * float(C.bound(k + 1)) for k, v in self.values.items())


def tail_length(C, n, M_f, tail_tol):
    """Smallest ``N`` whose geometric tail bound at index ``n`` is below ``tail_tol``."""
    gap = C.alpha - C.nu
    if not gap > 0:
        raise HypothesisError("alpha <= nu: the Green sum tail bound diverges", item="alpha>nu")
    if M_f == 0:
        return 0
    lead = C.D * math.exp(C.nu * abs(n)) * M_f / (1 - math.exp(-gap))
    if lead < tail_tol:
        return 0
    return int(math.floor(math.log(lead / tail_tol) / gap)) + 1


class _RangeChain:
    """Restricted one-step maps on the unstable ranges of a discrete process."""

    def __init__(self, P, Q):
        self.P, self.Q = P, Q
        self.k = Q.rank
        self._U = {}
        self._Rinv = {}

    def U(self, n):
        if n not in self._U:
            self._U[n] = range_basis(self.Q(n), self.k)
        return self._U[n]

    def Rinv(self, n):
        """Inverse of ``S_n`` restricted from range ``Q_n`` to range ``Q_{n+1}``."""
        if n not in self._Rinv:
            R = self.U(n + 1).T @ self.P.step(n) @ self.U(n)
            if np.linalg.cond(R) > SINGULAR_COND:
                raise SingularityError(f"S_{n} is singular on range Q_{n}")
            self._Rinv[n] = np.linalg.inv(R)
        return self._Rinv[n]


def green_sum_solve(P, Q, f, window, tail_tol=1e-12, certificate=None):
    """Bounded solution ``x_n = sum_k G_{n,k+1} f_k`` of ``x_{n+1} = S_n x_n + f_n``.

    Parameters
    ----------
    P : DiscreteProcess
    Q : ProjectionFamily
        Dichotomy projections indexed by integers.
    f : Forcing
    window : (int, int)
        Output indices ``n_lo..n_hi`` inclusive.
    tail_tol : float
        Terms with ``|k - n| > N_tail`` are dropped, where ``N_tail`` is set by
        the certificate's geometric tail bound.
    certificate : DichotomyCertificate, optional
        Fitted on the whole process window when omitted.

    Returns
    -------
    dict
        ``n -> x_n``.
    """
    if not tail_tol > 0:
        raise ArgumentError("tail_tol must be positive")
    C = certificate or fit_certificate(P, Q)
    if not C.valid:
        raise HypothesisError("alpha <= nu: the Green sum tail bound diverges", item="alpha>nu")
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ArgumentError("empty output window")
    p_lo, p_hi = P.window
    M_f = f.weighted_sup(C)
    d = P.dimension
    eye = np.eye(d)
    chain = _RangeChain(P, Q)
    out = {}
    for n in range(lo, hi + 1):
        N = tail_length(C, n, M_f, tail_tol)
        if n - N < p_lo or n + N + 1 > p_hi or n > p_hi or n < p_lo:
            raise WindowError(
                f"index {n} needs process window [{n - N}, {n + N + 1}], have [{p_lo}, {p_hi}]"
            )
        x = np.zeros(d)
        # stable part: k = n-1, n-2, ..., with S_{n,k+1} built right to left
        prod = eye
        for k in range(n - 1, n - N - 1, -1):
            if k < n - 1:
                prod = prod @ P.step(k + 1)
            fk = f.values.get(k)
            if fk is not None:
                x += prod @ ((eye - Q(k + 1)) @ fk)
        # unstable part: k = n, n+1, ..., with S_{n,k+1} inverted on range Q
        if chain.k:
            coord = np.eye(chain.k)
            for k in range(n, n + N + 1):
                coord = coord @ chain.Rinv(k)
                fk = f.values.get(k)
                if fk is not None:
                    Qk = Q(k + 1)
                    x -= chain.U(n) @ (coord @ (chain.U(k + 1).T @ (Qk @ fk)))
        out[n] = x
    return out


def _split_rank(sv, gap_tol):
    """Number of expanding singular values and the gap across the split."""
    k = int(np.sum(sv > 1.0))
    upper = sv[k - 1] if k > 0 else 1.0
    lower = sv[k] if k < len(sv) else 1.0
    gap = upper / lower if lower > 0 else np.inf
    return k, gap


def estimate_projections(P, horizon, gap_tol=10.0, indices=None):
    """Dichotomy projections of a discrete process from long-horizon products.

    The kernel at ``n`` is spanned by the right singular vectors of
    ``S_{n+N,n}`` with singular values below the split; the range is spanned by
    the leading left singular vectors of ``S_{n,n-N}``.  ``Q_n`` is the oblique
    projection with that range and kernel.
    """
    N = int(horizon)
    if N < 1:
        raise ArgumentError("horizon must be a positive integer")
    lo, hi = P.window
    if indices is None:
        indices = range(lo + N, hi - N + 1)
    indices = [int(n) for n in indices]
    if not indices:
        raise WindowError(f"window [{lo}, {hi}] too short for horizon {N}")
    d = P.dimension
    mats, rank = [], None
    for n in indices:
        if n - N < lo or n + N > hi:
            raise WindowError(f"[{n - N}, {n + N}] not inside window [{lo}, {hi}]")
        fwd = P(n + N, n)
        _, sv_f, Vt = np.linalg.svd(fwd)
        k, gap_f = _split_rank(sv_f, gap_tol)
        Ub, sv_b, _ = np.linalg.svd(P(n, n - N))
        kb, gap_b = _split_rank(sv_b, gap_tol)
        if gap_f < gap_tol or gap_b < gap_tol:
            raise NoDichotomyError(
                f"no spectral gap at n={n}: forward gap {gap_f:.3g}, backward gap {gap_b:.3g}"
            )
        if k != kb:
            raise NoDichotomyError(f"forward and backward splittings disagree at n={n}")
        if rank is None:
            rank = k
        elif k != rank:
            raise NoDichotomyError(f"unstable dimension changes at n={n}")
        M = np.hstack([Ub[:, :k], Vt[k:].T])
        smin = np.linalg.svd(M, compute_uv=False)[-1]
        if smin < 1e-8:
            raise DegeneracyError(f"stable and unstable subspaces nearly intersect at n={n}")
        E = np.zeros((d, d))
        E[:k, :k] = np.eye(k)
        mats.append(M @ E @ np.linalg.inv(M))
    return ProjectionFamily.from_samples(np.array(indices, dtype=float), np.array(mats), rank=rank)


@dataclass
class MismatchReport:
    measured: float
    theoretical: float
    passed: bool
    eps: float
    eps_measured: float
    shared_bound: bool = True
    indices: tuple = ()

    def to_dict(self):
        return {
            "measured": self.measured,
            "theoretical": self.theoretical,
            "pass": bool(self.passed),
            "eps": self.eps,
            "eps_measured": self.eps_measured,
            "shared_bound": self.shared_bound,
            "indices": list(self.indices),
        }


def _common_indices(PT, PS, QT, QS):
    lo = max(PT.window[0], PS.window[0])
    hi = min(PT.window[1], PS.window[1])
    idx = set(range(lo, hi + 1))
    for Q in (QT, QS):
        if hasattr(Q, "sample_times"):
            idx &= {int(round(t)) for t in Q.sample_times}
    if not idx:
        raise WindowError("processes and projections share no indices")
    return sorted(idx)


def projection_mismatch(PT, PS, QT, QS, C, eps=None):
    """Compare the projections of two nearby discrete processes.

    Parameters
    ----------
    PT, PS : DiscreteProcess
    QT, QS : ProjectionFamily
    C : pair of DichotomyCertificate
        Certificates for ``T`` and ``S``.  When their bounds differ, the
        pointwise maximum ``K(n)`` is used and ``shared_bound`` is False.
    eps : float, optional
        Bound on ``sup_n K(n+1)|T_n - S_n|``; defaults to the measured value.
    """
    CT, CS = C
    nu = max(CT.nu, CS.nu)
    if nu >= min(CT.alpha, CS.alpha):
        raise HypothesisError("nu >= min(alpha): projection continuity needs nu < alpha",
                              item="nu<alpha")
    shared = CT.D == CS.D and CT.nu == CS.nu

    def K(n):
        return max(float(CT.bound(n)), float(CS.bound(n)))

    idx = _common_indices(PT, PS, QT, QS)
    measured = max(operator_norm(QT(n) - QS(n)) / K(n) for n in idx)
    lo = max(PT.window[0], PS.window[0])
    hi = min(PT.window[1], PS.window[1])
    eps_measured = max(
        (K(n + 1) * operator_norm(PT.step(n) - PS.step(n)) for n in range(lo, hi)), default=0.0
    )
    if eps is None:
        eps = eps_measured
    elif eps < eps_measured * (1 - 1e-12):
        raise HypothesisError(
            f"eps={eps:.3e} is below the measured step mismatch {eps_measured:.3e}",
            item="eps", report={"eps_measured": eps_measured},
        )
    aT, aS = CT.alpha, CS.alpha
    theoretical = eps * (math.exp(-aS) + math.exp(-aT)) / (1 - math.exp(-(aS + aT)))
    return MismatchReport(
        measured=float(measured),
        theoretical=float(theoretical),
        passed=bool(measured <= theoretical * (1 + 1e-6)),
        eps=float(eps),
        eps_measured=float(eps_measured),
        shared_bound=shared,
        indices=(idx[0], idx[-1]),
    )


def admissibility_threshold(alpha):
    """Largest admissible perturbation size ``(1 - e^{-alpha}) / (1 + e^{-alpha})``."""
    return math.tanh(alpha / 2)


@dataclass(frozen=True)
class RobustnessConstants:
    """Constants of a dichotomy that survives a perturbation of size ``delta``."""

    alpha: float
    delta: float
    D: float
    alpha_tilde: float
    rho: float
    D1: float
    D2: float
    beta_tilde: float
    bound_multiplier: float

    @property
    def bound_constant(self):
        """``D`` times the multiplier: the perturbed bound at ``s = 0``."""
        return self.D * self.bound_multiplier

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "delta": self.delta,
            "D": self.D,
            "alpha_tilde": self.alpha_tilde,
            "rho": self.rho,
            "D1": self.D1,
            "D2": self.D2,
            "beta_tilde": self.beta_tilde,
            "bound_multiplier": self.bound_multiplier,
            "bound_constant": self.bound_constant,
        }


def perturbed_constants(alpha, delta, D=1.0):
    """Exponent and bound of a dichotomy perturbed by ``|B_k| <= delta K(k+1)^{-1}``.

    ``alpha_tilde = -log(cosh a - sqrt(cosh^2 a - 1 - 2 delta sinh a))``; the
    argument is evaluated as ``e^{-a} + 2 delta sinh a / (sinh a + sqrt(.))``,
    which is the same number without cancellation.
    """
    alpha, delta = float(alpha), float(delta)
    if not alpha > 0:
        raise ArgumentError("alpha must be positive")
    if delta < 0:
        raise ArgumentError("delta must be nonnegative")
    sh = math.sinh(alpha)
    disc = sh * sh - 2 * delta * sh
    if disc < 0:
        raise AdmissibilityError(f"negative discriminant for delta={delta}", item="discriminant")
    root = math.sqrt(disc)
    lam = math.exp(-alpha) + (2 * delta * sh / (sh + root) if delta else 0.0)
    alpha_tilde = -math.log(lam)
    ea = math.exp(-alpha)
    rho = delta * (1 + ea) / (1 - ea)
    if rho >= 1:
        raise AdmissibilityError(f"rho={rho:.6g} >= 1 for delta={delta}", item="rho")
    beta_tilde = alpha_tilde + math.log1p(2 * delta * sh)
    den1 = 1 - delta * ea / (1 - math.exp(-alpha - alpha_tilde))
    den2 = 1 - delta * math.exp(-beta_tilde) / (1 - math.exp(-alpha - beta_tilde))
    if den1 <= 0 or den2 <= 0:
        raise AdmissibilityError(f"nonpositive D1/D2 denominator for delta={delta}", item="D1D2")
    D1, D2 = 1 / den1, 1 / den2
    mult = (1 + delta / ((1 - rho) * (1 - ea))) * max(D1, D2)
    return RobustnessConstants(alpha, delta, float(D), alpha_tilde, rho, D1, D2, beta_tilde, mult)


def check_perturbation_admissible(B, C, delta):
    """True iff ``|B_k| <= delta K(k+1)^{-1}`` for every stored ``k`` and ``delta`` is admissible.

    ``B`` is a mapping ``k -> matrix`` or a ``DiscreteProcess`` whose steps are
    read as the perturbation.
    """
    if not delta < admissibility_threshold(C.alpha):
        return False
    if isinstance(B, DiscreteProcess):
        items = ((k, B.step(k)) for k in range(*B.window))
    else:
        items = B.items()
    return all(operator_norm(Bk) <= delta / float(C.bound(k + 1)) for k, Bk in items)
