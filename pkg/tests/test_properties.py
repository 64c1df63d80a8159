import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dichotomy_lab.dichotomy import DichotomyCertificate, ProjectionFamily
from dichotomy_lab.discrete import (
    Forcing,
    admissibility_threshold,
    green_sum_solve,
    perturbed_constants,
)
from dichotomy_lab.gallery import GalleryParams, make_gallery_process
from dichotomy_lab.process import DiscreteProcess

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.05, 5.0), frac=st.floats(0.0, 0.95))
def test_constants_consistent(alpha, frac):
    delta = frac * admissibility_threshold(alpha) * 0.5
    c = perturbed_constants(alpha, delta)
    assert 0 < c.alpha_tilde <= alpha
    assert 0 <= c.rho < 1
    assert c.D1 >= 1 and c.D2 >= 1
    assert c.bound_multiplier >= 1
    assert c.beta_tilde >= c.alpha_tilde


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.05, 5.0), d1=st.floats(0, 0.2), d2=st.floats(0, 0.2))
def test_alpha_tilde_monotone(alpha, d1, d2):
    lo, hi = sorted((d1, d2))
    thr = admissibility_threshold(alpha) * 0.5
    lo, hi = lo * thr, hi * thr
    a_lo = perturbed_constants(alpha, lo).alpha_tilde
    a_hi = perturbed_constants(alpha, hi).alpha_tilde
    assert a_hi <= a_lo + 1e-15


@settings(max_examples=30, deadline=None)
@given(omega=st.floats(0.5, 3.0), ratio=st.floats(0.05, 0.3), t=finite, r=finite, s=finite)
def test_gallery_cocycle(omega, ratio, t, r, s):
    P = make_gallery_process(GalleryParams(omega=omega, a=omega * ratio))
    s, r, t = sorted((s, r, t))
    lhs = P(t, r) @ P(r, s)
    assert np.allclose(lhs, P(t, s), rtol=1e-9, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.2, 0.7), mu=st.floats(1.5, 4.0), k0=st.integers(-4, 4),
       v=st.tuples(finite, finite))
def test_green_sum_satisfies_recursion(lam, mu, k0, v):
    P = DiscreteProcess.autonomous(np.diag([lam, mu]), -120, 120)
    Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
    C = DichotomyCertificate(D=1.0, nu=0.0, alpha=min(-math.log(lam), math.log(mu)))
    x = green_sum_solve(P, Q, Forcing.impulse(k0, v), (-6, 6), certificate=C)
    for n in range(-6, 6):
        f = np.asarray(v) if n == k0 else np.zeros(2)
        assert np.allclose(x[n + 1], P.step(n) @ x[n] + f, atol=1e-10)
