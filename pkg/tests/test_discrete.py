import math

import numpy as np
import pytest

from dichotomy_lab.bridge import DiscretizationSpec, discretize, vcf_process
from dichotomy_lab.dichotomy import DichotomyCertificate, ProjectionFamily
from dichotomy_lab.discrete import (
    Forcing,
    admissibility_threshold,
    check_perturbation_admissible,
    estimate_projections,
    green_sum_solve,
    perturbed_constants,
    projection_mismatch,
    tail_length,
)
from dichotomy_lab.errors import (
    AdmissibilityError,
    DegeneracyError,
    HypothesisError,
    NoDichotomyError,
    WindowError,
)
from dichotomy_lab.gallery import make_perturbation
from dichotomy_lab.process import DiscreteProcess

SADDLE_Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
SADDLE_C = DichotomyCertificate(D=1.0, nu=0.0, alpha=math.log(2))


def brute_force(n, k0, v):
    """Bounded response of diag(1/2, 2) to an impulse ``v`` at ``k0``, unrolled by hand."""
    if k0 < n:
        return np.array([0.5 ** (n - 1 - k0) * v[0], 0.0])
    return np.array([0.0, -(2.0 ** -(k0 + 1 - n)) * v[1]])


@pytest.mark.parametrize("k0", [-3, 0, 4])
def test_green_sum_matches_unrolled(saddle, k0):
    v = np.array([1.5, -0.75])
    x = green_sum_solve(saddle, SADDLE_Q, Forcing.impulse(k0, v), (-6, 6), certificate=SADDLE_C)
    for n, xn in x.items():
        assert np.max(np.abs(xn - brute_force(n, k0, v))) <= 1e-12


def test_green_sum_solves_recursion(saddle, rng):
    f = Forcing.from_array(-10, rng.normal(size=(21, 2)))
    x = green_sum_solve(saddle, SADDLE_Q, f, (-5, 5), certificate=SADDLE_C)
    for n in range(-5, 5):
        fn = f.values.get(n, np.zeros(2))
        assert np.allclose(x[n + 1], saddle.step(n) @ x[n] + fn, atol=1e-11)


def test_impulse_identity(saddle, rng):
    C = DichotomyCertificate(D=1.0, nu=0.1, alpha=math.log(2))
    for _ in range(20):
        m = int(rng.integers(-5, 6))
        z = rng.normal(size=2)
        K = float(C.bound(m))
        x = green_sum_solve(saddle, SADDLE_Q, Forcing.impulse(m - 1, z / K), (m, m), certificate=C)
        assert np.max(np.abs(x[m] - (np.eye(2) - SADDLE_Q(m)) @ z / K)) <= 1e-10


def test_green_sum_window_too_short(saddle):
    with pytest.raises(WindowError):
        green_sum_solve(saddle, SADDLE_Q, Forcing.impulse(0, [1.0, 1.0]), (55, 58), certificate=SADDLE_C)


def test_tail_length_monotone():
    assert tail_length(SADDLE_C, 0, 1.0, 1e-6) < tail_length(SADDLE_C, 0, 1.0, 1e-12)
    assert tail_length(SADDLE_C, 0, 0.0, 1e-12) == 0


def test_estimate_projections_saddle(saddle):
    Q = estimate_projections(saddle, 20, indices=[-3, 0, 3])
    for n in (-3, 0, 3):
        assert np.allclose(Q(n), np.diag([0.0, 1.0]), atol=1e-14)


def test_estimate_projections_horizon_stable(params, gallery, gallery_Q, gallery_C):
    disc = discretize(gallery, DiscretizationSpec(0.0, 1.0, (-40, 40)), gallery_C, gallery_Q)
    idx = list(range(-5, 6))
    Q1 = estimate_projections(disc.process, 20, indices=idx)
    Q2 = estimate_projections(disc.process, 30, indices=idx)
    assert max(np.abs(Q1(n) - Q2(n)).max() for n in idx) <= 1e-6


def test_estimate_projections_no_gap():
    P = DiscreteProcess.autonomous(np.eye(2), 0, 40)
    with pytest.raises(NoDichotomyError):
        estimate_projections(P, 10)


def test_estimate_projections_degenerate():
    # both subspaces collapse onto nearly the same line
    S = np.array([[2.0, 0.0], [0.0, 0.5]])
    V = np.array([[1.0, 1.0], [0.0, 1e-12]])
    P = DiscreteProcess.autonomous(V @ S @ np.linalg.inv(V), 0, 40)
    with pytest.raises(DegeneracyError):
        estimate_projections(P, 10, indices=[20])


def test_mismatch_identical_processes(saddle):
    Q = estimate_projections(saddle, 20)
    rep = projection_mismatch(saddle, saddle, Q, Q, (SADDLE_C, SADDLE_C))
    assert rep.measured == 0.0 and rep.passed


def test_mismatch_rejects_small_eps(saddle):
    T = DiscreteProcess.autonomous(np.diag([0.5, 2.0]) + 1e-3, -60, 60)
    QS, QT = estimate_projections(saddle, 20), estimate_projections(T, 20)
    with pytest.raises(HypothesisError):
        projection_mismatch(T, saddle, QT, QS, (SADDLE_C, SADDLE_C), eps=1e-6)


def test_mismatch_gallery_random_shapes(params, gallery, gallery_Q, gallery_C, rng):
    spec = DiscretizationSpec(0.0, 1.0, (-30, 30))
    S = discretize(gallery, spec, gallery_C, gallery_Q)
    for _ in range(3):
        shape = rng.normal(size=(2, 2))
        shape /= np.linalg.norm(shape, 2)
        T = discretize(vcf_process(gallery, make_perturbation(1e-3, params.a, shape)), spec,
                       gallery_C, gallery_Q)
        QT = estimate_projections(T.process, 12)
        const = perturbed_constants(S.certificate.alpha, 0.01, S.certificate.D)
        CT = DichotomyCertificate(D=const.bound_constant, nu=S.certificate.nu, alpha=const.alpha_tilde)
        rep = projection_mismatch(T.process, S.process, QT, S.projections, (CT, S.certificate))
        assert rep.passed
        assert 0 < rep.measured <= rep.theoretical


def test_constants_at_zero():
    c = perturbed_constants(1.0, 0.0)
    assert c.alpha_tilde == 1.0
    assert c.rho == 0.0
    assert c.D1 == 1.0 and c.D2 == 1.0
    assert c.bound_multiplier == 1.0
    assert c.beta_tilde == 1.0


def test_constants_oracle():
    c = perturbed_constants(1.0, 0.1, D=2.0)
    sh = math.sinh(1.0)
    ref = -math.log(math.cosh(1.0) - math.sqrt(math.cosh(1.0) ** 2 - 1 - 0.2 * sh))
    assert c.alpha_tilde == pytest.approx(ref, rel=1e-12)
    assert c.rho == pytest.approx(0.1 * (1 + math.exp(-1)) / (1 - math.exp(-1)), rel=1e-14)
    assert c.bound_constant == pytest.approx(2.0 * c.bound_multiplier)


def test_constants_monotone():
    vals = [perturbed_constants(1.0, d).alpha_tilde for d in np.arange(0, 0.46, 0.05)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_constants_inadmissible():
    with pytest.raises(AdmissibilityError):
        perturbed_constants(1.0, 0.47)


def test_threshold_formula():
    a = 0.7
    assert admissibility_threshold(a) == pytest.approx((1 - math.exp(-a)) / (1 + math.exp(-a)))


def test_check_perturbation_admissible():
    C = DichotomyCertificate(D=1.0, nu=0.1, alpha=1.0)
    B = {k: 0.049 * np.exp(-0.1 * abs(k + 1)) * np.eye(2) for k in range(-5, 5)}
    assert check_perturbation_admissible(B, C, 0.05)
    assert not check_perturbation_admissible(B, C, 0.045)
    assert not check_perturbation_admissible(B, C, 0.5)
