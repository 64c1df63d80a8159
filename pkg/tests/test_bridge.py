import numpy as np
import pytest

from dichotomy_lab.bridge import (
    DiscretizationSpec,
    discretize,
    growth_constant,
    gronwall_check,
    perturbation_bound_check,
    reconstruct_dichotomy,
    robust_continuous,
    strip_pairs,
    vcf_process,
    vcf_propagator,
    vcf_residual,
)
from dichotomy_lab.dichotomy import fit_certificate, verify_dichotomy
from dichotomy_lab.errors import ArgumentError, HypothesisError, RobustnessHypothesisError
from dichotomy_lab.gallery import make_perturbation
from dichotomy_lab.process import ContinuousProcess, TimeGrid

GRID = TimeGrid(-10, 10, 0.25)


def test_discretize_certificate(gallery, gallery_Q, gallery_C):
    disc = discretize(gallery, DiscretizationSpec(2.0, 0.5, (-10, 10)), gallery_C, gallery_Q)
    assert disc.certificate.alpha == pytest.approx(0.45)
    assert disc.certificate.nu == pytest.approx(0.1)
    assert disc.certificate.D == pytest.approx(gallery_C.D * np.exp(0.4))
    assert np.allclose(disc.process(3, -2), gallery(3.5, 1.0))
    assert verify_dichotomy(disc.process, disc.projections, disc.certificate).passed


def test_strip_pairs_cover_strip():
    t, s, res = strip_pairs(TimeGrid(0, 2, 0.5), 1.0)
    gap = t - s
    assert res == pytest.approx(0.1)
    assert gap.min() == 0.0 and gap.max() == pytest.approx(1.0)


def test_growth_constant_autonomous():
    P = ContinuousProcess.autonomous(np.diag([-1.0, 0.5]))
    L = growth_constant(P, 0.0, 1.0, TimeGrid(-2, 2, 0.5))
    assert L.value == pytest.approx(np.exp(0.5), rel=1e-12)


def test_round_trip(gallery, gallery_Q, gallery_C):
    discs = {t: discretize(gallery, DiscretizationSpec(t, 1.0, (-30, 30)), gallery_C, gallery_Q)
             for t in GRID.times}
    L = growth_constant(gallery, gallery_C.nu, 1.0, GRID)
    Q, C, rep = reconstruct_dichotomy(discs, 1.0, L, process=gallery, grid=GRID, estimate_horizon=30)
    err = max(np.abs(Q(t) - gallery_Q(t)).max() for t in GRID.times)
    assert err <= 1e-5
    assert C.alpha == pytest.approx(0.7)
    assert C.nu == pytest.approx(0.4)
    assert rep["verification"]["pass"]


def test_reconstruct_rejects_fast_growth(gallery, gallery_Q):
    from dichotomy_lab.dichotomy import DichotomyCertificate
    C = DichotomyCertificate(D=1.2, nu=1.2, alpha=1.0)
    discs = {0.0: discretize(gallery, DiscretizationSpec(0.0, 1.0, (-5, 5)), C, gallery_Q)}
    with pytest.raises(HypothesisError):
        reconstruct_dichotomy(discs, 1.0, 2.0)


def test_time_rescaling(gallery, gallery_Q):
    grid = TimeGrid(-15, 15, 0.25)
    base = fit_certificate(gallery, gallery_Q, grid)
    c = 2.0
    fast = ContinuousProcess.closed_form(lambda t, s: gallery(c * t, c * s), 2)
    rescaled = fit_certificate(fast, gallery_Q, grid.scaled(1 / c))
    assert rescaled.alpha == pytest.approx(c * base.alpha, rel=0.05)
    assert rescaled.nu == pytest.approx(c * base.nu, rel=0.05, abs=1e-3)


def test_vcf_scalar_closed_form():
    P = ContinuousProcess.closed_form(lambda t, s: np.array([[np.exp(-(t - s))]]), 1)
    B = lambda t: np.array([[0.3]])
    assert vcf_propagator(P, B, 1.0, 0.0)[0, 0] == pytest.approx(np.exp(-0.7), rel=1e-6)


def test_vcf_residual_small(params, gallery):
    B = make_perturbation(1e-2, params.a, np.array([[0.0, 1.0], [1.0, 0.0]]))
    T = vcf_process(gallery, B)
    assert vcf_residual(gallery, B, T, 1.5, 0.0) < 1e-6
    with pytest.raises(ArgumentError):
        vcf_propagator(gallery, B, 0.0, 1.0)


def test_robustness_small_perturbation(params, gallery, gallery_Q, gallery_C):
    B = make_perturbation(1e-3, params.a, np.array([[0.6, -0.8], [0.8, 0.6]]))
    T = vcf_process(gallery, B)
    QT, C, rep = robust_continuous(gallery, gallery_C, gallery_Q, T, GRID)
    assert rep.passed
    assert rep.eps < rep.threshold
    assert 0 < C.alpha < gallery_C.alpha
    assert np.abs(QT(0.0) - gallery_Q(0.0)).max() < 1e-2


def test_robustness_rejects_large_perturbation(params, gallery, gallery_Q, gallery_C):
    B = make_perturbation(1.0, params.a, np.eye(2))
    T = vcf_process(gallery, B)
    with pytest.raises(RobustnessHypothesisError) as info:
        robust_continuous(gallery, gallery_C, gallery_Q, T, TimeGrid(-2, 2, 0.5))
    assert info.value.item == "eps<threshold"


def test_perturbation_bound_check(params):
    B = make_perturbation(1e-3, params.a, np.eye(2))
    assert perturbation_bound_check(B, 2e-3, params.a * 2, GRID)
    assert not perturbation_bound_check(B, 5e-4, params.a * 2, GRID)


def test_gronwall(params, gallery, gallery_C):
    B = make_perturbation(1e-2, params.a, np.array([[0.3, 0.5], [-0.4, 0.6]]))
    T = vcf_process(gallery, B)
    ratios, L_S = gronwall_check(gallery, B, T, gallery_C.nu, TimeGrid(-5, 5, 0.25))
    assert L_S > 1
    assert ratios.max() <= 1.0
