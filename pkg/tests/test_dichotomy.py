import numpy as np
import pytest

from dichotomy_lab.dichotomy import (
    DichotomyCertificate,
    GreenFunction,
    ProjectionFamily,
    backward_on_range,
    fit_certificate,
    verify_dichotomy,
)
from dichotomy_lab.errors import ArgumentError, SingularityError, WindowError
from dichotomy_lab.process import DiscreteProcess, TimeGrid


def test_certificate_validation():
    with pytest.raises(ArgumentError):
        DichotomyCertificate(D=0.5, nu=0.1, alpha=1.0)
    with pytest.raises(ArgumentError):
        DichotomyCertificate(D=1.0, nu=-0.1, alpha=1.0)
    C = DichotomyCertificate(D=2, nu=0.5, alpha=0.4)
    assert not C.valid
    assert C.bound(-2.0) == pytest.approx(2 * np.e)


def test_projection_family_samples():
    Q = ProjectionFamily.from_samples([0.0, 1.0], [np.diag([0.0, 1.0])] * 2)
    assert Q.rank == 1
    assert np.allclose(Q(1.0), np.diag([0.0, 1.0]))
    with pytest.raises(WindowError):
        Q(0.5)
    bad = ProjectionFamily.constant(np.array([[1.0, 0.0], [0.0, 0.5]]))
    with pytest.raises(ArgumentError):
        bad.check([0.0])


def test_green_function_saddle(saddle):
    Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
    G = GreenFunction(saddle, Q)
    assert np.allclose(G(0, 2), -np.diag([0.0, 0.25]))
    assert np.allclose(G(3, 0), np.diag([0.125, 0.0]))


def test_green_jump_relation(gallery, gallery_Q):
    G = GreenFunction(gallery, gallery_Q)
    t = 1.3
    jump = G(t, t) - (-backward_on_range(gallery, gallery_Q, t, t))
    assert np.allclose(jump, np.eye(2))


def test_backward_inverse_on_range(gallery, gallery_Q):
    t, s = -1.0, 2.0
    B = backward_on_range(gallery, gallery_Q, t, s)
    assert np.allclose(gallery(s, t) @ B, gallery_Q(s), atol=1e-12)


def test_singular_restriction():
    P = DiscreteProcess.autonomous(np.diag([0.5, 0.0]), 0, 5)
    Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
    with pytest.raises(SingularityError):
        backward_on_range(P, Q, 0, 2)


def test_verify_gallery_oracle(gallery, gallery_Q, gallery_C):
    grid = TimeGrid(-15, 15, 0.25)
    rep = verify_dichotomy(gallery, gallery_Q, gallery_C, grid)
    assert rep.passed
    assert rep.worst_forward_ratio == pytest.approx(0.8364, abs=1e-3)
    assert rep.max_commutator <= 1e-10


def test_verify_rejects_tight_alpha(gallery, gallery_Q):
    grid = TimeGrid(-10, 10, 0.25)
    C = DichotomyCertificate(D=np.exp(0.2), nu=0.2, alpha=1.1)
    assert not verify_dichotomy(gallery, gallery_Q, C, grid).passed


def test_verify_wrong_projection_commutator(gallery):
    Q = ProjectionFamily.constant(np.array([[0.0, 0.0], [0.5, 1.0]]))
    C = DichotomyCertificate(D=10.0, nu=0.2, alpha=0.9)
    rep = verify_dichotomy(gallery, Q, C, TimeGrid(-2, 2, 0.25))
    assert not rep.passed
    assert rep.max_commutator > 1e-3


def test_fit_gallery_oracle(gallery, gallery_Q):
    grid = TimeGrid(-15, 15, 0.25)
    C = fit_certificate(gallery, gallery_Q, grid)
    assert C.alpha == pytest.approx(0.9214, abs=1e-3)
    assert C.nu == pytest.approx(0.1936, abs=1e-3)
    assert C.D == pytest.approx(1.311, abs=1e-2)
    assert verify_dichotomy(gallery, gallery_Q, C, grid).passed


def test_fit_discrete_saddle(saddle):
    Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
    C = fit_certificate(saddle, Q)
    assert C.alpha == pytest.approx(np.log(2), rel=1e-6)
    assert C.nu == pytest.approx(0.0, abs=1e-6)
    assert C.D == pytest.approx(1.0, rel=1e-6)
