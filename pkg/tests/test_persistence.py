import numpy as np
import pytest

from dichotomy_lab.dichotomy import GreenFunction, ProjectionFamily
from dichotomy_lab.errors import HypothesisError, WindowError
from dichotomy_lab.persistence import (
    GlobalTrajectory,
    SemilinearSystem,
    green_integral_apply,
    isolation_radius,
    linearize_along,
    mild_solve,
    persist_solution,
    prepare_persistence,
    rho_of_eps,
)
from dichotomy_lab.process import ContinuousProcess, TimeGrid
from dichotomy_lab.dichotomy import DichotomyCertificate

A_DECAY = 0.1


def weight(t):
    return np.exp(-6 * A_DECAY * np.abs(t))[..., None]


def zero_f(t, x):
    return np.zeros_like(x)


def zero_df(t, x):
    return np.zeros(x.shape + (x.shape[-1],))


def quad_f(t, x):
    return weight(t) * x ** 2


def quad_df(t, x):
    return (weight(t) * 2 * x)[..., None] * np.eye(x.shape[-1])


@pytest.fixture(scope="module")
def xi():
    return GlobalTrajectory.zeros(TimeGrid(-32, 32, 0.1), 2, bound=0.125)


@pytest.fixture(scope="module")
def setup(gallery, gallery_Q, gallery_C, xi):
    S_f = SemilinearSystem(gallery, zero_f, zero_df, vectorized=True)
    return prepare_persistence(S_f, xi, gallery_C, gallery_Q)


def test_trajectory_interpolation():
    g = TimeGrid(0, 2, 1.0)
    tr = GlobalTrajectory(g, np.array([[0.0], [2.0], [4.0]]))
    assert tr(np.array([0.5, 1.75]))[:, 0] == pytest.approx([1.0, 3.5])
    assert tr.sup_norm() == 4.0
    with pytest.raises(WindowError):
        tr(2.5)


def test_check_derivative(gallery):
    S = SemilinearSystem(gallery, quad_f, quad_df, vectorized=True)
    times = np.linspace(-2, 2, 5)
    states = np.full((5, 2), 0.3)
    assert S.check_derivative(times, states) < 1e-5


def test_mild_solve_without_forcing(gallery):
    S = SemilinearSystem(gallery, zero_f, zero_df, vectorized=True)
    sol = mild_solve(S, 0.5, [1.0, -1.0], 2.0, step=1e-3)
    assert np.allclose(sol.values[-1], gallery(2.5, 0.5) @ [1.0, -1.0], rtol=1e-10)


def test_mild_solve_constant_forcing():
    P = ContinuousProcess.autonomous(np.array([[-1.0]]))
    S = SemilinearSystem(P, lambda t, x: np.ones_like(x), lambda t, x: np.zeros(x.shape + (1,)),
                         vectorized=True)
    sol = mild_solve(S, 0.0, [0.0], 1.0, step=1e-2)
    assert sol.values[-1, 0] == pytest.approx(1 - np.exp(-1.0), rel=1e-9)
    # closed-form base without a generator goes through Picard quadrature
    Pc = ContinuousProcess.closed_form(lambda t, s: np.array([[np.exp(-(t - s))]]), 1)
    Sc = SemilinearSystem(Pc, S.f, S.df, vectorized=True)
    assert mild_solve(Sc, 0.0, [0.0], 1.0, step=1e-2).values[-1, 0] == pytest.approx(
        1 - np.exp(-1.0), rel=1e-4)


def test_linearize_along_zero_is_base(gallery, xi):
    S = SemilinearSystem(gallery, quad_f, quad_df, vectorized=True)
    assert linearize_along(S, xi) is gallery
    shifted = GlobalTrajectory(xi.grid, xi.values + 0.1)
    L = linearize_along(S, shifted)
    assert L is not gallery
    assert not np.allclose(L(1.0, 0.0), gallery(1.0, 0.0))


def test_rho_quadratic_oracle(gallery, gallery_C, xi):
    S = SemilinearSystem(gallery, quad_f, quad_df, vectorized=True)
    for eps in (0.5, 0.125):
        assert rho_of_eps(S, xi, eps, gallery_C.nu) == pytest.approx(eps, rel=1e-12)


def test_isolation_radius_oracle(gallery, gallery_C, xi):
    S = SemilinearSystem(gallery, quad_f, quad_df, vectorized=True)
    assert isolation_radius(gallery_C, lambda e: rho_of_eps(S, xi, e, gallery_C.nu)) == 0.25


def test_green_integral_constant_forcing():
    P = ContinuousProcess.autonomous(np.diag([-1.0, 1.0]))
    Q = ProjectionFamily.constant(np.diag([0.0, 1.0]))
    C = DichotomyCertificate(D=1.0, nu=0.0, alpha=1.0)
    G = GreenFunction(P, Q, C)
    phi = GlobalTrajectory.zeros(TimeGrid(-20, 20, 0.05), 2)
    c = np.array([2.0, 3.0])
    out = green_integral_apply(G, lambda t, x: np.broadcast_to(c, x.shape), phi)
    mid = np.abs(phi.times) <= 2
    assert np.allclose(out.values[mid], [2.0, -3.0], atol=1e-3)


def test_persist_linear_matches_green_integral(gallery, gallery_Q, gallery_C, xi, setup):
    c = np.array([1.0, 0.5])
    g = lambda t, x: 1e-3 * weight(t) * c + np.zeros_like(x)
    S_f = setup.system
    S_g = SemilinearSystem(gallery, g, zero_df, vectorized=True)
    psi, rep, _ = persist_solution(S_f, xi, S_g, 0.05, 0.01, setup=setup, certify=False)
    ref = green_integral_apply(GreenFunction(gallery, gallery_Q, gallery_C), g,
                               GlobalTrajectory.zeros(setup.grid, 2))
    assert np.abs(ref.values - psi.values).max() <= 1e-5
    assert rep.converged and rep.iterations <= 3


def test_persist_solution_is_bounded_solution(gallery, xi, setup):
    g = lambda t, x: 1e-3 * weight(t) * (np.array([1.0, 0.0]) + np.tanh(x))
    dg = lambda t, x: (1e-3 * weight(t) * (1 - np.tanh(x) ** 2))[..., None] * np.eye(2)
    S_g = SemilinearSystem(gallery, g, dg, vectorized=True)
    psi, rep, _ = persist_solution(setup.system, xi, S_g, 0.05, 0.01, setup=setup, certify=False)
    # psi solves the variation-of-constants equation between interior nodes
    sol = mild_solve(S_g, 0.0, psi(0.0), 1.0, step=1e-3)
    assert np.allclose(sol.values[-1], psi(1.0), atol=1e-6)


def test_persist_rejects_large_forcing(gallery, xi, setup):
    g = lambda t, x: 0.5 * weight(t) + np.zeros_like(x)
    S_g = SemilinearSystem(gallery, g, zero_df, vectorized=True)
    with pytest.raises(HypothesisError) as info:
        persist_solution(setup.system, xi, S_g, 0.05, 0.01, setup=setup, certify=False)
    assert info.value.item == "closeness"
