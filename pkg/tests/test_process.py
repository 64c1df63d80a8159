import numpy as np
import pytest
from scipy.linalg import expm

from dichotomy_lab.errors import ArgumentError, NumericError, WindowError
from dichotomy_lab.process import (
    ContinuousProcess,
    DiscreteProcess,
    TimeGrid,
    integrate_generator,
    operator_norm,
    propagate_discrete,
    propagator_table,
)


def test_grid_parse_and_count():
    g = TimeGrid.parse("-10:10:0.25")
    assert g.count == 81
    assert g.times[0] == -10.0 and g.times[-1] == 10.0
    assert g.to_dict() == {"t_min": -10.0, "t_max": 10.0, "step": 0.25, "count": 81}


@pytest.mark.parametrize("spec", ["1:0:0.1", "0:1:0", "0:1:0.3", "0:1", "a:b:c"])
def test_grid_rejects_bad_specs(spec):
    with pytest.raises(ArgumentError):
        TimeGrid.parse(spec)


def test_operator_norm_matches_singular_value():
    M = np.array([[3.0, 0.0], [4.0, 5.0]])
    assert operator_norm(M) == pytest.approx(np.linalg.svd(M, compute_uv=False)[0])
    stack = np.stack([M, 2 * M])
    assert np.allclose(operator_norm(stack), [operator_norm(M), 2 * operator_norm(M)])


def test_operator_norm_rejects_nan():
    with pytest.raises(NumericError):
        operator_norm(np.array([[np.nan]]))


def test_discrete_product_order():
    steps = np.array([[[1.0, 1.0], [0.0, 1.0]], [[2.0, 0.0], [0.0, 1.0]]])
    P = DiscreteProcess(steps, start=0)
    assert np.allclose(P(2, 0), steps[1] @ steps[0])
    assert np.allclose(P(1, 1), np.eye(2))


def test_discrete_cocycle(rng):
    P = DiscreteProcess(rng.normal(size=(12, 3, 3)), start=-6)
    for _ in range(20):
        m, k, n = sorted(rng.integers(-6, 7, size=3))
        assert np.allclose(P(n, k) @ P(k, m), P(n, m))


def test_discrete_errors(saddle):
    with pytest.raises(ArgumentError):
        propagate_discrete(saddle, 0, 3)
    with pytest.raises(WindowError):
        saddle(61, 0)
    with pytest.raises(WindowError):
        saddle.step(60)


def test_autonomous_continuous_matches_expm():
    C = np.array([[0.0, 1.0], [-2.0, -0.3]])
    P = ContinuousProcess.autonomous(C)
    assert np.allclose(P(1.7, 0.2), expm(1.5 * C), atol=1e-12)


def test_rk4_matches_closed_form():
    A = lambda t: np.array([[np.sin(t)]])
    U = integrate_generator(A, 2.0, 0.5, step=1e-3, dimension=1)
    assert U[0, 0] == pytest.approx(np.exp(np.cos(0.5) - np.cos(2.0)), rel=1e-11)


def test_rk4_fourth_order():
    A = lambda t: np.array([[0.0, 1.0], [-1.0 - 0.5 * np.cos(t), 0.0]])
    ref = integrate_generator(A, 3.0, 0.0, step=1e-4, dimension=2)
    e1 = np.abs(integrate_generator(A, 3.0, 0.0, step=0.1, dimension=2) - ref).max()
    e2 = np.abs(integrate_generator(A, 3.0, 0.0, step=0.05, dimension=2) - ref).max()
    assert e1 / e2 >= 12


def test_generator_process_cocycle():
    P = ContinuousProcess.from_generator(lambda t: np.array([[-1.0, t], [0.0, 0.5]]), dimension=2)
    assert np.allclose(P(2.0, 1.0) @ P(1.0, -0.5), P(2.0, -0.5), atol=1e-10)
    with pytest.raises(ArgumentError):
        P(0.0, 1.0)


def test_batch_agrees_with_pointwise(gallery):
    t = np.array([1.0, 3.0, -2.0])
    s = np.array([0.0, 1.0, -5.0])
    B = gallery.batch(t, s)
    for k in range(3):
        assert np.allclose(B[k], gallery(t[k], s[k]))


def test_propagator_table(gallery):
    times = np.linspace(-2, 2, 9)
    F = propagator_table(gallery, times)
    for i in range(9):
        for j in range(i + 1):
            assert np.allclose(F[i, j], gallery(times[i], times[j]), atol=1e-12)


def test_from_samples_chains_steps():
    g = TimeGrid(0.0, 2.0, 0.5)
    steps = np.array([np.diag([0.5, 2.0])] * 4)
    P = ContinuousProcess.from_samples(g, steps)
    assert np.allclose(P(2.0, 0.5), np.diag([0.125, 8.0]))
