import numpy as np
import pytest
import scipy.linalg

from sseweak.errors import SingularMatrixError, StepError
from sseweak.rng import NoiseLaw
from sseweak.sde import (
    SDEProblem,
    check_jacobian,
    euler_exp_step,
    explicit_step,
    finite_difference_jacobian,
    implicit_exp_step,
    richardson,
    run_weak,
)


def linear_problem(a, s, constant=True):
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    d, n = s.shape
    return SDEProblem(
        dim=d,
        noise_dim=n,
        drift=lambda t, x: x @ a.T,
        diffusion=lambda t, x: np.broadcast_to(s, (x.shape[0], d, n)),
        jacobian=lambda t, x: np.broadcast_to(a, (x.shape[0], d, d)),
        constant_jacobian=constant,
    )


OU = linear_problem([[-1.0]], [[1.0]])


def ou_scheme1_second_moment(x0, steps, horizon=1.0):
    """Exact E V_M^2 of Scheme 1 on OU: s <- e^{-2h}(s + h)."""
    h = horizon / steps
    s = x0 * x0
    for _ in range(steps):
        s = np.exp(-2 * h) * (s + h)
    return s


def test_scheme1_exact_for_deterministic_linear_system():
    a = np.array([[-2.0, 1.0], [0.0, -0.5]])
    p = linear_problem(a, np.zeros((2, 1)), constant=False)
    x = np.array([1.0, -2.0])
    for _ in range(10):
        x = euler_exp_step(p, 0.0, x, 0.1, np.zeros(1))
    assert np.max(np.abs(x - scipy.linalg.expm(a) @ [1.0, -2.0])) <= 1e-13


def test_scheme1_step_formula():
    # Nonlinear drift: compare against the written-out step.
    def drift(t, x):
        return np.stack([-x[:, 0] ** 3 + x[:, 1], np.sin(x[:, 0]) - 2 * x[:, 1]], axis=1)

    def jac(t, x):
        j = np.zeros((x.shape[0], 2, 2))
        j[:, 0, 0] = -3 * x[:, 0] ** 2
        j[:, 0, 1] = 1.0
        j[:, 1, 0] = np.cos(x[:, 0])
        j[:, 1, 1] = -2.0
        return j

    def sigma(t, x):
        return np.stack([np.stack([x[:, 1], np.ones(len(x))], 1), np.stack([np.zeros(len(x)), x[:, 0]], 1)], 1)

    p = SDEProblem(2, 2, drift, sigma, jacobian=jac)
    x = np.array([0.7, -0.3])
    xi = np.array([1.0, -1.0])
    dt = 0.05
    jb = jac(0, x[None])[0]
    b = drift(0, x[None])[0]
    s = sigma(0, x[None])[0]
    expected = scipy.linalg.expm(jb * dt) @ (x + dt * (b - jb @ x) + np.sqrt(dt) * s @ xi)
    assert np.max(np.abs(euler_exp_step(p, 0.0, x, dt, xi) - expected)) <= 1e-14
    implicit = np.linalg.solve(np.eye(2) - dt * jb, x + dt * (b - jb @ x) + np.sqrt(dt) * s @ xi)
    assert np.max(np.abs(implicit_exp_step(p, 0.0, x, dt, xi) - implicit)) <= 1e-14
    euler = x + dt * b + np.sqrt(dt) * s @ xi
    assert np.max(np.abs(explicit_step(p, 0.0, x, dt, xi) - euler)) <= 1e-15
    # The finite-difference Jacobian path gives the same step to FD accuracy.
    p_fd = SDEProblem(2, 2, drift, sigma)
    assert np.max(np.abs(euler_exp_step(p_fd, 0.0, x, dt, xi) - expected)) <= 1e-8


def test_batched_step_equals_single_steps():
    p = linear_problem([[-1.0, 0.2], [0.1, -3.0]], [[1.0, 0.0], [0.5, 1.0]], constant=False)
    rs = np.random.default_rng(0)
    x = rs.normal(size=(5, 2))
    xi = rs.choice([-1.0, 1.0], size=(5, 2))
    batch = euler_exp_step(p, 0.0, x, 0.1, xi)
    for i in range(5):
        assert np.allclose(batch[i], euler_exp_step(p, 0.0, x[i], 0.1, xi[i]), atol=1e-15)


def test_finite_difference_jacobian_and_check():
    def drift(t, x):
        return np.stack([np.exp(x[:, 0]) * x[:, 1], x[:, 0] ** 2], axis=1)

    def jac(t, x):
        j = np.zeros((x.shape[0], 2, 2))
        j[:, 0, 0] = np.exp(x[:, 0]) * x[:, 1]
        j[:, 0, 1] = np.exp(x[:, 0])
        j[:, 1, 0] = 2 * x[:, 0]
        return j

    x = np.array([[0.3, -1.2], [1.0, 2.0]])
    assert np.max(np.abs(finite_difference_jacobian(drift, 0.0, x) - jac(0, x))) <= 1e-8
    ok = SDEProblem(2, 1, drift, lambda t, x: np.ones((len(x), 2, 1)), jacobian=jac)
    assert check_jacobian(ok, 0.0, x) <= 1e-8
    bad = SDEProblem(2, 1, drift, lambda t, x: np.ones((len(x), 2, 1)), jacobian=lambda t, x: 2 * jac(t, x))
    with pytest.raises(ValueError):
        check_jacobian(bad, 0.0, x)


def test_singular_implicit_step():
    dt = 0.5
    p = linear_problem([[1.0 / dt]], [[1.0]], constant=False)
    with pytest.raises(SingularMatrixError):
        implicit_exp_step(p, 0.0, np.array([1.0]), dt, np.array([1.0]))


def test_non_finite_state_reports_trajectory():
    p = SDEProblem(
        1,
        1,
        drift=lambda t, x: np.where(x > 5, np.inf, x),
        diffusion=lambda t, x: np.ones((len(x), 1, 1)),
        jacobian=lambda t, x: np.zeros((len(x), 1, 1)),
    )
    x = np.array([[0.0], [10.0]])
    with pytest.raises(StepError) as info:
        euler_exp_step(p, 0.0, x, 0.1, np.ones((2, 1)))
    assert info.value.trajectory == 1


def test_step_argument_validation():
    with pytest.raises(ValueError):
        euler_exp_step(OU, 0.0, np.array([1.0]), 0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        euler_exp_step(OU, 0.0, np.array([1.0]), 0.1, np.array([1.0, 1.0]))


def test_richardson():
    assert richardson(1.0, 0.75) == 0.5
    # Cancels an exact first-order error: e(h) = a + c h.
    assert richardson(3.0 + 0.4, 3.0 + 0.2) == pytest.approx(3.0)


@pytest.mark.parametrize("law", list(NoiseLaw))
def test_run_weak_second_moment_matches_recursion(law):
    est = run_weak(OU, [1.0], 1.0, 8, law=law, payoff=lambda x: x[:, 0] ** 2, trajectories=200_000, seed=5)
    exact = ou_scheme1_second_moment(1.0, 8)
    # 4.5 x the 90% half-width is about 7.5 standard errors.
    assert abs(est.mean - exact) <= 4.5 * est.ci_halfwidth


def test_run_weak_mean_exact_for_linear_drift():
    est = run_weak(OU, [1.0], 1.0, 4, trajectories=200_000, seed=11)
    assert abs(est.mean - np.exp(-1.0)) <= 4.5 * est.ci_halfwidth


def test_run_weak_independent_of_workers():
    kw = dict(trajectories=4000, seed=3, chunk_size=1000, payoff=lambda x: x[:, 0] ** 2)
    a = run_weak(OU, [1.0], 1.0, 8, workers=1, **kw)
    b = run_weak(OU, [1.0], 1.0, 8, workers=3, **kw)
    assert a == b


def test_run_weak_callable_initial_state_and_implicit():
    est = run_weak(
        OU,
        lambda idx: np.zeros((len(idx), 1)),
        1.0,
        16,
        scheme="implicit_v1",
        payoff=lambda x: x[:, 0] ** 2,
        trajectories=100_000,
        seed=2,
    )
    h = 1 / 16
    s = 0.0
    for _ in range(16):
        s = (s + h) / (1 + h) ** 2
    assert abs(est.mean - s) <= 4.5 * est.ci_halfwidth


def test_run_weak_reports_failing_trajectory():
    p = SDEProblem(
        1,
        1,
        drift=lambda t, x: np.where(x > 0.5, np.nan, 0.0 * x),
        diffusion=lambda t, x: np.ones((len(x), 1, 1)),
        jacobian=lambda t, x: np.zeros((len(x), 1, 1)),
    )
    with pytest.raises(StepError) as info:
        run_weak(p, [0.0], 1.0, 10, trajectories=100, chunk_size=10)
    assert info.value.trajectory is not None and info.value.step is not None
