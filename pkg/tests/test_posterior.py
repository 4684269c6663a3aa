import numpy as np
import pytest

from hdm.errors import InvalidParams, NotPositiveDefinite
from hdm.forward import forward_jump
from hdm.posterior import (
    StepCache,
    brute_force_posterior,
    cholesky,
    coefficients,
    loss_weight,
    posterior_mean,
    posterior_mean_operators,
    posterior_sigma,
    step_matrices,
    symmetrize,
)
from hdm.schedule import linear_schedule

from conftest import make_ops


def mpow(A, e):
    return np.linalg.matrix_power(A if e >= 0 else np.linalg.inv(A), abs(e))


def rel(x, y):
    return np.linalg.norm(x - y) / np.linalg.norm(y)


def test_K_zero_gives_ddpm_posterior(rng):
    ops = make_ops(3, 3, 0.0)
    s = linear_schedule(10)
    for n in (2, 5, 10):
        a, ab, abp, b = s.alpha[n], s.alpha_bar[n], s.alpha_bar[n - 1], s.beta[n]
        bt = (1 - abp) * b / (1 - ab)
        np.testing.assert_allclose(posterior_sigma(ops, s, n), bt * np.eye(9), atol=1e-12)
        u_n, u0 = rng.standard_normal((2, 9))
        classical = np.sqrt(abp) * b / (1 - ab) * u0 + np.sqrt(a) * (1 - abp) / (1 - ab) * u_n
        np.testing.assert_allclose(posterior_mean(ops, s, n, u_n, u0)[0], classical, atol=1e-12)


@pytest.mark.parametrize("K", [0.0625, 0.095])
@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_matches_schur_conditioning(K, n):
    ops = make_ops(2, 2, K)
    s = linear_schedule(5)
    brute = brute_force_posterior(ops, s, n)
    P, Q = posterior_mean_operators(ops, s, n)
    assert rel(posterior_sigma(ops, s, n), brute.Sigma) <= 1e-8
    assert rel(P, brute.mean_op_u_n) <= 1e-8
    assert rel(Q, brute.mean_op_u0) <= 1e-8


def test_sigma_is_scaled_shaping_covariance():
    # with commuting powers of A the posterior covariance reduces to beta_tilde * B_{n-1}
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(8)
    A = np.array(ops.A)
    for n in range(2, 9):
        M = mpow(A, n - 1 - 8)
        expect = s.posterior_variance(n) * M @ M.T
        assert rel(posterior_sigma(ops, s, n), expect) <= 1e-9


def test_closed_form_coefficients():
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(8)
    A = np.array(ops.A)
    for n in range(1, 9):
        a, ab, b = s.alpha[n], s.alpha_bar[n], s.beta[n]
        C, D = coefficients(ops, s, n)
        assert rel(C, np.linalg.inv(A) / np.sqrt(a)) <= 1e-9
        assert rel(D, -b / (np.sqrt(a) * np.sqrt(1 - ab)) * mpow(A, n - 8 - 1)) <= 1e-9


def test_weight_is_scalar_after_first_step():
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(8)
    for n in range(2, 9):
        W = loss_weight(ops, s, n)
        scalar = s.beta[n] / (s.alpha[n] * (1 - s.alpha_bar[n - 1]))
        assert np.abs(W - scalar * np.eye(9)).max() / scalar <= 1e-6


def test_sigma_symmetric_before_symmetrizing():
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(10)
    for n in range(2, 11):
        S = posterior_sigma(ops, s, n, symmetrize_result=False)
        assert np.abs(S - S.T).max() / np.abs(S).max() <= 1e-10


def test_reparameterization(rng):
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(10)
    for _ in range(20):
        n = int(rng.integers(2, 11))
        u0, e = rng.standard_normal((2, 9))
        u_n = forward_jump(ops, s, u0, n, eps=e).u_n
        C, D = coefficients(ops, s, n)
        mu = posterior_mean(ops, s, n, u_n, u0)
        assert rel(u_n @ C.T + e @ D.T, mu) <= 1e-8


def test_first_step_recovers_clean_field(rng):
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(10)
    u0, e = rng.standard_normal((2, 9))
    u1 = forward_jump(ops, s, u0, 1, eps=e).u_n
    C, D = coefficients(ops, s, 1)
    np.testing.assert_allclose((u1 @ C.T + e @ D.T)[0], u0, atol=1e-10)
    np.testing.assert_array_equal(posterior_sigma(ops, s, 1), np.eye(9))


def test_weight_is_psd_and_zero_on_exact_noise(rng):
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(10)
    for n in (1, 2, 6, 10):
        W = loss_weight(ops, s, n)
        lam = np.linalg.eigvalsh(W)
        assert lam.min() >= -1e-10 * lam.max()
        e = rng.standard_normal(9)
        r = e - e
        assert r @ W @ r == 0.0


def test_step_matrices_consistent():
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(6)
    sm = step_matrices(ops, s, 4)
    np.testing.assert_allclose(sm.L @ sm.L.T, sm.Sigma, rtol=1e-12, atol=1e-15)
    Winv = sm.D.T @ np.linalg.solve(sm.Sigma, sm.D)
    assert rel(sm.W, Winv) <= 1e-9
    with pytest.raises(ValueError):
        sm.C[0, 0] = 1.0


def test_cache_lru():
    ops = make_ops(2, 2, 0.05)
    s = linear_schedule(6)
    cache = StepCache(ops, s, maxsize=2)
    a2 = cache(2)
    a3 = cache(3)
    assert cache(2) is a2
    cache(4)  # evicts 3, the least recently used
    assert cache(2) is a2
    assert cache(3) is not a3
    with pytest.raises(InvalidParams):
        StepCache(ops, s, maxsize=0)


def test_symmetrize_and_cholesky_guards():
    M = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        symmetrize(M)
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_brute_force_limits():
    s = linear_schedule(4)
    with pytest.raises(InvalidParams):
        brute_force_posterior(make_ops(4, 4, 0.05), s, 2)
    with pytest.raises(InvalidParams):
        brute_force_posterior(make_ops(2, 2, 0.05), s, 1)


def test_random_propagator_posterior_agrees():
    from hdm.heat_operator import GridShape, SchemeParams, random_operator

    ops = random_operator(GridShape(2, 2), SchemeParams(0.5, 0.0625), seed=0)
    s = linear_schedule(5)
    for n in range(2, 6):
        brute = brute_force_posterior(ops, s, n)
        assert rel(posterior_sigma(ops, s, n), brute.Sigma) <= 1e-8
