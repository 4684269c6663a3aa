"""Exact reverse posterior q(u_{n-1} | u_n, u_0) and its reparameterization.

Everything is assembled from the information form

    Sigma_n^{-1} = alpha_n / (1 - alpha_n) * A^T B_n^{-1} A + B_{n-1}^{-1} / (1 - abar_{n-1})

with ``B_n^{-1} = (A^(N-n))^T A^(N-n)`` built from powers of A, never by
inverting B_n.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import InvalidParams, NotPositiveDefinite
from .forward import as_field
from .heat_operator import OperatorSet
from .schedule import NoiseSchedule, matrix_power

ASYMMETRY_TOL = 1e-8


def _rel_asym(M: np.ndarray) -> float:
    scale = np.linalg.norm(M)
    return float(np.linalg.norm(M - M.T) / scale) if scale > 0 else 0.0


def symmetrize(M: np.ndarray, what: str = "matrix") -> np.ndarray:
    asym = _rel_asym(M)
    if asym > ASYMMETRY_TOL:
        raise NotPositiveDefinite(f"{what} asymmetry {asym:.3e} exceeds {ASYMMETRY_TOL}")
    return 0.5 * (M + M.T)


def cholesky(M: np.ndarray, what: str = "Sigma") -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(M).min())
        raise NotPositiveDefinite(f"{what} is not positive definite (min eigenvalue {lam:.3e})") from None


def _inv_shaping(ops: OperatorSet, N: int, n: int) -> np.ndarray:
    """B_n^{-1} = (A^(N-n))^T A^(N-n)."""
    M = matrix_power(ops, N - n)
    return M.T @ M


def _information(ops, schedule, n):
    """Return (Sigma^{-1}, B_n^{-1}, B_{n-1}^{-1})."""
    N = schedule.N
    a, ab_prev = schedule.alpha[n], schedule.alpha_bar[n - 1]
    Binv_n = _inv_shaping(ops, N, n)
    Binv_prev = _inv_shaping(ops, N, n - 1)
    MA = matrix_power(ops, N - n) @ ops.A
    J = (a / (1.0 - a)) * (MA.T @ MA) + Binv_prev / (1.0 - ab_prev)
    return J, Binv_n, Binv_prev


def posterior_sigma(ops: OperatorSet, schedule: NoiseSchedule, n: int, symmetrize_result: bool = True) -> np.ndarray:
    """Posterior covariance Sigma_n; the identity at n = 1 by convention."""
    schedule.check_step(n)
    if n == 1:
        return np.eye(ops.shape.size)
    J, _, _ = _information(ops, schedule, n)
    Sigma = np.linalg.solve(J, np.eye(J.shape[0]))
    if not symmetrize_result:
        return Sigma
    return symmetrize(Sigma, f"Sigma_{n}")


def posterior_mean_operators(ops, schedule, n):
    """Matrices (P, Q) with mu_n(u_n, u_0) = P u_n + Q u_0."""
    schedule.check_step(n, lo=2)
    a, ab_prev = schedule.alpha[n], schedule.alpha_bar[n - 1]
    J, Binv_n, Binv_prev = _information(ops, schedule, n)
    Sigma = symmetrize(np.linalg.solve(J, np.eye(J.shape[0])), f"Sigma_{n}")
    P = Sigma @ ((np.sqrt(a) / (1.0 - a)) * (ops.A.T @ Binv_n))
    Q = Sigma @ ((np.sqrt(ab_prev) / (1.0 - ab_prev)) * (Binv_prev @ matrix_power(ops, n - 1)))
    return P, Q


def posterior_mean(ops, schedule, n, u_n, u0) -> np.ndarray:
    u_n, u0 = as_field(u_n, ops), as_field(u0, ops)
    P, Q = posterior_mean_operators(ops, schedule, n)
    return u_n @ P.T + u0 @ Q.T


class Coefficients(NamedTuple):
    C: np.ndarray
    D: np.ndarray


def coefficients(ops, schedule, n, Sigma: np.ndarray | None = None) -> Coefficients:
    """C_n, D_n with mu_n = C_n u_n + D_n e_n."""
    schedule.check_step(n)
    N = schedule.N
    a = schedule.alpha[n]
    if n == 1:
        C = ops.A_inv / np.sqrt(a)
        D = -np.sqrt((1.0 - a) / a) * matrix_power(ops, -N)
        return Coefficients(C, D)
    ab, ab_prev = schedule.alpha_bar[n], schedule.alpha_bar[n - 1]
    if Sigma is None:
        Sigma = posterior_sigma(ops, schedule, n)
    Binv_n = _inv_shaping(ops, N, n)
    Binv_prev = _inv_shaping(ops, N, n - 1)
    C = Sigma @ (
        (np.sqrt(a) / (1.0 - a)) * (ops.A.T @ Binv_n) + (Binv_prev @ ops.A_inv) / ((1.0 - ab_prev) * np.sqrt(a))
    )
    scale = -np.sqrt(1.0 - ab) / ((1.0 - ab_prev) * np.sqrt(a))
    D = scale * (Sigma @ Binv_prev @ matrix_power(ops, n - N - 1))
    return Coefficients(C, D)


def _weight_from(D: np.ndarray, L: np.ndarray) -> np.ndarray:
    # D^T Sigma^{-1} D = (L^{-1} D)^T (L^{-1} D)
    Y = linalg.solve_triangular(L, D, lower=True)
    W = Y.T @ Y
    return 0.5 * (W + W.T)


def loss_weight(ops, schedule, n) -> np.ndarray:
    """W_n = D_n^T Sigma_n^{-1} D_n (Sigma_1 = I)."""
    return step_matrices(ops, schedule, n).W


@dataclass(frozen=True, eq=False)
class StepMatrices:
    n: int
    Sigma: np.ndarray
    L: np.ndarray
    C: np.ndarray
    D: np.ndarray
    W: np.ndarray


def step_matrices(ops: OperatorSet, schedule: NoiseSchedule, n: int) -> StepMatrices:
    Sigma = posterior_sigma(ops, schedule, n)
    L = cholesky(Sigma, f"Sigma_{n}")
    C, D = coefficients(ops, schedule, n, Sigma=Sigma)
    W = _weight_from(D, L)
    for M in (Sigma, L, C, D, W):
        M.setflags(write=False)
    return StepMatrices(n, Sigma, L, C, D, W)


class StepCache:
    """Thread-safe LRU of StepMatrices for one (operators, schedule) pair."""

    def __init__(self, ops: OperatorSet, schedule: NoiseSchedule, maxsize: int = 8):
        if maxsize < 1:
            raise InvalidParams("cache size must be >= 1")
        self.ops = ops
        self.schedule = schedule
        self.maxsize = maxsize
        self._items: OrderedDict[int, StepMatrices] = OrderedDict()
        self._lock = threading.Lock()

    def __call__(self, n: int) -> StepMatrices:
        with self._lock:
            hit = self._items.get(n)
            if hit is not None:
                self._items.move_to_end(n)
                return hit
        sm = step_matrices(self.ops, self.schedule, n)
        with self._lock:
            self._items[n] = sm
            self._items.move_to_end(n)
            while len(self._items) > self.maxsize:
                self._items.popitem(last=False)
        return sm


class BrutePosterior(NamedTuple):
    mean_op_u_n: np.ndarray
    mean_op_u0: np.ndarray
    Sigma: np.ndarray


def brute_force_posterior(ops: OperatorSet, schedule: NoiseSchedule, n: int) -> BrutePosterior:
    """Condition the joint Gaussian of (u_{n-1}, u_n) | u_0 on u_n (Schur complement).

    Built in covariance form from the forward kernels with numpy's own
    matrix powers and inverse, so it shares no code path with the
    information-form formulas above.
    """
    schedule.check_step(n, lo=2)
    if ops.shape.size > 9:
        raise InvalidParams("brute-force posterior is limited to grids of at most 9 pixels")
    N = schedule.N
    A = np.array(ops.A)
    Ainv = np.linalg.inv(A)
    mpow = np.linalg.matrix_power

    def shaping(k):
        M = mpow(Ainv, N - k)
        return M @ M.T

    a, ab, ab_prev = schedule.alpha[n], schedule.alpha_bar[n], schedule.alpha_bar[n - 1]
    P11 = (1.0 - ab_prev) * shaping(n - 1)
    P21 = np.sqrt(a) * A @ P11
    P22 = a * A @ P11 @ A.T + (1.0 - a) * shaping(n)
    G = np.linalg.solve(P22.T, P21).T  # P12 P22^{-1}
    Sigma = P11 - G @ P21
    op_un = G
    op_u0 = np.sqrt(ab_prev) * mpow(A, n - 1) - G @ (np.sqrt(ab) * mpow(A, n))
    return BrutePosterior(op_un, op_u0, 0.5 * (Sigma + Sigma.T))
