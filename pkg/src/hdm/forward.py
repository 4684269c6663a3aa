"""Forward (noising) process of the heat diffusion model.

Image fields are arrays of shape ``(channels, I*J)``; a bare vector is
treated as a single channel. Every channel is propagated by the same A.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch
from .heat_operator import OperatorSet
from .schedule import NoiseSchedule, PowerCursor, matrix_power


class ForwardSample(NamedTuple):
    n: int
    u_n: np.ndarray
    e_n: np.ndarray


class KernelParams(NamedTuple):
    mean_op_step: np.ndarray
    cov_step: np.ndarray
    mean_op_jump: np.ndarray
    cov_jump: np.ndarray


def as_field(u, ops: OperatorSet) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != ops.shape.size:
        raise DimensionMismatch(f"field must be (channels, {ops.shape.size}), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("field contains non-finite values")
    return u


def _noise(rng, like: np.ndarray, eps) -> np.ndarray:
    if eps is None:
        return rng.standard_normal(like.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), like.shape)
    return np.array(eps)


def noise_shaping(ops: OperatorSet, schedule: NoiseSchedule, n: int) -> np.ndarray:
    """A^(n-N), the factor applied to fresh noise at step n."""
    return matrix_power(ops, n - schedule.N)


def forward_step(ops, schedule, u_prev, n, rng=None, eps=None) -> ForwardSample:
    """u_n = sqrt(alpha_n) A u_{n-1} + sqrt(1 - alpha_n) A^(n-N) eps.

    ``eps`` overrides the random draw (tests pass zeros for deterministic means).
    """
    schedule.check_step(n)
    u_prev = as_field(u_prev, ops)
    e = _noise(rng, u_prev, eps)
    M = noise_shaping(ops, schedule, n)
    a = schedule.alpha[n]
    u_n = np.sqrt(a) * (u_prev @ ops.A.T) + np.sqrt(1.0 - a) * (e @ M.T)
    return ForwardSample(n, u_n, e)


def forward_jump(ops, schedule, u0, n, rng=None, eps=None, cursor: PowerCursor | None = None) -> ForwardSample:
    """Closed form u_n = sqrt(abar_n) A^n u0 + sqrt(1 - abar_n) A^(n-N) e_n.

    Returns the drawn e_n, which is the regression target during training.
    """
    schedule.check_step(n)
    u0 = as_field(u0, ops)
    e = _noise(rng, u0, eps)
    if cursor is not None and cursor.n == n:
        An, M = cursor.A_pow_n, cursor.A_pow_n_minus_N
    else:
        An, M = matrix_power(ops, n), noise_shaping(ops, schedule, n)
    ab = schedule.alpha_bar[n]
    u_n = np.sqrt(ab) * (u0 @ An.T) + np.sqrt(1.0 - ab) * (e @ M.T)
    return ForwardSample(n, u_n, e)


def shaping_covariance(ops: OperatorSet, schedule: NoiseSchedule, n: int) -> np.ndarray:
    """B_n = A^(n-N) (A^(n-N))^T, symmetrized."""
    M = noise_shaping(ops, schedule, n)
    B = M @ M.T
    return 0.5 * (B + B.T)


def forward_kernel_params(ops, schedule, n) -> KernelParams:
    schedule.check_step(n)
    B = shaping_covariance(ops, schedule, n)
    a, ab = schedule.alpha[n], schedule.alpha_bar[n]
    return KernelParams(
        mean_op_step=np.sqrt(a) * ops.A,
        cov_step=(1.0 - a) * B,
        mean_op_jump=np.sqrt(ab) * matrix_power(ops, n),
        cov_jump=(1.0 - ab) * B,
    )
