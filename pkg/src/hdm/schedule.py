"""Linear beta schedule and integer powers of the propagator."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CursorUnderflow, InvalidParams
from .heat_operator import OperatorSet

BETA_START = 1e-4
BETA_END = 0.02
RESYNC_EVERY = 64


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """beta/alpha are indexed 1..N (slot 0 is padding); alpha_bar[0] = 1."""

    N: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        for a in (self.beta, self.alpha, self.alpha_bar):
            a.setflags(write=False)

    def posterior_variance(self, n: int) -> float:
        """Scalar DDPM posterior variance (1 - abar_{n-1}) beta_n / (1 - abar_n)."""
        return (1.0 - self.alpha_bar[n - 1]) * self.beta[n] / (1.0 - self.alpha_bar[n])

    def check_step(self, n: int, lo: int = 1) -> None:
        if not lo <= n <= self.N:
            raise InvalidParams(f"step n={n} outside [{lo}, {self.N}]")


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=float)
    if betas.ndim != 1 or betas.size < 1:
        raise InvalidParams("betas must be a non-empty vector")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise InvalidParams("every beta must lie strictly inside (0, 1)")
    N = betas.size
    beta = np.concatenate([[np.nan], betas])
    alpha = 1.0 - beta
    alpha_bar = np.empty(N + 1)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(alpha[1:])
    return NoiseSchedule(N, beta, alpha, alpha_bar)


def linear_schedule(N: int) -> NoiseSchedule:
    if N < 2:
        raise InvalidParams(f"N must be >= 2, got {N}")
    return schedule_from_betas(np.linspace(BETA_START, BETA_END, N))


def write_schedule_csv(schedule: NoiseSchedule, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "beta", "alpha", "alpha_bar"])
        for n in range(1, schedule.N + 1):
            w.writerow([n, *(repr(float(a[n])) for a in (schedule.beta, schedule.alpha, schedule.alpha_bar))])


def matrix_power(ops: OperatorSet, e: int) -> np.ndarray:
    """A**e by binary exponentiation; negative exponents go through A^{-1}."""
    e = int(e)
    n = ops.shape.size
    if e == 0 or ops.is_identity:
        return np.eye(n)
    base = ops.A if e > 0 else ops.A_inv
    e = abs(e)
    result = None
    while True:
        if e & 1:
            result = base.copy() if result is None else result @ base
        e >>= 1
        if not e:
            return result
        base = base @ base


class PowerCursor:
    """Holds A^n and A^(n-N) for a descending walk over steps.

    Each ``step_down`` costs one A^{-1} product per matrix; both matrices are
    rebuilt from binary powers every ``RESYNC_EVERY`` steps to cap drift.
    """

    def __init__(self, ops: OperatorSet, schedule: NoiseSchedule, n: int):
        schedule.check_step(n)
        self.ops = ops
        self.N = schedule.N
        self.n = n
        self._since_sync = 0
        self._sync()

    def _sync(self):
        self.A_pow_n = matrix_power(self.ops, self.n)
        self.A_pow_n_minus_N = matrix_power(self.ops, self.n - self.N)
        self._since_sync = 0

    def step_down(self) -> "PowerCursor":
        if self.n <= 1:
            raise CursorUnderflow("cursor is already at n=1")
        self.n -= 1
        self._since_sync += 1
        if self._since_sync >= RESYNC_EVERY:
            self._sync()
        else:
            Ainv = self.ops.A_inv
            self.A_pow_n = Ainv @ self.A_pow_n
            self.A_pow_n_minus_N = Ainv @ self.A_pow_n_minus_N
        return self


def cursor_at(ops: OperatorSet, schedule: NoiseSchedule, n: int) -> PowerCursor:
    return PowerCursor(ops, schedule, n)


def cursor_step_down(c: PowerCursor) -> PowerCursor:
    return c.step_down()
