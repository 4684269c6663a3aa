"""Ancestral sampling with exact per-step Cholesky noise."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch
from .forward import as_field
from .posterior import StepCache


class SampleTrace(NamedTuple):
    seed: object
    snapshots: list  # (n, field) pairs, n strictly decreasing
    u0: np.ndarray


def reverse_step(sm, u_n, e_hat, z=None) -> np.ndarray:
    """u_{n-1} = C_n u_n + D_n e_hat (+ L_n z)."""
    out = u_n @ sm.C.T + e_hat @ sm.D.T
    if z is not None:
        out = out + z @ sm.L.T
    return out


def _run(ops, schedule, p, u, n_start, rng, snapshot_stride, noisy_final, cache):
    if cache is None:
        cache = StepCache(ops, schedule)
    snapshots = []
    for n in range(n_start, 0, -1):
        if snapshot_stride and (n - n_start) % snapshot_stride == 0:
            snapshots.append((n, u.copy()))
        sm = cache(n)
        e_hat = p.predict(u, n, schedule.N)
        # the last step emits the mean unless the literal N(mu, I) decoder is requested
        z = rng.standard_normal(u.shape) if (n > 1 or noisy_final) else None
        u = reverse_step(sm, u, e_hat, z)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite values produced at step n={n}")
    return u, snapshots


def sample(ops, schedule, p, rng=None, snapshot_stride: int = 0, channels: int = 1,
           noisy_final: bool = False, cache: StepCache | None = None) -> SampleTrace:
    seed = rng
    rng = np.random.default_rng(rng)
    u = rng.standard_normal((channels, ops.shape.size))
    u0, snaps = _run(ops, schedule, p, u, schedule.N, rng, snapshot_stride, noisy_final, cache)
    return SampleTrace(seed, snaps, u0)


def denoise_from(ops, schedule, p, u_start, n_start: int, rng=None, noisy_final: bool = False,
                 cache: StepCache | None = None) -> np.ndarray:
    """Run the reverse chain from a partially noised field at step ``n_start``."""
    schedule.check_step(n_start)
    u = as_field(u_start, ops)
    if hasattr(p, "shape") and p.shape != ops.shape:
        raise DimensionMismatch("predictor grid does not match operators")
    rng = np.random.default_rng(rng)
    u0, _ = _run(ops, schedule, p, u, n_start, rng, 0, noisy_final, cache)
    return u0
