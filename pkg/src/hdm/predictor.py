"""Noise predictors e_hat(u_n, n).

``LinearPredictor`` is a desk-scale stand-in for a U-Net: one dense map
shared across channels plus a time ramp and bias, with exact gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, InvalidParams
from .heat_operator import GridShape

CHECKPOINT_MAGIC = b"HDMPR1"
_HEADER = struct.Struct("<6sqqq")


class Gradients(NamedTuple):
    Wu: np.ndarray
    wt: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class LinearPredictor:
    shape: GridShape
    channels: int
    Wu: np.ndarray
    wt: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        P = self.shape.size
        if self.Wu.shape != (P, P) or self.wt.shape != (P,) or self.b.shape != (P,):
            raise DimensionMismatch("predictor parameter shapes do not match the grid")

    @classmethod
    def zeros(cls, shape: GridShape, channels: int = 1) -> "LinearPredictor":
        P = shape.size
        return cls(shape, channels, np.zeros((P, P)), np.zeros(P), np.zeros(P))

    @classmethod
    def random(cls, shape: GridShape, channels: int = 1, rng=None, scale: float = 0.1) -> "LinearPredictor":
        rng = np.random.default_rng(rng)
        P = shape.size
        return cls(
            shape,
            channels,
            scale * rng.standard_normal((P, P)) / np.sqrt(P),
            scale * rng.standard_normal(P),
            scale * rng.standard_normal(P),
        )

    @property
    def n_params(self) -> int:
        return self.Wu.size + self.wt.size + self.b.size

    def _check(self, u_n):
        u_n = np.asarray(u_n, dtype=float)
        if u_n.ndim == 1:
            u_n = u_n[None, :]
        if u_n.shape[1] != self.shape.size:
            raise DimensionMismatch(f"input has {u_n.shape[1]} pixels, predictor expects {self.shape.size}")
        return u_n

    def predict(self, u_n, n: int, N: int) -> np.ndarray:
        u_n = self._check(u_n)
        return u_n @ self.Wu.T + (n / N) * self.wt + self.b

    def gradient(self, u_n, n: int, N: int, dloss_dehat) -> Gradients:
        """Chain rule through ``predict`` given dL/de_hat of shape (channels, I*J)."""
        u_n = self._check(u_n)
        g = np.asarray(dloss_dehat, dtype=float).reshape(u_n.shape)
        return Gradients(g.T @ u_n, (n / N) * g.sum(axis=0), g.sum(axis=0))

    def apply_update(self, grads: Gradients, eta: float) -> None:
        self.Wu -= eta * grads.Wu
        self.wt -= eta * grads.wt
        self.b -= eta * grads.b

    def copy(self) -> "LinearPredictor":
        return LinearPredictor(self.shape, self.channels, self.Wu.copy(), self.wt.copy(), self.b.copy())


class OraclePredictor:
    """Returns whatever true noise was last stored in ``noise``. Test use only."""

    def __init__(self, noise=None):
        self.noise = noise

    def predict(self, u_n, n: int, N: int) -> np.ndarray:
        if self.noise is None:
            raise InvalidParams("oracle predictor has no recorded noise")
        return np.array(self.noise, dtype=float).reshape(np.atleast_2d(u_n).shape)


def save_predictor(p: LinearPredictor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, p.shape.rows, p.shape.cols, p.channels))
        for arr in (p.Wu, p.wt, p.b):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_predictor(path, shape: GridShape | None = None, channels: int | None = None) -> LinearPredictor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, I, J, C = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    stored = GridShape(I, J)
    if shape is not None and shape != stored:
        raise DimensionMismatch(f"checkpoint is for a {I}x{J} grid, not {shape.rows}x{shape.cols}")
    if channels is not None and channels != C:
        raise DimensionMismatch(f"checkpoint has {C} channels, expected {channels}")
    P = stored.size
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != P * P + 2 * P:
        raise ValueError(f"{path}: wrong parameter count {data.size}")
    Wu = data[: P * P].reshape(P, P).copy()
    wt = data[P * P : P * P + P].copy()
    b = data[P * P + P :].copy()
    return LinearPredictor(stored, C, Wu, wt, b)
