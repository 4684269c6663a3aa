"""SGD training loop on the weighted noise-prediction objective."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, DivergenceDetected, InvalidParams
from .forward import as_field, forward_jump
from .heat_operator import GridShape, OperatorSet
from .posterior import StepCache
from .predictor import LinearPredictor, OraclePredictor
from .schedule import NoiseSchedule

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch: int = 1
    eta: float = 1e-3
    seed: int = 0
    N: int = 20
    loss_log_path: str | None = None
    window: int = 100
    cache_size: int = 8

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise InvalidParams("epochs and batch must be >= 1")
        if not self.eta > 0:
            raise InvalidParams("eta must be > 0")
        if self.window < 1:
            raise InvalidParams("window must be >= 1")


class LossRecord(NamedTuple):
    epoch: int
    step: int
    n: int
    loss: float
    running_mean: float


class TrainResult(NamedTuple):
    predictor: object
    log: list


def loss_term(ops, schedule, n, e_n, e_hat, W: np.ndarray | None = None) -> float:
    """r^T W_n r summed over channels, r = e_n - e_hat."""
    if W is None:
        from .posterior import loss_weight

        W = loss_weight(ops, schedule, n)
    r = np.atleast_2d(np.asarray(e_n, dtype=float) - np.asarray(e_hat, dtype=float))
    if r.shape[1] != W.shape[0]:
        raise DimensionMismatch(f"residual has {r.shape[1]} pixels, weight is {W.shape[0]}x{W.shape[0]}")
    return float(np.einsum("ci,ij,cj->", r, W, r))


def synthetic_blobs(count: int, shape: GridShape, seed: int = 0, max_blobs: int = 3) -> list:
    """Gaussian blobs on a dark background, already in model space [-1, 1]."""
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(shape.rows), np.arange(shape.cols), indexing="ij")
    out = []
    for _ in range(count):
        img = np.zeros((shape.rows, shape.cols))
        for _ in range(rng.integers(1, max_blobs + 1)):
            ci, cj = rng.uniform(0, shape.rows - 1), rng.uniform(0, shape.cols - 1)
            w = rng.uniform(0.8, 0.25 * min(shape.rows, shape.cols))
            img += rng.uniform(0.5, 1.0) * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * w * w))
        img = np.clip(img, 0.0, 1.0)
        out.append((2.0 * img - 1.0).reshape(1, -1))
    return out


def bundled_blobs() -> list:
    """The fixed 8x8 single-channel training set used by the CLI and the acceptance run."""
    return synthetic_blobs(50, GridShape(8, 8), seed=2024)


def write_loss_csv(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "n", "loss", "running_mean"])
        for rec in log:
            w.writerow([rec.step, rec.n, repr(float(rec.loss)), repr(float(rec.running_mean))])


def train(dataset, cfg: TrainConfig, ops: OperatorSet, schedule: NoiseSchedule, p) -> TrainResult:
    """Algorithm: draw u0, n ~ U{1..N}, e_n ~ N(0, I); regress e_n from u_n.

    One SGD step per minibatch; all samples of a minibatch share n. The
    predictor is updated in place and also returned.
    """
    if not dataset:
        raise InvalidParams("dataset is empty")
    if cfg.N != schedule.N:
        raise InvalidParams(f"config N={cfg.N} disagrees with schedule N={schedule.N}")
    data = [as_field(u, ops) for u in dataset]
    if len({u.shape for u in data}) != 1:
        raise DimensionMismatch("all training fields must share shape and channel count")

    rng = np.random.default_rng(cfg.seed)
    cache = StepCache(ops, schedule, maxsize=cfg.cache_size)
    trainable = isinstance(p, LinearPredictor)
    recent: deque = deque(maxlen=cfg.window)
    log: list[LossRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            n = int(rng.integers(1, schedule.N + 1))
            W = cache(n).W
            total = 0.0
            grads = None
            for k in idx:
                e = rng.standard_normal(data[k].shape)
                u_n = forward_jump(ops, schedule, data[k], n, eps=e).u_n
                if isinstance(p, OraclePredictor):
                    p.noise = e
                e_hat = p.predict(u_n, n, schedule.N)
                r = e - e_hat
                total += loss_term(ops, schedule, n, e, e_hat, W=W)
                if trainable:
                    g = p.gradient(u_n, n, schedule.N, -2.0 * r @ W)
                    grads = g if grads is None else type(g)(*(a + b for a, b in zip(grads, g)))
            loss = total / len(idx)
            if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                raise DivergenceDetected(f"loss {loss:.3e} at step {step} (n={n}); reduce eta")
            if trainable:
                p.apply_update(type(grads)(*(g / len(idx) for g in grads)), cfg.eta)
            recent.append(loss)
            step += 1
            log.append(LossRecord(epoch, step, n, loss, float(np.mean(recent))))

    if cfg.loss_log_path:
        write_loss_csv(log, cfg.loss_log_path)
    return TrainResult(p, log)
