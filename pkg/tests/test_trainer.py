import csv

import numpy as np
import pytest

from hdm.errors import DivergenceDetected, InvalidParams
from hdm.heat_operator import GridShape
from hdm.predictor import LinearPredictor, OraclePredictor
from hdm.schedule import linear_schedule
from hdm.trainer import TrainConfig, bundled_blobs, synthetic_blobs, train, write_loss_csv

from conftest import make_ops


@pytest.fixture(scope="module")
def setup8():
    return make_ops(8, 8, 0.0625), linear_schedule(20), bundled_blobs()


def test_blobs_are_in_range():
    data = synthetic_blobs(10, GridShape(8, 8), seed=1)
    assert len(data) == 10
    for u in data:
        assert u.shape == (1, 64)
        assert u.min() >= -1 and u.max() <= 1
    assert len(bundled_blobs()) == 50


def test_oracle_loss_is_zero(setup8):
    ops, s, data = setup8
    res = train(data[:10], TrainConfig(epochs=2, N=20), ops, s, OraclePredictor(None))
    assert all(r.loss == 0.0 for r in res.log)


def test_loss_decreases(setup8):
    ops, s, data = setup8
    cfg = TrainConfig(epochs=10, batch=1, eta=3e-11, seed=0, N=20)
    log = train(data, cfg, ops, s, LinearPredictor.zeros(GridShape(8, 8))).log
    loss = np.array([r.loss for r in log])
    assert len(loss) == 500
    assert loss[-100:].mean() < loss[:100].mean()


def test_same_seed_same_log(setup8):
    ops, s, data = setup8
    cfg = TrainConfig(epochs=2, eta=3e-11, seed=9, N=20)
    a = train(data, cfg, ops, s, LinearPredictor.zeros(GridShape(8, 8)))
    b = train(data, cfg, ops, s, LinearPredictor.zeros(GridShape(8, 8)))
    assert [r.loss for r in a.log] == [r.loss for r in b.log]
    assert np.array_equal(a.predictor.Wu, b.predictor.Wu)


def test_divergence_is_detected(setup8):
    ops, s, data = setup8
    cfg = TrainConfig(epochs=10, eta=1e-3, seed=0, N=20)
    with pytest.raises(DivergenceDetected):
        train(data, cfg, ops, s, LinearPredictor.zeros(GridShape(8, 8)))


def test_batches_share_step(setup8):
    ops, s, data = setup8
    res = train(data[:12], TrainConfig(epochs=1, batch=4, eta=3e-11, N=20), ops, s,
                LinearPredictor.zeros(GridShape(8, 8)))
    assert len(res.log) == 3


def test_running_mean_is_trailing(setup8):
    ops, s, data = setup8
    log = train(data[:20], TrainConfig(epochs=1, eta=3e-11, N=20, window=5), ops, s,
                LinearPredictor.zeros(GridShape(8, 8))).log
    loss = [r.loss for r in log]
    for k, r in enumerate(log):
        assert r.running_mean == pytest.approx(np.mean(loss[max(0, k - 4): k + 1]), rel=1e-12)


def test_config_validation(setup8):
    ops, s, data = setup8
    with pytest.raises(InvalidParams):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidParams):
        train(data, TrainConfig(N=10), ops, s, LinearPredictor.zeros(GridShape(8, 8)))
    with pytest.raises(InvalidParams):
        train([], TrainConfig(N=20), ops, s, LinearPredictor.zeros(GridShape(8, 8)))


def test_loss_csv(tmp_path, setup8):
    ops, s, data = setup8
    path = tmp_path / "loss.csv"
    train(data[:5], TrainConfig(epochs=1, N=20, eta=3e-11, loss_log_path=path), ops, s,
          LinearPredictor.zeros(GridShape(8, 8)))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "n", "loss", "running_mean"]
    assert len(rows) == 6
    float(rows[1][2])

    write_loss_csv([], tmp_path / "empty.csv")
    assert open(tmp_path / "empty.csv").read().strip() == "step,n,loss,running_mean"
