"""Headline acceptance criteria, one test each, at the stated tolerances and time budgets.

Every test appends a PASS/FAIL line to the summary printed at the end of the run.
"""

import functools
import math
import time

import numpy as np

from conftest import ACCEPTANCE, make_ops
from hdm.cli import main
from hdm.errors import InvalidParams
from hdm.forward import forward_jump, forward_kernel_params
from hdm.heat_operator import GridShape, select_K, spectral_radius, validate_against_greens
from hdm.metrics import fid, fid_from_moments, inception_score
from hdm.posterior import brute_force_posterior, coefficients, posterior_mean, posterior_mean_operators, posterior_sigma, step_matrices
from hdm.predictor import LinearPredictor
from hdm.sampler import reverse_step
from hdm.schedule import linear_schedule
from hdm.trainer import TrainConfig, bundled_blobs, train
from test_heat_operator import S_3x3, T_3x3

K_SWEEP = (0.01, 0.0625, 0.095, 0.124)


def criterion(name, budget):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                ACCEPTANCE.append((name, False, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
                raise
            dt = time.perf_counter() - t0
            in_time = dt < budget
            if not in_time:
                detail += f"; over the {budget:g}s budget"
            ACCEPTANCE.append((name, ok and in_time, dt, detail))
            assert ok, detail
            assert in_time, detail

        return wrapper

    return deco


def rel(x, y):
    return float(np.linalg.norm(x - y) / np.linalg.norm(y))


@criterion("operator_fidelity", 1)
def test_operator_fidelity():
    ops = make_ops(3, 3, 0.1)
    err = max(np.abs(ops.S - S_3x3).max(), np.abs(ops.T - T_3x3).max())
    return err <= 1e-15, f"max entry deviation {err:.1e} (tol 1e-15)"


@criterion("adiabatic_invariants", 5)
def test_adiabatic_invariants():
    st = a1 = 0.0
    for n in (3, 8, 17):
        for K in K_SWEEP:
            ops = make_ops(n, n, K)
            st = max(st, np.abs(ops.S.sum(1) - 1).max(), np.abs(ops.T.sum(1) - 1).max())
            a1 = max(a1, np.abs(ops.A @ np.ones(n * n) - 1).max())
    return st <= 1e-12 and a1 <= 1e-10, f"row sums {st:.1e} (tol 1e-12), A1-1 {a1:.1e} (tol 1e-10)"


@criterion("stability_invertibility", 10)
def test_stability_invertibility():
    rho, smin = 0.0, math.inf
    for K in K_SWEEP:
        A = make_ops(6, 6, K, theta=0.5).A
        rho = max(rho, spectral_radius(A))
        smin = min(smin, np.linalg.svd(A, compute_uv=False).min())
    return rho <= 1 + 1e-10 and smin > 0, f"max spectral radius {rho:.12f}, min singular value {smin:.3e}"


@criterion("ddpm_collapse", 5)
def test_ddpm_collapse():
    ops = make_ops(3, 3, 0.0)
    s = linear_schedule(10)
    rng = np.random.default_rng(0)
    E = np.eye(9)
    worst = {}
    for n in (2, 5, 10):
        a, ab, abp, b = s.alpha[n], s.alpha_bar[n], s.alpha_bar[n - 1], s.beta[n]
        bt = (1 - abp) * b / (1 - ab)
        u0, e, u, z = rng.standard_normal((4, 9))
        sm = step_matrices(ops, s, n)
        D_ref = -b / (np.sqrt(a) * np.sqrt(1 - ab)) * E
        errs = {
            "forward_jump": np.abs(forward_jump(ops, s, u0, n, eps=e).u_n[0] - (np.sqrt(ab) * u0 + np.sqrt(1 - ab) * e)),
            "Sigma": np.abs(sm.Sigma - bt * E),
            "C": np.abs(sm.C - E / np.sqrt(a)),
            "D": np.abs(sm.D - D_ref),
            "W": np.abs(sm.W - b**2 / (bt * a * (1 - ab)) * E),
            "sampler_step": np.abs(reverse_step(sm, u, e, z) - ((u - b / np.sqrt(1 - ab) * e) / np.sqrt(a) + np.sqrt(bt) * z)),
        }
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), float(v.max()))
    top = max(worst.values())
    return top <= 1e-10, f"max deviation {top:.1e} (tol 1e-10) over {', '.join(worst)}"


@criterion("posterior_oracle", 5)
def test_posterior_oracle():
    s = linear_schedule(5)
    worst = 0.0
    for K in (0.0625, 0.095):
        ops = make_ops(2, 2, K)
        for n in range(2, 6):
            brute = brute_force_posterior(ops, s, n)
            P, Q = posterior_mean_operators(ops, s, n)
            worst = max(worst, rel(posterior_sigma(ops, s, n), brute.Sigma), rel(P, brute.mean_op_u_n),
                        rel(Q, brute.mean_op_u0))
    return worst <= 1e-8, f"max relative deviation {worst:.1e} (tol 1e-8)"


@criterion("reparameterization", 5)
def test_reparameterization():
    ops = make_ops(3, 3, 0.095)
    s = linear_schedule(10)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        u0, e = rng.standard_normal((2, 9))
        u_n = forward_jump(ops, s, u0, n, eps=e).u_n
        C, D = coefficients(ops, s, n)
        worst = max(worst, rel(u_n @ C.T + e @ D.T, posterior_mean(ops, s, n, u_n, u0)))
    return worst <= 1e-8, f"max relative deviation {worst:.1e} over 50 draws (tol 1e-8)"


def _zmax(X, C):
    m = X.shape[0]
    emp = np.cov(X, rowvar=False)
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / m)
    return float(np.abs((emp - C) / se).max())


@criterion("mc_covariance", 120)
def test_mc_covariance():
    ops = make_ops(2, 2, 0.0625)
    s = linear_schedule(5)
    rng = np.random.default_rng(5)
    m = 200_000
    X = forward_jump(ops, s, np.tile(rng.standard_normal(4), (m, 1)), 3, rng=rng).u_n
    z1 = _zmax(X, forward_kernel_params(ops, s, 3).cov_jump)
    sm = step_matrices(ops, s, 3)
    z2 = _zmax(rng.standard_normal((m, 4)) @ sm.L.T, sm.Sigma)
    return max(z1, z2) <= 5, f"max |z| forward {z1:.2f}, L z {z2:.2f} (tol 5)"


@criterion("gradient_check", 10)
def test_gradient_check():
    from hdm.posterior import loss_weight

    ops = make_ops(2, 2, 0.095)
    s = linear_schedule(5)
    rng = np.random.default_rng(3)
    h, worst = 1e-5, 0.0
    for _ in range(20):
        p = LinearPredictor.random(GridShape(2, 2), channels=2, rng=rng, scale=1.0)
        n = int(rng.integers(1, 6))
        W = loss_weight(ops, s, n)
        u_n, e = rng.standard_normal((2, 2, 4))

        def loss():
            r = e - p.predict(u_n, n, 5)
            return float(np.einsum("ci,ij,cj->", r, W, r))

        g = p.gradient(u_n, n, 5, -2.0 * (e - p.predict(u_n, n, 5)) @ W)
        for name, analytic in zip(("Wu", "wt", "b"), g):
            param = getattr(p, name)
            for idx in np.ndindex(param.shape):
                keep = param[idx]
                param[idx] = keep + h
                lp = loss()
                param[idx] = keep - h
                lm = loss()
                param[idx] = keep
                fd = (lp - lm) / (2 * h)
                if abs(fd) > 1e-8:
                    worst = max(worst, abs(analytic[idx] - fd) / abs(fd))
    return worst <= 1e-4, f"max relative gap {worst:.1e} over 20 draws (tol 1e-4)"


@criterion("training_signal", 120)
def test_training_signal():
    shape = GridShape(8, 8)
    ops = make_ops(8, 8, 0.0625)
    s = linear_schedule(20)
    data = bundled_blobs()
    cfg = TrainConfig(epochs=10, batch=1, eta=3e-11, seed=0, N=20)
    logs = [[r.loss for r in train(data, cfg, ops, s, LinearPredictor.zeros(shape)).log] for _ in range(2)]
    loss = np.array(logs[0])
    first, last = loss[:100].mean(), loss[-100:].mean()
    same = logs[0] == logs[1]
    ok = len(loss) == 500 and last < first and same
    return ok, f"{len(loss)} steps, first-100 mean {first:.4g} > last-100 mean {last:.4g}, identical reruns {same}"


@criterion("greens_validation", 30)
def test_greens_validation():
    rep = validate_against_greens(make_ops(33, 33, 0.0625), steps=16, probe_offset=2)
    ok = rep.peak_step is not None and abs(rep.peak_step - rep.target_step) <= 2
    return ok, f"discrete peak at step {rep.peak_step}, analytic t0 = {rep.target_step:g} (tol 2 steps)"


@criterion("k_selection", 1)
def test_k_selection():
    exact = select_K(0.5, 2) == 0.0625
    rejected = 0
    bad = (1 / math.sqrt(2), math.sqrt(2) / 2, 0.75, 1.0)
    for g in bad:
        try:
            select_K(g, 2)
        except InvalidParams:
            rejected += 1
    return exact and rejected == len(bad), f"select_K(0.5, 2) exact: {exact}, rejected {rejected}/{len(bad)} gamma >= 1/sqrt2"


@criterion("metrics", 5)
def test_metrics():
    X = np.random.default_rng(0).standard_normal((500, 6))
    f0 = fid(X, X)
    f1 = fid_from_moments([0.5], [[4.0]], [-1.0], [[0.25]])
    f1_ref = 1.5**2 + (2.0 - 0.5) ** 2
    is1 = inception_score(np.tile([0.1, 0.6, 0.3], (8, 1)))
    isc = inception_score(np.eye(7))
    ok = abs(f0) <= 1e-8 and abs(f1 - f1_ref) <= 1e-10 and abs(is1 - 1) <= 1e-12 and abs(isc - 7) <= 1e-10
    return ok, f"fid(X,X)={f0:.1e}, 1-D fid {f1:.12g} vs {f1_ref:g}, IS identical {is1:.12g}, IS one-hot {isc:.12g}"


@criterion("ablation_mode", 60)
def test_ablation_mode(capsys):
    code = main(["check", "--ablation", "random_matrix"])
    out = capsys.readouterr().out
    oracle_ok = "PASS  posterior_oracle" in out
    greens_fails = "FAIL  greens_validation" in out
    return code != 0 and oracle_ok and greens_fails, (
        f"exit {code}; posterior oracle passes: {oracle_ok}; Green's validation fails: {greens_fails}"
    )
