"""Self-verification suite behind ``hdm check``.

Each check compares a library path with an independent route (explicit
matrices, closed forms, Schur complements, finite differences, Monte Carlo)
and returns a ``CheckResult``. With ``ablation="random_matrix"`` every
propagator-generic check is run on a seeded random row-stochastic matrix
instead of the heat propagator.
"""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from . import forward, posterior, predictor
from .errors import HDMError
from .heat_operator import (
    GridShape,
    SchemeParams,
    build_operators,
    random_operator,
    spectral_radius,
    validate_against_greens,
)
from .sampler import reverse_step
from .schedule import linear_schedule
from .trainer import TrainConfig, bundled_blobs, train

K_SWEEP = (0.01, 0.0625, 0.095, 0.124)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def rel_err(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    scale = np.linalg.norm(y)
    return float(np.linalg.norm(x - y) / (scale if scale > 0 else 1.0))


def reference_matrices_3x3(theta: float, K: float):
    """The 9x9 adiabatic S and T for a 3x3 grid, typed in entry by entry."""
    d, o, o2 = 1 + 4 * (1 - theta) * K, (theta - 1) * K, 2 * (theta - 1) * K
    S = np.array([
        [d, o2, 0, o2, 0, 0, 0, 0, 0],
        [o, d, o, 0, o2, 0, 0, 0, 0],
        [0, o2, d, 0, 0, o2, 0, 0, 0],
        [o, 0, 0, d, o2, 0, o, 0, 0],
        [0, o, 0, o, d, o, 0, o, 0],
        [0, 0, o, 0, o2, d, 0, 0, o],
        [0, 0, 0, o2, 0, 0, d, o2, 0],
        [0, 0, 0, 0, o2, 0, o, d, o],
        [0, 0, 0, 0, 0, o2, 0, o2, d],
    ])
    t, q, q2 = 1 - 4 * theta * K, theta * K, 2 * theta * K
    T = np.array([
        [t, q2, 0, q2, 0, 0, 0, 0, 0],
        [q, t, q, 0, q2, 0, 0, 0, 0],
        [0, q2, t, 0, 0, q2, 0, 0, 0],
        [q, 0, 0, t, q2, 0, q, 0, 0],
        [0, q, 0, q, t, q, 0, q, 0],
        [0, 0, q, 0, q2, t, 0, 0, q],
        [0, 0, 0, q2, 0, 0, t, q2, 0],
        [0, 0, 0, 0, q2, 0, q, t, q],
        [0, 0, 0, 0, 0, q2, 0, q2, t],
    ])
    return S, T


def make_factory(ablation: str = "none", seed: int = 0) -> Callable:
    if ablation == "none":
        return lambda shape, K, theta=0.5: build_operators(shape, SchemeParams(theta, K))
    if ablation == "random_matrix":
        return lambda shape, K, theta=0.5: random_operator(shape, SchemeParams(theta, K), seed=seed)
    raise ValueError(f"unknown ablation mode {ablation!r}")


# -- individual checks ------------------------------------------------------


def check_reference_matrices(factory=None) -> tuple[bool, str]:
    ops = build_operators(GridShape(3, 3), SchemeParams(0.5, 0.1))
    S, T = reference_matrices_3x3(0.5, 0.1)
    err = max(np.abs(ops.S - S).max(), np.abs(ops.T - T).max())
    return err <= 1e-15, f"max entry deviation {err:.2e}"


def check_row_sums(factory) -> tuple[bool, str]:
    worst_st, worst_a = 0.0, 0.0
    for n in (3, 8, 17):
        for K in K_SWEEP:
            ops = factory(GridShape(n, n), K)
            worst_st = max(worst_st, np.abs(ops.S.sum(axis=1) - 1).max(), np.abs(ops.T.sum(axis=1) - 1).max())
            worst_a = max(worst_a, np.abs(ops.A @ np.ones(n * n) - 1).max())
    return worst_st <= 1e-12 and worst_a <= 1e-10, f"row sums dev {worst_st:.2e}, |A1-1| {worst_a:.2e}"


def check_stability(factory) -> tuple[bool, str]:
    rho, smin = 0.0, np.inf
    for K in K_SWEEP:
        ops = factory(GridShape(6, 6), K)
        rho = max(rho, spectral_radius(ops.A))
        smin = min(smin, np.linalg.svd(ops.A, compute_uv=False).min())
    return rho <= 1 + 1e-10 and smin > 0, f"max spectral radius {rho:.12f}, min singular value {smin:.3e}"


def check_greens(factory) -> tuple[bool, str]:
    ops = factory(GridShape(33, 33), 0.0625)
    rep = validate_against_greens(ops, steps=16, probe_offset=2)
    ok = rep.peak_step is not None and abs(rep.peak_step - rep.target_step) <= 2
    return ok, f"peak step {rep.peak_step} vs analytic {rep.target_step:g}, L2 error {rep.l2_error:.3e}"


def ddpm_collapse_errors(N: int = 10, steps=(2, 5, 10), seed: int = 0) -> dict:
    """Largest deviation from the classical DDPM closed forms at K = 0, per quantity."""
    ops = build_operators(GridShape(3, 3), SchemeParams(0.5, 0.0))
    sch = linear_schedule(N)
    rng = np.random.default_rng(seed)
    I = np.eye(9)
    errs = dict.fromkeys(["forward_jump", "Sigma", "C", "D", "W", "sampler_step"], 0.0)
    for n in steps:
        a, ab, b = sch.alpha[n], sch.alpha_bar[n], sch.beta[n]
        bt = (1 - sch.alpha_bar[n - 1]) * b / (1 - ab)
        u0, e = rng.standard_normal((2, 9))
        fj = forward.forward_jump(ops, sch, u0, n, eps=e).u_n
        errs["forward_jump"] = max(errs["forward_jump"], np.abs(fj - (np.sqrt(ab) * u0 + np.sqrt(1 - ab) * e)).max())
        sm = posterior.step_matrices(ops, sch, n)
        errs["Sigma"] = max(errs["Sigma"], np.abs(sm.Sigma - bt * I).max())
        errs["C"] = max(errs["C"], np.abs(sm.C - I / np.sqrt(a)).max())
        errs["D"] = max(errs["D"], np.abs(sm.D + b / (np.sqrt(a) * np.sqrt(1 - ab)) * I).max())
        errs["W"] = max(errs["W"], np.abs(sm.W - b**2 / (bt * a * (1 - ab)) * I).max())
        u, eh, z = rng.standard_normal((3, 1, 9))
        got = reverse_step(sm, u, eh, z)
        want = (u - b / np.sqrt(1 - ab) * eh) / np.sqrt(a) + np.sqrt(bt) * z
        errs["sampler_step"] = max(errs["sampler_step"], np.abs(got - want).max())
    return errs


def check_ddpm_collapse(factory=None) -> tuple[bool, str]:
    errs = ddpm_collapse_errors()
    worst = max(errs, key=errs.get)
    return all(v <= 1e-10 for v in errs.values()), f"worst {worst} deviation {errs[worst]:.2e}"


def posterior_oracle_errors(factory, Ks=(0.0625, 0.095), N: int = 5) -> float:
    sch = linear_schedule(N)
    worst = 0.0
    for K in Ks:
        ops = factory(GridShape(2, 2), K)
        for n in range(2, N + 1):
            bf = posterior.brute_force_posterior(ops, sch, n)
            P, Q = posterior.posterior_mean_operators(ops, sch, n)
            S = posterior.posterior_sigma(ops, sch, n)
            worst = max(worst, rel_err(S, bf.Sigma), rel_err(P, bf.mean_op_u_n), rel_err(Q, bf.mean_op_u0))
    return worst


def check_posterior_oracle(factory) -> tuple[bool, str]:
    err = posterior_oracle_errors(factory)
    return err <= 1e-8, f"max relative deviation {err:.2e}"


def reparameterization_errors(factory, draws: int = 50, N: int = 10, K: float = 0.095, seed: int = 1) -> float:
    ops = factory(GridShape(3, 3), K)
    sch = linear_schedule(N)
    rng = np.random.default_rng(seed)
    Ainv, AinvN = ops.A_inv, np.linalg.matrix_power(ops.A_inv, N)
    worst = 0.0
    for _ in range(draws):
        n = int(rng.integers(2, N + 1))
        u_n, e = rng.standard_normal((2, 1, 9))
        ab = sch.alpha_bar[n]
        u0 = (u_n @ np.linalg.matrix_power(Ainv, n).T - np.sqrt(1 - ab) * e @ AinvN.T) / np.sqrt(ab)
        C, D = posterior.coefficients(ops, sch, n)
        worst = max(worst, rel_err(u_n @ C.T + e @ D.T, posterior.posterior_mean(ops, sch, n, u_n, u0)))
    return worst


def check_reparameterization(factory) -> tuple[bool, str]:
    err = reparameterization_errors(factory)
    return err <= 1e-8, f"max relative deviation {err:.2e}"


def gradient_check_errors(draws: int = 20, seed: int = 3, h: float = 1e-5) -> float:
    """Worst relative gap between analytic and central-difference gradients."""
    shape = GridShape(2, 2)
    ops = build_operators(shape, SchemeParams(0.5, 0.095))
    sch = linear_schedule(5)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        p = predictor.LinearPredictor.random(shape, channels=2, rng=rng, scale=1.0)
        n = int(rng.integers(1, 6))
        W = posterior.loss_weight(ops, sch, n)
        u_n, e = rng.standard_normal((2, 2, 4))

        def loss(q):
            r = e - q.predict(u_n, n, sch.N)
            return float(np.einsum("ci,ij,cj->", r, W, r))

        r = e - p.predict(u_n, n, sch.N)
        g = p.gradient(u_n, n, sch.N, -2.0 * r @ W)
        for name, analytic in zip(("Wu", "wt", "b"), g):
            param = getattr(p, name)
            for idx in np.ndindex(param.shape):
                keep = param[idx]
                param[idx] = keep + h
                lp = loss(p)
                param[idx] = keep - h
                lm = loss(p)
                param[idx] = keep
                fd = (lp - lm) / (2 * h)
                if abs(fd) > 1e-8:
                    worst = max(worst, abs(analytic[idx] - fd) / abs(fd))
    return worst


def check_gradients(factory=None) -> tuple[bool, str]:
    err = gradient_check_errors()
    return err <= 1e-4, f"max relative gap {err:.2e}"


def mc_covariance_zscores(factory, samples: int = 200_000, seed: int = 5, N: int = 5, n: int = 3, K: float = 0.0625):
    """Max |z| of empirical-vs-exact covariance entries for forward_jump and L z."""
    ops = factory(GridShape(2, 2), K)
    sch = linear_schedule(N)
    rng = np.random.default_rng(seed)

    def zmax(X, Sigma):
        m = X.shape[0]
        emp = np.cov(X, rowvar=False, ddof=1)
        se = np.sqrt((np.outer(np.diag(Sigma), np.diag(Sigma)) + Sigma**2) / m)
        return float(np.abs((emp - Sigma) / se).max())

    u0 = rng.standard_normal((1, 4))
    X = forward.forward_jump(ops, sch, np.repeat(u0, samples, axis=0), n, rng=rng).u_n
    z_fwd = zmax(X, forward.forward_kernel_params(ops, sch, n).cov_jump)
    sm = posterior.step_matrices(ops, sch, n)
    Z = rng.standard_normal((samples, 4)) @ sm.L.T
    z_chol = zmax(Z, sm.Sigma)
    return z_fwd, z_chol


def check_mc_covariance(factory) -> tuple[bool, str]:
    z_fwd, z_chol = mc_covariance_zscores(factory)
    return max(z_fwd, z_chol) <= 5, f"max |z| forward {z_fwd:.2f}, cholesky {z_chol:.2f}"


def training_signal(steps_per_epoch_data=None, eta: float = 3e-11, seed: int = 0, epochs: int = 10):
    data = steps_per_epoch_data or bundled_blobs()
    shape = GridShape(8, 8)
    ops = build_operators(shape, SchemeParams(0.5, 0.0625))
    sch = linear_schedule(20)
    cfg = TrainConfig(epochs=epochs, batch=1, eta=eta, seed=seed, N=20)
    return train(data, cfg, ops, sch, predictor.LinearPredictor.zeros(shape))


def check_training(factory=None) -> tuple[bool, str]:
    log = training_signal().log
    loss = np.array([r.loss for r in log])
    first, last = loss[:100].mean(), loss[-100:].mean()
    return last < first, f"first-100 mean {first:.4g}, last-100 mean {last:.4g} over {len(loss)} steps"


# name, function, generic over the propagator, Monte-Carlo / long-running
CHECKS = [
    ("operator_fidelity", check_reference_matrices, False, False),
    ("adiabatic_invariants", check_row_sums, True, False),
    ("stability_invertibility", check_stability, True, False),
    ("greens_validation", check_greens, True, False),
    ("ddpm_collapse", check_ddpm_collapse, False, False),
    ("posterior_oracle", check_posterior_oracle, True, False),
    ("reparameterization", check_reparameterization, True, False),
    ("gradient_check", check_gradients, False, False),
    ("mc_covariance", check_mc_covariance, True, True),
    ("training_signal", check_training, False, True),
]


def run_checks(fast: bool = False, ablation: str = "none", seed: int = 0, only=None) -> list[CheckResult]:
    factory = make_factory(ablation, seed)
    results = []
    for name, fn, generic, slow in CHECKS:
        if only is not None and name not in only:
            continue
        if fast and slow:
            continue
        if ablation != "none" and not generic:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn(factory)
        except HDMError as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
