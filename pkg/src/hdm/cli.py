"""Command-line entry point: ``hdm <command> [flags]``.

Exit codes: 0 ok, 1 usage / invalid parameters, 2 numeric failure, 3 I/O.
Settings come from flags, optionally layered over a ``key = value`` config
file (``--config``); flags win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checks, metrics, plotting
from .errors import HDMError, InvalidParams
from .forward import forward_jump, forward_step
from .heat_operator import (
    Boundary,
    GridShape,
    SchemeParams,
    build_operators,
    cache_path,
    cached_operators,
    random_operator,
    save_operators,
    select_K,
    spectral_radius,
    validate_against_greens,
)
from .imageio import field_to_image, image_to_field, read_image, write_pnm
from .posterior import step_matrices
from .predictor import LinearPredictor, load_predictor, save_predictor
from .sampler import denoise_from, sample
from .schedule import linear_schedule, write_schedule_csv
from .trainer import TrainConfig, bundled_blobs, train


EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "I": 8,
    "J": 8,
    "theta": 0.5,
    "K": 0.095,
    "gamma": None,
    "N": 50,
    "seed": 0,
    "boundary": "adiabatic",
    "ablation": "none",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    shape: GridShape
    params: SchemeParams
    N: int
    seed: int
    ablation: str
    extra: dict


def read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def resolve_config(args) -> RunConfig:
    """Merge defaults < config file < flags and validate everything once."""
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    merged = dict(DEFAULTS)
    merged.update(file_vals)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    flag_K, flag_gamma = getattr(args, "K", None), getattr(args, "gamma", None)
    if flag_K is not None and flag_gamma is not None:
        raise UsageError("--K and --gamma are mutually exclusive")
    if flag_K is not None:
        merged["gamma"] = None
    elif flag_gamma is not None or ("gamma" in file_vals and "K" not in file_vals):
        merged["K"] = None
    elif "gamma" in file_vals and "K" in file_vals:
        raise UsageError("config file sets both K and gamma")
    try:
        I, J, N, seed = (int(merged[k]) for k in ("I", "J", "N", "seed"))
        theta = float(merged["theta"])
        gamma = None if merged["gamma"] in (None, "") else float(merged["gamma"])
        K = select_K(gamma, 2) if gamma is not None else float(merged["K"])
        boundary = Boundary(str(merged["boundary"]).lower())
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidParams):
            raise
        raise UsageError(f"bad configuration value: {exc}") from exc
    ablation = str(merged["ablation"])
    if ablation not in ("none", "random_matrix"):
        raise UsageError(f"unknown ablation mode {ablation!r}")
    if N < 2:
        raise InvalidParams("N must be >= 2")
    extra = {k: v for k, v in file_vals.items() if k not in DEFAULTS}
    return RunConfig(GridShape(I, J), SchemeParams(theta, K, boundary, gamma), N, seed, ablation, extra)


def operators_for(cfg: RunConfig):
    if cfg.ablation == "random_matrix":
        return random_operator(cfg.shape, cfg.params, seed=cfg.seed)
    cache_dir = os.environ.get("HDM_CACHE_DIR")
    if cache_dir:
        return cached_operators(cache_dir, cfg.shape, cfg.params)
    return build_operators(cfg.shape, cfg.params)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_field(path, shape: GridShape) -> np.ndarray:
    img = read_image(path)
    if img.shape[1:] != (shape.rows, shape.cols):
        raise InvalidParams(f"{path} is {img.shape[1]}x{img.shape[2]}, grid is {shape.rows}x{shape.cols}")
    return image_to_field(img)


def _predictor(args, cfg, channels):
    if getattr(args, "checkpoint", None):
        return load_predictor(args.checkpoint, shape=cfg.shape, channels=channels)
    return LinearPredictor.zeros(cfg.shape, channels)


# -- commands ----------------------------------------------------------------


def cmd_build_op(args) -> int:
    cfg = resolve_config(args)
    if cfg.params.gamma is not None:
        print(f"K = {cfg.params.K:.6g} (from gamma = {cfg.params.gamma:g})")
    ops = operators_for(cfg)
    n = cfg.shape.size
    one = np.ones(n)
    print(f"grid {cfg.shape.rows}x{cfg.shape.cols}  theta={cfg.params.theta:g}  K={cfg.params.K:.6g}  "
          f"boundary={cfg.params.boundary.value}  kind={ops.kind}")
    if ops.is_identity:
        print("A = identity (DDPM mode)")
    print("S row 0: " + " ".join(f"{v:.6g}" for v in ops.S[0]))
    print("T row 0: " + " ".join(f"{v:.6g}" for v in ops.T[0]))
    print(f"max row-sum deviation S: {np.abs(ops.S.sum(1) - 1).max():.3e}  T: {np.abs(ops.T.sum(1) - 1).max():.3e}")
    print(f"max |A1 - 1|: {np.abs(ops.A @ one - 1).max():.3e}")
    print(f"spectral radius(A): {spectral_radius(ops.A):.12f}")
    print(f"condition estimate (1-norm) S: {ops.cond_S:.3e}  A: {ops.cond_A:.3e}")
    if ops.kind == "heat":
        if args.out:
            out = Path(args.out)
        else:
            out = cache_path(os.environ.get("HDM_CACHE_DIR", "."), cfg.shape, cfg.params)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_operators(ops, out)
        print(f"wrote {out}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = resolve_config(args)
    sch = linear_schedule(cfg.N)
    out = Path(args.out)
    write_schedule_csv(sch, out)
    print(f"wrote {out}")
    if args.plot:
        print(f"wrote {plotting.plot_schedule(sch, out.with_suffix('.png'))}")
    return EXIT_OK


def cmd_diffuse(args) -> int:
    cfg = resolve_config(args)
    ops = operators_for(cfg)
    sch = linear_schedule(cfg.N)
    if args.input:
        u0 = _load_field(args.input, cfg.shape)
    else:
        u0 = bundled_blobs()[0] if cfg.shape == GridShape(8, 8) else np.zeros((1, cfg.shape.size))
    rng = np.random.default_rng(cfg.seed)
    eps = np.zeros_like(u0) if args.zero_noise else rng.standard_normal(u0.shape)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, snaps = [], [(0, u0)]
    u = u0
    for n in range(1, sch.N + 1):
        if args.mode == "step":
            e = np.zeros_like(u0) if args.zero_noise else rng.standard_normal(u0.shape)
            u = forward_step(ops, sch, u, n, eps=e).u_n
        else:
            # one shared draw gives a coherent closed-form trajectory
            u = forward_jump(ops, sch, u0, n, eps=eps).u_n
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite field at n={n}; A^(n-N) overflows for this (K, N)")
        with np.errstate(over="ignore"):
            rows.append((n, float(u.mean()), float(u.var()), float(u.min()), float(u.max())))
        if n % args.stride == 0 or n == sch.N:
            snaps.append((n, u))
            write_pnm(outdir / f"u_{n:04d}.pgm" if u.shape[0] == 1 else outdir / f"u_{n:04d}.ppm",
                      field_to_image(u, cfg.shape.rows, cfg.shape.cols))
    stats = outdir / "diffuse_stats.csv"
    _write_csv(stats, ["n", "mean", "variance", "min", "max"], [(n, *map(repr, r)) for n, *r in rows])
    print(f"wrote {stats} and {len(snaps) - 1} snapshots")
    if args.plot:
        plotting.plot_diffusion_stats(rows, outdir / "diffuse_stats.png")
        plotting.plot_snapshots(snaps, cfg.shape.rows, cfg.shape.cols, outdir / "diffuse_snapshots.png")
        print(f"wrote figures to {outdir}")
    return EXIT_OK


def _dataset(args, cfg):
    if args.data in (None, "synthetic"):
        if cfg.shape != GridShape(8, 8):
            raise InvalidParams("the bundled synthetic set is 8x8; pass --I 8 --J 8 or --data DIR")
        return bundled_blobs()
    paths = sorted(p for p in Path(args.data).iterdir() if p.suffix.lower() in (".pgm", ".ppm", ".png"))
    if not paths:
        raise OSError(f"no .pgm/.ppm/.png images in {args.data}")
    return [_load_field(p, cfg.shape) for p in paths]


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ops = operators_for(cfg)
    sch = linear_schedule(cfg.N)
    data = _dataset(args, cfg)
    p = _predictor(args, cfg, data[0].shape[0])
    tc = TrainConfig(epochs=args.epochs, batch=args.batch, eta=args.eta, seed=cfg.seed, N=cfg.N,
                     loss_log_path=args.loss_log, window=args.window)
    result = train(data, tc, ops, sch, p)
    losses = np.array([r.loss for r in result.log])
    w = min(args.window, len(losses))
    print(f"{len(losses)} steps; first-{w} mean loss {losses[:w].mean():.6g}, last-{w} mean loss {losses[-w:].mean():.6g}")
    if args.loss_log:
        print(f"wrote {args.loss_log}")
        if args.plot:
            print(f"wrote {plotting.plot_loss(result.log, Path(args.loss_log).with_suffix('.png'))}")
    if args.save:
        save_predictor(result.predictor, args.save)
        print(f"wrote {args.save}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    ops = operators_for(cfg)
    sch = linear_schedule(cfg.N)
    p = _predictor(args, cfg, args.channels)
    trace = sample(ops, sch, p, rng=cfg.seed, snapshot_stride=args.stride, channels=args.channels,
                   noisy_final=args.noisy_final)
    write_pnm(args.out, field_to_image(trace.u0, cfg.shape.rows, cfg.shape.cols))
    print(f"wrote {args.out}")
    if args.plot:
        fig = Path(args.out).with_suffix(".png")
        plotting.plot_snapshots(trace.snapshots + [(0, trace.u0)], cfg.shape.rows, cfg.shape.cols, fig)
        print(f"wrote {fig}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    cfg = resolve_config(args)
    ops = operators_for(cfg)
    sch = linear_schedule(cfg.N)
    u0 = _load_field(args.input, cfg.shape)
    p = _predictor(args, cfg, u0.shape[0])
    rng = np.random.default_rng(cfg.seed)
    u_start = forward_jump(ops, sch, u0, args.n_start, rng=rng).u_n
    out = denoise_from(ops, sch, p, u_start, args.n_start, rng=rng, noisy_final=args.noisy_final)
    write_pnm(args.out, field_to_image(out, cfg.shape.rows, cfg.shape.cols))
    print(f"wrote {args.out}")
    return EXIT_OK


def _read_table(path) -> np.ndarray:
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.strip().split(",") if x.strip()]
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)


def cmd_fid(args) -> int:
    print(f"{metrics.fid(_read_table(args.x), _read_table(args.y)):.10g}")
    return EXIT_OK


def cmd_is(args) -> int:
    print(f"{metrics.inception_score(_read_table(args.p)):.10g}")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = resolve_config(args)
    if args.dump_step is not None:
        ops = operators_for(cfg)
        sch = linear_schedule(cfg.N)
        sm = step_matrices(ops, sch, args.dump_step)
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for name in ("Sigma", "C", "D"):
            np.savetxt(outdir / f"{name}_{args.dump_step}.csv", getattr(sm, name), delimiter=",", fmt="%.17g")
        print(f"wrote Sigma/C/D for n={args.dump_step} to {outdir}")
        return EXIT_OK
    results = checks.run_checks(fast=args.fast, ablation=cfg.ablation, seed=cfg.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  ({r.seconds:.2f}s)")
    if args.report:
        _write_csv(args.report, ["check", "passed", "detail", "seconds"],
                   [(r.name, int(r.passed), r.detail, f"{r.seconds:.3f}") for r in results])
        if args.plot:
            ops = checks.make_factory(cfg.ablation, cfg.seed)(GridShape(33, 33), 0.0625)
            rep = validate_against_greens(ops, steps=16)
            plotting.plot_greens(rep, Path(args.report).with_suffix(".png"))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _common(p):
    g = p.add_argument_group("model")
    g.add_argument("--config", help="key = value settings file (flags override it)")
    g.add_argument("--I", type=int, help="grid rows (default 8)")
    g.add_argument("--J", type=int, help="grid columns (default 8)")
    g.add_argument("--theta", type=float, help="scheme blend weight in [0, 1] (default 0.5)")
    g.add_argument("--K", type=float, help="diffusion number kappa*tau/Delta^2 (default 0.095)")
    g.add_argument("--gamma", type=float, help="derive K = gamma^2/4 instead of giving K")
    g.add_argument("--N", type=int, help="number of diffusion steps (default 50)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--boundary", choices=[b.value for b in Boundary], help="boundary condition")
    g.add_argument("--ablation", choices=["none", "random_matrix"],
                   help="replace A with a seeded random row-stochastic matrix")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdm", description="Heat diffusion model toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-op", help="build S, T, A; print diagnostics; write the operator cache")
    _common(p)
    p.add_argument("--out", help="cache file path (default: $HDM_CACHE_DIR or cwd)")
    p.set_defaults(func=cmd_build_op)

    p = sub.add_parser("schedule", help="dump the beta/alpha/alpha_bar schedule as CSV")
    _common(p)
    p.add_argument("--out", default="schedule.csv", help="output CSV")
    p.add_argument("--plot", action="store_true", help="also write a PNG figure")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("diffuse", help="run the forward process and record per-step statistics")
    _common(p)
    p.add_argument("--input", help="PGM/PPM/PNG image matching the grid (default: a bundled blob)")
    p.add_argument("--outdir", default="diffuse_out", help="output directory")
    p.add_argument("--stride", type=int, default=10, help="snapshot every STRIDE steps")
    p.add_argument("--mode", choices=["jump", "step"], default="jump",
                   help="closed-form trajectory with one shared draw, or iterated single steps")
    p.add_argument("--zero-noise", action="store_true", help="force all noise draws to zero")
    p.add_argument("--plot", action="store_true", help="also write PNG figures")
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("train", help="SGD training of the linear noise predictor")
    _common(p)
    p.add_argument("--data", default="synthetic", help="'synthetic' or a directory of images")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--eta", type=float, default=3e-11, help="SGD learning rate")
    p.add_argument("--window", type=int, default=100, help="running-mean window")
    p.add_argument("--loss-log", help="CSV loss log path")
    p.add_argument("--checkpoint", help="resume from an HDMPR1 checkpoint")
    p.add_argument("--save", help="write the trained HDMPR1 checkpoint here")
    p.add_argument("--plot", action="store_true", help="also write a PNG loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate an image by ancestral sampling")
    _common(p)
    p.add_argument("--checkpoint", help="HDMPR1 predictor checkpoint (default: zero predictor)")
    p.add_argument("--out", default="sample.pgm", help="output PGM/PPM")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--stride", type=int, default=0, help="snapshot stride (0 = none)")
    p.add_argument("--noisy-final", action="store_true", help="add unit-covariance noise on the last step")
    p.add_argument("--plot", action="store_true", help="also write a PNG snapshot strip")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("denoise", help="partially noise an image to step n, then run the reverse chain")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--n-start", type=int, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out", default="denoised.pgm")
    p.add_argument("--noisy-final", action="store_true")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("fid", help="pixel/feature FID between two CSV feature tables")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("is", help="Inception Score of a CSV class-probability table")
    p.add_argument("--p", required=True)
    p.set_defaults(func=cmd_is)

    p = sub.add_parser("check", help="run the property/oracle verification suite")
    _common(p)
    p.add_argument("--fast", action="store_true", help="skip Monte-Carlo and training checks")
    p.add_argument("--report", help="write results as CSV")
    p.add_argument("--plot", action="store_true", help="with --report, also plot the Green's-function probe")
    p.add_argument("--dump-step", type=int, help="dump Sigma_n, C_n, D_n as CSV instead of checking")
    p.add_argument("--outdir", default=".", help="directory for --dump-step output")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HDMError as exc:
        print(f"hdm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hdm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"hdm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
