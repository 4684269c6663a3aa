"""Theta-scheme heat operators on an image grid.

Pixels are vectorized row-major (``p = i * J + j``). ``S u_{n+1} = T u_n``
is the discrete heat step and ``A = S^{-1} T`` propagates one step.
"""

from __future__ import annotations

import enum
import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DimensionMismatch, InvalidParams, SingularOperator

K_MAX = 0.125
COND_LIMIT = 1e12
CACHE_MAGIC = b"HDMOP1"


class Boundary(enum.Enum):
    ADIABATIC = "adiabatic"
    FIXED_ZERO = "fixed_zero"


_BOUNDARY_CODES = {Boundary.ADIABATIC: 0, Boundary.FIXED_ZERO: 1}


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise InvalidParams(f"grid dimensions must be integers, got {self.rows}x{self.cols}")
        if self.rows < 2 or self.cols < 2:
            raise InvalidParams(f"grid must be at least 2x2, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def index(self, i: int, j: int) -> int:
        return i * self.cols + j


@dataclass(frozen=True)
class SchemeParams:
    theta: float = 0.5
    K: float = 0.095
    boundary: Boundary = Boundary.ADIABATIC
    gamma: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidParams(f"theta must lie in [0, 1], got {self.theta}")
        if not math.isfinite(self.K) or self.K < 0.0:
            raise InvalidParams(f"K must be finite and >= 0, got {self.K}")
        if self.boundary is Boundary.ADIABATIC and self.K >= K_MAX:
            raise InvalidParams(f"K must be below {K_MAX} for adiabatic boundaries, got {self.K}")


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Dense S, T, A with LU factors of S and A.

    ``kind`` is ``"heat"`` for the stencil operators and ``"random_matrix"``
    for the ablation propagator (where S is the identity and T = A).
    """

    shape: GridShape
    params: SchemeParams
    S: np.ndarray
    T: np.ndarray
    A: np.ndarray
    luS: tuple = field(repr=False)
    luA: tuple = field(repr=False)
    cond_S: float = float("nan")
    cond_A: float = float("nan")
    kind: str = "heat"

    @functools.cached_property
    def A_inv(self) -> np.ndarray:
        inv = linalg.lu_solve(self.luA, np.eye(self.shape.size))
        inv.setflags(write=False)
        return inv

    @property
    def is_identity(self) -> bool:
        return self.kind == "heat" and self.params.K == 0.0


def _stencil(shape: GridShape, boundary: Boundary):
    """Return (row, col, weight) arrays for the neighbour part of the stencil.

    Each node contributes four neighbour entries of unit weight; reflected
    ghost nodes land on the mirrored interior node so their weights add up.
    """
    I, J = shape.rows, shape.cols
    ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    rows, cols = [], []
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        if boundary is Boundary.ADIABATIC:
            # ghost relation u[-1] = u[1], u[I] = u[I-2]
            ni = np.where(ni < 0, 1, np.where(ni > I - 1, I - 2, ni))
            nj = np.where(nj < 0, 1, np.where(nj > J - 1, J - 2, nj))
            keep = np.ones(ii.size, dtype=bool)
        else:
            keep = (ni >= 0) & (ni < I) & (nj >= 0) & (nj < J)
        rows.append((ii * J + jj)[keep])
        cols.append((ni * J + nj)[keep])
    return np.concatenate(rows), np.concatenate(cols)


def _rcond(lu_piv, anorm: float) -> float:
    rcond, info = lapack.dgecon(lu_piv[0], anorm, norm="1")
    if info != 0 or rcond == 0.0:
        return math.inf
    return 1.0 / rcond


def _factor(M: np.ndarray, name: str):
    with np.errstate(all="ignore"):
        try:
            lu = linalg.lu_factor(M, check_finite=True)
        except (linalg.LinAlgError, ValueError) as exc:
            raise SingularOperator(f"{name} could not be factorized: {exc}") from exc
    cond = _rcond(lu, float(np.abs(M).sum(axis=0).max()))
    if not cond <= COND_LIMIT:
        raise SingularOperator(f"{name} is numerically singular (1-norm condition estimate {cond:.3e})")
    return lu, cond


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_operators(shape: GridShape, params: SchemeParams) -> OperatorSet:
    n = shape.size
    theta, K = params.theta, params.K
    rows, cols = _stencil(shape, params.boundary)
    S = np.zeros((n, n))
    T = np.zeros((n, n))
    diag = np.arange(n)
    S[diag, diag] = 1.0 + 4.0 * (1.0 - theta) * K
    T[diag, diag] = 1.0 - 4.0 * theta * K
    np.add.at(S, (rows, cols), (theta - 1.0) * K)
    np.add.at(T, (rows, cols), theta * K)
    luS, cond_S = _factor(S, "S")
    A = linalg.lu_solve(luS, T)
    luA, cond_A = _factor(A, "A")
    _freeze(S, T, A)
    return OperatorSet(shape, params, S, T, A, luS, luA, cond_S, cond_A)


def random_operator(shape: GridShape, params: SchemeParams, seed: int = 0) -> OperatorSet:
    """Ablation propagator: seeded nonnegative row-stochastic matrix in place of A."""
    n = shape.size
    rng = np.random.default_rng(seed)
    A = rng.random((n, n))
    A /= A.sum(axis=1, keepdims=True)
    S = np.eye(n)
    luS, cond_S = _factor(S, "S")
    luA, cond_A = _factor(A, "A")
    T = A.copy()
    _freeze(S, T, A)
    return OperatorSet(shape, params, S, T, A, luS, luA, cond_S, cond_A, kind="random_matrix")


def _check_vector(ops: OperatorSet, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != ops.shape.size:
        raise DimensionMismatch(f"expected trailing length {ops.shape.size}, got {u.shape}")
    return u


def apply_propagator(ops: OperatorSet, u: np.ndarray) -> np.ndarray:
    """A @ u. ``u`` may be a vector or a (channels, I*J) stack."""
    u = _check_vector(ops, u)
    return u @ ops.A.T


def apply_inverse_propagator(ops: OperatorSet, u: np.ndarray) -> np.ndarray:
    u = _check_vector(ops, u)
    return linalg.lu_solve(ops.luA, u.T).T


def spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max())


def select_K(gamma: float, d: int = 2) -> float:
    """K = gamma^2 / (2d), the step coefficient that puts the heat-kernel
    peak ``gamma`` grid points away after one step."""
    if d < 1:
        raise InvalidParams(f"dimension must be positive, got {d}")
    limit = math.sqrt(d) / 2.0  # keeps K below K_MAX
    # 1/sqrt(2) and sqrt(2)/2 differ in the last bit, so the bound is matched with a tolerance
    if not 0.0 < gamma < limit or math.isclose(gamma, limit, rel_tol=1e-12):
        raise InvalidParams(f"gamma must satisfy 0 < gamma < {limit:.6g} for d={d}, got {gamma}")
    return gamma * gamma / (2.0 * d)


def greens_function(kappa: float, d: int, x_norm, t):
    """Heat kernel ``(4 pi kappa t)^(-d/2) exp(-|x|^2 / (4 kappa t))``; zero for t <= 0."""
    x_norm = np.asarray(x_norm, dtype=float)
    t = np.asarray(t, dtype=float)
    safe_t = np.where(t > 0, t, 1.0)
    val = (4.0 * np.pi * kappa * safe_t) ** (-d / 2.0) * np.exp(-(x_norm**2) / (4.0 * kappa * safe_t))
    out = np.where(t > 0, val, 0.0)
    return float(out) if out.ndim == 0 else out


def peak_time(kappa: float, d: int, x_norm: float) -> float:
    return x_norm**2 / (2.0 * d * kappa)


class GreensReport(NamedTuple):
    l2_error: float
    peak_step: int | None
    target_step: float
    probe_values: np.ndarray


def validate_against_greens(ops: OperatorSet, steps: int, probe_offset: int = 2) -> GreensReport:
    """Propagate a centred unit impulse and compare with the analytic kernel.

    Grid units are used throughout (spacing 1, ``kappa * tau = K``), so after
    ``s`` steps the reference is ``G(x, t=s)`` with ``kappa = K``.
    """
    if steps < 1:
        raise InvalidParams("steps must be >= 1")
    K = ops.params.K
    gamma = ops.params.gamma if ops.params.gamma is not None else math.sqrt(4.0 * K)
    I, J = ops.shape.rows, ops.shape.cols
    if gamma * steps >= min(I, J) / 4.0:
        raise InvalidParams(
            f"boundary influence: gamma*steps = {gamma * steps:.3g} must stay below min(I,J)/4 = {min(I, J) / 4}"
        )
    ci, cj = I // 2, J // 2
    if cj + probe_offset >= J:
        raise InvalidParams("probe falls outside the grid")
    u = np.zeros(ops.shape.size)
    u[ops.shape.index(ci, cj)] = 1.0
    probe = ops.shape.index(ci, cj + probe_offset)
    values = np.empty(steps)
    for s in range(steps):
        u = ops.A @ u
        values[s] = u[probe]

    target = peak_time(K, 2, probe_offset) if K > 0 else math.inf
    if K > 0:
        ii, jj = np.meshgrid(np.arange(I) - ci, np.arange(J) - cj, indexing="ij")
        g = greens_function(K, 2, np.hypot(ii, jj).ravel(), float(steps))
        l2 = float(np.linalg.norm(u - g) / np.linalg.norm(g))
    else:
        l2 = math.nan
    peak = int(np.argmax(values)) + 1 if values.max() > 0.0 else None
    return GreensReport(l2, peak, target, values)


# -- operator cache --------------------------------------------------------

_HEADER = struct.Struct("<6sqqddq")


def save_operators(ops: OperatorSet, path) -> None:
    if ops.kind != "heat":
        raise InvalidParams("only heat operators can be cached")
    p = ops.params
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, ops.shape.rows, ops.shape.cols, p.theta, p.K, _BOUNDARY_CODES[p.boundary]))
        for M in (ops.S, ops.T, ops.A):
            fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def read_cache_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated operator cache")
    magic, I, J, theta, K, code = _HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    boundary = {v: k for k, v in _BOUNDARY_CODES.items()}[code]
    return GridShape(I, J), theta, K, boundary


def load_operators(path) -> OperatorSet:
    shape, theta, K, boundary = read_cache_header(path)
    n = shape.size
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    if data.size != 3 * n * n:
        raise ValueError(f"{path}: expected {3 * n * n} matrix entries, found {data.size}")
    S, T, A = (np.array(m.reshape(n, n), dtype=float) for m in np.split(data, 3))
    luS, cond_S = _factor(S, "S")
    luA, cond_A = _factor(A, "A")
    _freeze(S, T, A)
    params = SchemeParams(theta=theta, K=K, boundary=boundary)
    return OperatorSet(shape, params, S, T, A, luS, luA, cond_S, cond_A)


def cache_path(cache_dir, shape: GridShape, params: SchemeParams) -> Path:
    name = f"hdmop_{shape.rows}x{shape.cols}_th{params.theta!r}_K{params.K!r}_{params.boundary.value}.bin"
    return Path(cache_dir) / name


def cached_operators(cache_dir, shape: GridShape, params: SchemeParams) -> OperatorSet:
    """Load from ``cache_dir`` when the header matches exactly, else build and store."""
    path = cache_path(cache_dir, shape, params)
    if path.exists():
        try:
            hdr = read_cache_header(path)
        except ValueError:
            hdr = None
        if hdr == (shape, params.theta, params.K, params.boundary):
            ops = load_operators(path)
            if params.gamma is not None:
                ops = OperatorSet(ops.shape, params, ops.S, ops.T, ops.A, ops.luS, ops.luA, ops.cond_S, ops.cond_A)
            return ops
    ops = build_operators(shape, params)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_operators(ops, path)
    return ops
