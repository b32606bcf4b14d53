"""Experiment datasets from a single input-state trajectory, plus excitation
diagnostics.

A dataset is a triple of column-stacked snapshots (X0, X1, U0) where column p
holds x(p-1), x(p), u(p-1) of one trajectory.  ``check_pe`` reports whether
the stacked matrix [X0; U0] has full row rank n+m; by the rank equivalence
this decides whether the set of systems consistent with the data is bounded,
which is what makes direct synthesis from the data workable.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np

from .model import DisturbanceModel, LinearSystem, DimensionError, sample_disturbance, step

__all__ = [
    "Dataset",
    "PeReport",
    "InsufficientExcitationError",
    "collect",
    "hankel",
    "check_pe",
    "extend_until_pe",
    "uniform_input_sampler",
    "square_dither_sampler",
    "write_dataset_csv",
    "read_dataset_csv",
]

DEFAULT_RANK_TOL_FACTOR = 1e-9


@dataclass(frozen=True)
class Dataset:
    """Snapshot matrices X0 (n x N), X1 (n x N), U0 (m x N)."""

    X0: np.ndarray
    X1: np.ndarray
    U0: np.ndarray

    def __post_init__(self):
        X0 = np.atleast_2d(np.asarray(self.X0, dtype=float))
        X1 = np.atleast_2d(np.asarray(self.X1, dtype=float))
        U0 = np.atleast_2d(np.asarray(self.U0, dtype=float))
        if not (X0.shape[1] == X1.shape[1] == U0.shape[1]):
            raise DimensionError(
                f"column counts differ: X0 {X0.shape}, X1 {X1.shape}, U0 {U0.shape}"
            )
        if X0.shape[0] != X1.shape[0]:
            raise DimensionError(
                f"X0 and X1 row counts differ: {X0.shape[0]} vs {X1.shape[0]}"
            )
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "X1", X1)
        object.__setattr__(self, "U0", U0)

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def N(self) -> int:
        return self.X0.shape[1]

    def sha256(self) -> str:
        h = hashlib.sha256()
        for block in (self.X0, self.X1, self.U0):
            h.update(np.ascontiguousarray(block).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class PeReport:
    """Rank diagnostics of one dataset.

    ``pe_satisfied`` means rank([X0; U0]) = n+m, which holds exactly when the
    set of systems consistent with the data is bounded, so the same flag is
    exposed as ``feasible_set_bounded``.  ``hankel_rank`` is the rank of the
    depth-(n+1) block Hankel matrix of the input sequence; it is None when the
    dataset is too short for that matrix to exist.
    """

    rank_xu: int
    required_xu: int
    hankel_rank: Optional[int]
    required_hankel: int
    pe_satisfied: bool
    feasible_set_bounded: bool
    tolerance_used: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


class InsufficientExcitationError(RuntimeError):
    """extend_until_pe exhausted its budget; carries the last report."""

    def __init__(self, message: str, report: PeReport, dataset: Dataset):
        super().__init__(message)
        self.report = report
        self.dataset = dataset


def collect(
    sys: LinearSystem,
    x0,
    input_seq,
    dm: DisturbanceModel,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """Run the plant for N steps and pack the snapshots column by column."""
    input_seq = np.atleast_2d(np.asarray(input_seq, dtype=float))
    if input_seq.shape[0] != sys.m:
        if input_seq.shape[1] == sys.m:
            input_seq = input_seq.T
        else:
            raise DimensionError(
                f"input_seq must be m x N with m={sys.m}, got {input_seq.shape}"
            )
    N = input_seq.shape[1]
    if N < 1:
        raise DimensionError("need at least one input column")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise DimensionError(f"x0 has dim {x.shape[0]}, system has n={sys.n}")
    if rng is None:
        rng = dm.rng()
    X0 = np.zeros((sys.n, N))
    X1 = np.zeros((sys.n, N))
    for p in range(N):
        X0[:, p] = x
        d = sample_disturbance(dm, sys.n, rng)
        x = step(sys, x, input_seq[:, p], d)
        X1[:, p] = x
    return Dataset(X0=X0, X1=X1, U0=input_seq.copy())


def hankel(U0, depth: int) -> np.ndarray:
    """Depth-``depth`` block Hankel matrix of an m x N input sequence.

    Block row i (0-based) holds columns i .. i+N-depth, giving shape
    (m*depth) x (N-depth+1).
    """
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    m, N = U0.shape
    if N < depth:
        raise DimensionError(f"need N >= depth, got N={N}, depth={depth}")
    cols = N - depth + 1
    H = np.zeros((m * depth, cols))
    for i in range(depth):
        H[i * m : (i + 1) * m, :] = U0[:, i : i + cols]
    return H


def _rank(mat: np.ndarray, rank_tol: float) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def default_rank_tol(shape: tuple[int, int]) -> float:
    return DEFAULT_RANK_TOL_FACTOR * max(shape)


def check_pe(ds: Dataset, rank_tol: Optional[float] = None) -> PeReport:
    """Rank diagnostics: full-rank [X0; U0] and depth-(n+1) Hankel rank."""
    stacked = np.vstack([ds.X0, ds.U0])
    tol = rank_tol if rank_tol is not None else default_rank_tol(stacked.shape)
    rank_xu = _rank(stacked, tol)
    required_xu = ds.n + ds.m
    depth = ds.n + 1
    required_hankel = ds.m * depth
    hankel_rank: Optional[int] = None
    if ds.N >= depth:
        hankel_rank = _rank(hankel(ds.U0, depth), tol)
    full = rank_xu == required_xu
    return PeReport(
        rank_xu=rank_xu,
        required_xu=required_xu,
        hankel_rank=hankel_rank,
        required_hankel=required_hankel,
        pe_satisfied=full,
        feasible_set_bounded=full,
        tolerance_used=tol,
    )


def uniform_input_sampler(amplitude: float) -> Callable[[np.random.Generator, int, int], np.ndarray]:
    """i.i.d. uniform inputs on [-amplitude, amplitude]^m."""

    def sampler(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
        return rng.uniform(-amplitude, amplitude, size=m)

    return sampler


def square_dither_sampler(
    amplitude: float = 5.0, period: int = 24, dither: float = 0.5, clip: float = 5.0
) -> Callable[[np.random.Generator, int, int], np.ndarray]:
    """Square wave plus uniform dither, clipped to [-clip, clip].

    The slow square wave pushes energy into the sluggish rigid-body states
    while the dither keeps the depth-(n+1) Hankel matrix full rank; this is
    the excitation shipped with the pendulum benchmark.
    """

    def sampler(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
        square = amplitude if (k // period) % 2 == 0 else -amplitude
        u = square + rng.uniform(-dither, dither, size=m)
        return np.clip(u, -clip, clip)

    return sampler


def extend_until_pe(
    sys: LinearSystem,
    x0,
    dm: DisturbanceModel,
    input_sampler: Callable[[np.random.Generator, int, int], np.ndarray],
    n_start: int,
    n_max: int,
    rank_tol: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Dataset, PeReport]:
    """Grow one trajectory until the rank condition holds or n_max is hit.

    The trajectory is never restarted: new steps are appended to the same run,
    so the result is always a prefix-consistent single-experiment dataset.
    """
    if n_start > n_max:
        raise ValueError(f"n_start={n_start} exceeds n_max={n_max}")
    if rng is None:
        rng = dm.rng()
    x = np.asarray(x0, dtype=float).reshape(-1)
    cols_x0, cols_x1, cols_u = [], [], []

    def grow_to(target: int):
        nonlocal x
        while len(cols_u) < target:
            k = len(cols_u)
            u = np.asarray(input_sampler(rng, k, sys.m), dtype=float).reshape(-1)
            d = sample_disturbance(dm, sys.n, rng)
            cols_x0.append(x.copy())
            x = step(sys, x, u, d)
            cols_x1.append(x.copy())
            cols_u.append(u)

    def snapshot() -> Dataset:
        return Dataset(
            X0=np.column_stack(cols_x0),
            X1=np.column_stack(cols_x1),
            U0=np.column_stack(cols_u),
        )

    grow_to(n_start)
    ds = snapshot()
    report = check_pe(ds, rank_tol)
    while not report.pe_satisfied and ds.N < n_max:
        grow_to(min(ds.N + 1, n_max))
        ds = snapshot()
        report = check_pe(ds, rank_tol)
    if not report.pe_satisfied:
        raise InsufficientExcitationError(
            f"rank {report.rank_xu} < {report.required_xu} after {ds.N} steps",
            report=report,
            dataset=ds,
        )
    return ds, report


def write_dataset_csv(ds: Dataset, path) -> None:
    """CSV with header p,x0_1..x0_n,x1_1..x1_n,u_1..u_m, one row per sample."""
    header = (
        ["p"]
        + [f"x0_{i + 1}" for i in range(ds.n)]
        + [f"x1_{i + 1}" for i in range(ds.n)]
        + [f"u_{i + 1}" for i in range(ds.m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in range(ds.N):
            row = (
                [p + 1]
                + [repr(float(v)) for v in ds.X0[:, p]]
                + [repr(float(v)) for v in ds.X1[:, p]]
                + [repr(float(v)) for v in ds.U0[:, p]]
            )
            writer.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("x0_"))
        m = sum(1 for h in header if h.startswith("u_"))
        if n == 0 or m == 0:
            raise ValueError(f"{path} is not a dataset CSV (header {header})")
        rows = [r for r in reader if r]
    N = len(rows)
    X0 = np.zeros((n, N))
    X1 = np.zeros((n, N))
    U0 = np.zeros((m, N))
    for j, row in enumerate(rows):
        vals = [float(v) for v in row[1:]]
        X0[:, j] = vals[:n]
        X1[:, j] = vals[n : 2 * n]
        U0[:, j] = vals[2 * n : 2 * n + m]
    return Dataset(X0=X0, X1=X1, U0=U0)
