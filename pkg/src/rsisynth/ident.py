"""Least-squares baseline identification and the identify-then-design pipeline.

This is the comparison arm: fit (A, B) by least squares, synthesize a
controller for the fit, and be explicit that nothing is guaranteed about the
real plant.  Under bounded but non-symmetrically distributed disturbances the
fit need not converge to the truth no matter how much data is used, which is
exactly what the convergence traces here are for.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from . import data as data_mod
from . import synth as synth_mod
from .model import DisturbanceModel, InputSet, LinearSystem, SafetySet

__all__ = [
    "IdentResult",
    "least_squares_fit",
    "indirect_pipeline",
    "convergence_trace",
    "trace_csv",
]


@dataclass(frozen=True)
class IdentResult:
    A_hat: np.ndarray
    B_hat: np.ndarray
    residual_norm: float
    regressor_rank: int
    rank_deficient: bool

    def to_json(self) -> str:
        doc = asdict(self)
        doc["A_hat"] = self.A_hat.tolist()
        doc["B_hat"] = self.B_hat.tolist()
        return json.dumps(doc, indent=2)


def _thresholded_pinv(mat: np.ndarray, rank_tol: Optional[float]) -> tuple[np.ndarray, int]:
    """Moore-Penrose inverse with the same rank cutoff as the PE diagnostics."""
    U, sv, Vt = np.linalg.svd(mat, full_matrices=False)
    tol = rank_tol if rank_tol is not None else data_mod.default_rank_tol(mat.shape)
    if sv.size == 0 or sv[0] == 0.0:
        return np.zeros(mat.shape[::-1]), 0
    keep = sv > tol * sv[0]
    rank = int(np.sum(keep))
    inv_sv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
    return (Vt.T * inv_sv) @ U.T, rank


def least_squares_fit(ds: data_mod.Dataset, rank_tol: Optional[float] = None) -> IdentResult:
    """[A_hat B_hat] = X1 pinv([X0; U0]); minimum-norm on rank-deficient data."""
    Z = np.vstack([ds.X0, ds.U0])
    pinv, rank = _thresholded_pinv(Z, rank_tol)
    AB = ds.X1 @ pinv
    A_hat = AB[:, : ds.n]
    B_hat = AB[:, ds.n :]
    residual = float(np.linalg.norm(ds.X1 - AB @ Z, ord="fro"))
    deficient = rank < ds.n + ds.m
    if deficient:
        warnings.warn(
            "regressor rank %d < %d: infinitely many systems reproduce the "
            "data, returning the minimum-norm fit" % (rank, ds.n + ds.m),
            stacklevel=2,
        )
    return IdentResult(
        A_hat=A_hat,
        B_hat=B_hat,
        residual_norm=residual,
        regressor_rank=rank,
        rank_deficient=deficient,
    )


def indirect_pipeline(
    ds: data_mod.Dataset,
    S: SafetySet,
    U: InputSet,
    gamma: float,
    cfg: synth_mod.SynthConfig,
    truth: Optional[LinearSystem] = None,
) -> tuple[IdentResult, Optional[synth_mod.RsiCertificate], dict]:
    """Identify, then synthesize for the identified model.

    Returns the fit, the certificate (None when synthesis is infeasible on
    the estimate), and an honesty report.  The certificate speaks only about
    the estimated model; when the true system is supplied, the report also
    carries the actual error norms, which no data-only method could provide
    here.
    """
    fit = least_squares_fit(ds)
    est = LinearSystem(A=fit.A_hat, B=fit.B_hat)

    def assembler(kap: float):
        return synth_mod.assemble_opm(est, S, U, gamma, kap)

    result = synth_mod.kappa_search(
        assembler, cfg, mode="model", gamma=gamma,
        extra_provenance={"identified_from_N": ds.N, "dataset_sha256": ds.sha256()},
    )
    honesty = {
        "certificate_valid_for": "estimated model only",
        "estimate_rank_deficient": fit.rank_deficient,
        "synthesis_feasible": result.feasible,
    }
    if truth is not None:
        honesty["delta_A"] = float(np.linalg.norm(truth.A - fit.A_hat, 2))
        honesty["delta_B"] = float(np.linalg.norm(truth.B - fit.B_hat, 2))
    return fit, result.certificate, honesty


def convergence_trace(
    sys: LinearSystem,
    dm: DisturbanceModel,
    input_sampler: Callable[[np.random.Generator, int, int], np.ndarray],
    entry: tuple[int, int],
    n_grid: Sequence[int],
    x0=None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Entry (i, j) of A_hat (0-based) fitted on growing prefixes of one run.

    The trajectory is generated once with the given sampler and disturbance
    model; each grid point refits on its prefix, so the trace shows how (or
    whether) the estimate settles as data accumulates.
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    N_max = n_grid[-1]
    if rng is None:
        rng = dm.rng()
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    inputs = np.zeros((sys.m, N_max))
    for k in range(N_max):
        inputs[:, k] = np.asarray(input_sampler(rng, k, sys.m), dtype=float).reshape(-1)
    ds = data_mod.collect(sys, x, inputs, dm, rng=rng)

    i, j = entry
    out = np.zeros(len(n_grid))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # rank warnings expected on tiny prefixes
        for idx, N in enumerate(n_grid):
            prefix = data_mod.Dataset(X0=ds.X0[:, :N], X1=ds.X1[:, :N], U0=ds.U0[:, :N])
            fit = least_squares_fit(prefix)
            out[idx] = fit.A_hat[i, j]
    return out


def trace_csv(n_grid: Sequence[int], values: np.ndarray) -> str:
    lines = ["N,value"]
    for N, v in zip(n_grid, values):
        lines.append(f"{N},{float(v)!r}")
    return "\n".join(lines) + "\n"
