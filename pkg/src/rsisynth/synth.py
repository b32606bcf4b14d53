"""Assembly of the two invariant-ellipsoid programs and the kappa search.

Both programs maximize log det Q over ellipsoids {x : x' Q^{-1} x <= 1} that a
linear state feedback keeps invariant under every disturbance in the gamma
ball.  The model-based program knows (A, B); the data-driven one replaces the
dynamics with one big PSD block built from snapshot data, with one
nonnegative multiplier per sample.  The contraction level kappa trades how
hard the loop shrinks the ellipsoid against how much head room is left to
absorb the disturbance: the floor c = gamma / (1 - sqrt(kappa))^2 on the
eigenvalues of Q grows quickly as kappa -> 1, and kappa = 1 is admissible
only for gamma = 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import cvxpy as cp
import numpy as np
import scipy.linalg

from . import data as data_mod
from . import lmi
from .model import InputSet, LinearSystem, SafetySet

__all__ = [
    "RsiCertificate",
    "SynthConfig",
    "KappaProbe",
    "KappaSearchResult",
    "KappaDomainError",
    "ExtractionError",
    "contraction_floor",
    "assemble_opm",
    "assemble_opd",
    "extract_certificate",
    "kappa_search",
]

# Bisection never probes kappa = 1 itself; this stands in for "just below 1"
# while keeping 1 - sqrt(kappa) representable.
KAPPA_TOP = 1.0 - 1e-12


class KappaDomainError(ValueError):
    """kappa = 1 demands gamma = 0; anything else is rejected up front."""


class ExtractionError(RuntimeError):
    """Solution matrix too close to singular to recover a gain from."""


def contraction_floor(gamma: float, kappa: float) -> float:
    """Eigenvalue floor c = gamma/(1-sqrt(kappa))^2 (0 when kappa = 1)."""
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"kappa must be in (0, 1], got {kappa}")
    if kappa == 1.0:
        if gamma > 0.0:
            raise KappaDomainError(
                "kappa = 1 leaves no gap between the shrunk ellipsoid and its "
                "boundary, so it only admits gamma = 0; got gamma = %g" % gamma
            )
        return 0.0
    return gamma / (1.0 - np.sqrt(kappa)) ** 2


def _check_dims(S: SafetySet, U: InputSet, n: int, m: int) -> None:
    if S.n != n:
        raise ValueError(f"safety rows have dim {S.n}, expected {n}")
    if U.m != m:
        raise ValueError(f"input rows have dim {U.m}, expected {m}")


def _add_shared_constraints(prob: lmi.LmiProblem, Q, gain_var, S: SafetySet,
                            U: InputSet, c: float, n: int) -> None:
    """Constraints common to both programs: floor, safety rows, input blocks."""
    floor = c if c > 0.0 else lmi.MATRIX_FLOOR
    prob.add_psd_block(Q - floor * np.eye(n), name="eig_floor")
    for i, a in enumerate(S.a_rows):
        prob.add_constraint(a @ Q @ a <= 1.0)
    one = np.eye(1)
    for j, b in enumerate(U.b_rows):
        brow = b.reshape(1, -1)
        prob.add_psd_block(
            cp.bmat([[one, brow @ gain_var], [gain_var.T @ brow.T, Q]]),
            name=f"input{j}",
        )


def assemble_opm(sys: LinearSystem, S: SafetySet, U: InputSet,
                 gamma: float, kappa: float) -> lmi.LmiProblem:
    """Model-based program: known (A, B).

    Variables Q (symmetric n x n) and Kbar (m x n); the gain is recovered as
    K = Kbar Q^{-1}.  Blocks: the 2n x 2n contraction block
    [[kappa Q, Q A' + Kbar' B'], [A Q + B Kbar, Q]], the eigenvalue floor
    Q >= c I, one scalar row a_i Q a_i' <= 1 per safety half-space, and one
    (1+n) block per input half-space.
    """
    c = contraction_floor(gamma, kappa)
    n, m = sys.n, sys.m
    _check_dims(S, U, n, m)
    prob = lmi.LmiProblem(name=f"opm(kappa={kappa:g})")
    Q = prob.symmetric("Q", n)
    Kbar = prob.rectangular("Kbar", m, n)
    A, B = sys.A, sys.B
    prob.add_psd_block(
        cp.bmat([[kappa * Q, Q @ A.T + Kbar.T @ B.T], [A @ Q + B @ Kbar, Q]]),
        name="contraction",
    )
    _add_shared_constraints(prob, Q, Kbar, S, U, c, n)
    prob.set_logdet_objective("Q")
    prob.meta.update({"mode": "model", "kappa": kappa, "gamma": gamma, "c": c})
    return prob


def assemble_opd(ds: data_mod.Dataset, S: SafetySet, U: InputSet,
                 gamma: float, kappa: float, eps_floor: float = 1e-9) -> lmi.LmiProblem:
    """Direct data-driven program over snapshot data (X0, X1, U0).

    Variables Q (n x n), Zbar (m x n), and one multiplier per sample.  The
    core is a single (3n+m) PSD block: a fixed affine arrangement of Q and
    Zbar minus the multiplier-weighted sum of rank-one contributions
    gamma*E - v_p v_p' with v_p = [x(p); -x(p-1); -u(p-1); 0].  Any gain
    recovered from a feasible point is valid for every system that could have
    produced the data within the gamma ball, the true one included.

    The multipliers are rescaled per sample by s_p = |v_p|^2 + gamma, an
    exact change of variables that keeps the block's coefficients near unity;
    this preconditioning is what makes the block solvable at gamma = 1e-6
    against data spanning several orders of magnitude.
    """
    c = contraction_floor(gamma, kappa)
    n, m, N = ds.n, ds.m, ds.N
    if N < 1:
        raise ValueError("dataset is empty")
    _check_dims(S, U, n, m)

    pe = data_mod.check_pe(ds)
    if not pe.pe_satisfied:
        warnings.warn(
            "data matrix [X0; U0] has rank %d < %d: the set of systems "
            "consistent with the data is unbounded and the program is "
            "unlikely to be feasible" % (pe.rank_xu, pe.required_xu),
            stacklevel=2,
        )

    prob = lmi.LmiProblem(name=f"opd(kappa={kappa:g}, N={N})")
    Q = prob.symmetric("Q", n)
    Zbar = prob.rectangular("Zbar", m, n)

    V = np.vstack([ds.X1, -ds.X0, -ds.U0, np.zeros((n, N))])
    col_scale = (V * V).sum(axis=0) + gamma
    eps_t = prob.scalars("eps_scaled", N, lower=eps_floor * col_scale)
    Vt = V / np.sqrt(col_scale)[None, :]

    dim = 3 * n + m
    E = np.zeros((dim, dim))
    E[:n, :n] = np.eye(n)
    zn = np.zeros((n, n))
    znm = np.zeros((n, m))
    zmn = np.zeros((m, n))
    base = cp.bmat(
        [
            [kappa * Q, zn, znm, zn],
            [zn, -Q, -Zbar.T, zn],
            [zmn, -Zbar, np.zeros((m, m)), Zbar],
            [zn, zn, Zbar.T, Q],
        ]
    )
    weighted = cp.sum(cp.multiply(eps_t, gamma / col_scale)) * E \
        - Vt @ cp.diag(eps_t) @ Vt.T
    prob.add_psd_block(base - weighted, name="data")
    _add_shared_constraints(prob, Q, Zbar, S, U, c, n)
    prob.set_logdet_objective("Q")
    prob.meta.update(
        {
            "mode": "data",
            "kappa": kappa,
            "gamma": gamma,
            "c": c,
            "N": N,
            "eps_floor": eps_floor,
            "eps_col_scale": col_scale,
            "dataset_sha256": ds.sha256(),
            "pe_report": pe,
        }
    )
    return prob


@dataclass(frozen=True)
class RsiCertificate:
    """Invariant ellipsoid {x : x' Q^{-1} x <= 1} with its feedback gain."""

    Q: np.ndarray
    K: np.ndarray
    kappa: float
    gamma: float
    c: float
    provenance: dict
    slack: Optional[np.ndarray] = None  # per-sample multipliers, data mode
    feas_tol: float = 1e-8
    eps_floor: float = 1e-9

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def to_json(self) -> str:
        doc = {
            "Q": self.Q.tolist(),
            "K": self.K.tolist(),
            "kappa": self.kappa,
            "gamma": self.gamma,
            "c": self.c,
            "provenance": self.provenance,
            "slack": None if self.slack is None else list(self.slack),
            "feas_tol": self.feas_tol,
            "eps_floor": self.eps_floor,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text_or_path) -> "RsiCertificate":
        if isinstance(text_or_path, str) and text_or_path.lstrip().startswith("{"):
            doc = json.loads(text_or_path)
        else:
            with open(text_or_path) as fh:
                doc = json.load(fh)
        return cls(
            Q=np.array(doc["Q"], dtype=float),
            K=np.atleast_2d(np.array(doc["K"], dtype=float)),
            kappa=float(doc["kappa"]),
            gamma=float(doc["gamma"]),
            c=float(doc["c"]),
            provenance=doc.get("provenance", {}),
            slack=None if doc.get("slack") is None else np.array(doc["slack"]),
            feas_tol=float(doc.get("feas_tol", 1e-8)),
            eps_floor=float(doc.get("eps_floor", 1e-9)),
        )


def extract_certificate(sol: lmi.LmiSolution, mode: str, gamma: float,
                        kappa: float, feas_tol: float = 1e-8,
                        eps_floor: float = 1e-9,
                        extra_provenance: Optional[dict] = None) -> RsiCertificate:
    """Recover (Q, K) from a feasible solve; K = Kbar Q^{-1} (or Zbar Q^{-1}).

    Q^{-1} is applied through a Cholesky factorization of the symmetrized Q.
    A Q whose smallest eigenvalue sits below the strictness floor is refused
    with a conditioning report rather than silently inverted.
    """
    if not sol.is_feasible:
        raise ValueError(f"cannot extract from a solve with status {sol.status!r}")
    Q = np.atleast_2d(sol.assignments["Q"])
    Q = 0.5 * (Q + Q.T)
    lam_min = float(np.linalg.eigvalsh(Q).min())
    if lam_min < lmi.MATRIX_FLOOR:
        lam_max = float(np.linalg.eigvalsh(Q).max())
        raise ExtractionError(
            f"Q is numerically singular: lambda_min={lam_min:.3e}, "
            f"lambda_max={lam_max:.3e}, cond={lam_max / max(lam_min, 1e-300):.3e}"
        )
    gain_name = "Kbar" if mode == "model" else "Zbar"
    gain_bar = np.atleast_2d(sol.assignments[gain_name])
    cho = scipy.linalg.cho_factor(Q, lower=True)
    K = scipy.linalg.cho_solve(cho, gain_bar.T).T

    slack = None
    if mode == "data":
        meta = sol.detail.get("problem_meta", {})
        eps_scaled = np.asarray(sol.assignments["eps_scaled"], dtype=float)
        col_scale = np.asarray(meta.get("eps_col_scale", np.ones_like(eps_scaled)))
        slack = np.maximum(eps_scaled / col_scale, eps_floor)

    provenance = {"kind": mode}
    if extra_provenance:
        provenance.update(extra_provenance)
    if mode == "data":
        meta = sol.detail.get("problem_meta", {})
        provenance.setdefault("N", meta.get("N"))
        provenance.setdefault("dataset_sha256", meta.get("dataset_sha256"))
    return RsiCertificate(
        Q=Q,
        K=K,
        kappa=kappa,
        gamma=gamma,
        c=contraction_floor(gamma, kappa),
        provenance=provenance,
        slack=slack,
        feas_tol=feas_tol,
        eps_floor=eps_floor,
    )


@dataclass
class SynthConfig:
    """Outer-loop knobs for the kappa search."""

    kappa_init: float = 0.95
    e: float = 1e-3               # bisection bracket width at which to stop
    i_max: int = 20               # solve budget
    search_mode: str = "max-volume"   # or "max-kappa"
    eps_floor: float = 1e-9
    solver: lmi.SolverOptions = field(default_factory=lmi.SolverOptions)

    def __post_init__(self):
        if not 0.0 < self.kappa_init <= 1.0:
            raise ValueError(f"kappa_init must be in (0, 1], got {self.kappa_init}")
        if self.e <= 0.0:
            raise ValueError(f"e must be positive, got {self.e}")
        if self.i_max < 1:
            raise ValueError(f"i_max must be >= 1, got {self.i_max}")
        if self.search_mode not in ("max-volume", "max-kappa"):
            raise ValueError(f"unknown search mode {self.search_mode!r}")


@dataclass(frozen=True)
class KappaProbe:
    kappa: float
    status: str
    objective: Optional[float]


@dataclass
class KappaSearchResult:
    certificate: Optional[RsiCertificate]
    trace: list[KappaProbe]
    best_kappa: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.certificate is not None

    def trace_csv(self) -> str:
        lines = ["kappa,status,objective"]
        for p in self.trace:
            obj = "" if p.objective is None else repr(p.objective)
            lines.append(f"{p.kappa!r},{p.status},{obj}")
        return "\n".join(lines) + "\n"


def kappa_search(assembler: Callable[[float], lmi.LmiProblem], cfg: SynthConfig,
                 mode: str, gamma: float,
                 extra_provenance: Optional[dict] = None) -> KappaSearchResult:
    """Bisection over the contraction level.

    The first probe is kappa_init.  While no feasible level is known, probes
    split the widest unexplored gap in (0, 1), since feasibility need not be
    monotone in kappa once gamma > 0.  Once a feasible anchor exists the
    upper frontier is bisected toward the largest feasible kappa, the
    quantity the flowchart's outer loop asks for.  Every solve lands in the
    trace; max-kappa picks the feasible probe with the largest kappa,
    max-volume the one with the largest log det Q.
    """
    probed: dict[float, tuple[str, Optional[float], Optional[RsiCertificate]]] = {}
    trace: list[KappaProbe] = []

    def probe(kap: float) -> None:
        problem = assembler(kap)
        sol = lmi.solve(problem, cfg.solver)
        sol.detail["problem_meta"] = problem.meta
        status, obj, cert = sol.status, None, None
        if sol.is_feasible:
            try:
                cert = extract_certificate(
                    sol, mode=mode, gamma=gamma, kappa=kap,
                    feas_tol=cfg.solver.feas_tol, eps_floor=cfg.eps_floor,
                    extra_provenance=extra_provenance,
                )
                obj = sol.objective_value
            except ExtractionError:
                status = lmi.NUMERICAL_FAILURE
        probed[kap] = (status, obj, cert)
        trace.append(KappaProbe(kappa=kap, status=status, objective=obj))

    top = min(KAPPA_TOP, 1.0) if gamma > 0 else 1.0
    first = min(cfg.kappa_init, top)
    probe(first)

    def feasible_kappas() -> list[float]:
        return [k for k, (_, _, cert) in probed.items() if cert is not None]

    while len(trace) < cfg.i_max:
        feas = feasible_kappas()
        if feas:
            lo = max(feas)
            above = [k for k in probed if k > lo]
            hi = min(above) if above else top
            if hi - lo <= cfg.e:
                break
            nxt = 0.5 * (lo + hi)
        else:
            # widest unexplored gap between probed points and the interval ends
            pts = sorted(set(probed) | {0.0, top})
            gaps = [(pts[i + 1] - pts[i], pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
            width, glo, ghi = max(gaps)
            if width <= cfg.e:
                break
            nxt = 0.5 * (glo + ghi)
        if nxt in probed:
            break
        probe(nxt)

    feas = feasible_kappas()
    if not feas:
        return KappaSearchResult(certificate=None, trace=trace)
    if cfg.search_mode == "max-kappa":
        best_k = max(feas)
    else:
        best_k = max(feas, key=lambda k: (probed[k][1], k))
    return KappaSearchResult(certificate=probed[best_k][2], trace=trace, best_kappa=best_k)
