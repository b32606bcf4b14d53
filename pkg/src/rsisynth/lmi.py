"""Small declarative layer for LMI feasibility and log-det maximization.

A problem is a set of matrix/scalar decision variables, affine PSD block
constraints, affine scalar constraints, and optionally a log-det objective on
one designated symmetric variable.  Solving goes through cvxpy with a layered
engine strategy:

1. CLARABEL on the native log-det objective (cvxpy compiles the objective to
   exponential cones).  Fast and accurate on well-scaled problems.
2. If that fails: CVXOPT on the plain feasibility problem.  CVXOPT's
   interior-point method proved the most reliable at deciding feasibility of
   the badly-scaled data-driven blocks this package produces.
3. If an objective is requested and step 2 found a feasible point, the
   objective is pushed by bisection on the volume level t using the
   determinant-root hypograph: det(V)^{1/s} >= t is encoded with a lower
   triangular L via [[V, L], [L', diag(L)]] >= 0 and geomean(diag L) >= t,
   each level being one CVXOPT feasibility solve.  The best feasible iterate
   is returned once the level bracket is tight.
4. SCS is tried as a last resort for feasibility verdicts.

Every accepted solution is re-checked outside the solver: each PSD block is
evaluated at the assignment and its minimum eigenvalue (from numpy's
symmetric eigensolver) must clear -feas_tol.  Residuals are measured on the
solver-facing (preconditioned) blocks; per-block raw values are kept in the
solution detail.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import cvxpy as cp
import numpy as np

__all__ = [
    "LmiProblem",
    "LmiSolution",
    "SolverOptions",
    "solve",
    "logdet_reform",
    "SOLVER_TOL_ENV",
]

SOLVER_TOL_ENV = "RSI_SOLVER_TOL"

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

# Matrix strictness floor: V > 0 is requested as V >= delta*I when no
# stronger lower bound is already present.
MATRIX_FLOOR = 1e-9


def _env_feas_tol(default: float) -> float:
    raw = os.environ.get(SOLVER_TOL_ENV)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        warnings.warn(f"ignoring non-numeric {SOLVER_TOL_ENV}={raw!r}")
        return default


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    max_iter: int = 200
    # relative width at which the volume-level bisection stops
    level_rel_tol: float = 1e-4

    def __post_init__(self):
        self.feas_tol = _env_feas_tol(self.feas_tol)


@dataclass
class _PsdBlock:
    expr: cp.Expression
    name: str
    scale: float


class LmiProblem:
    """Declarative container; variables are cvxpy Variables owned here."""

    def __init__(self, name: str = "lmi"):
        self.name = name
        self.variables: dict[str, cp.Variable] = {}
        self.psd_blocks: list[_PsdBlock] = []
        self.scalar_constraints: list[cp.Constraint] = []
        self.logdet_var: Optional[str] = None
        self.meta: dict = {}

    # -- variable declarations -------------------------------------------
    def symmetric(self, name: str, size: int) -> cp.Variable:
        var = cp.Variable((size, size), symmetric=True, name=name)
        self._register(name, var)
        return var

    def rectangular(self, name: str, rows: int, cols: int) -> cp.Variable:
        var = cp.Variable((rows, cols), name=name)
        self._register(name, var)
        return var

    def scalars(self, name: str, count: int, lower: Optional[float] = None) -> cp.Variable:
        """A vector of scalar decision variables, optionally bounded below."""
        var = cp.Variable(count, name=name)
        self._register(name, var)
        if lower is not None:
            lo = np.broadcast_to(np.asarray(lower, dtype=float), (count,))
            self.scalar_constraints.append(var >= lo)
        return var

    def _register(self, name: str, var: cp.Variable) -> None:
        if name in self.variables:
            raise ValueError(f"variable {name!r} declared twice")
        self.variables[name] = var

    # -- constraints and objective ---------------------------------------
    def add_psd_block(self, expr, name: Optional[str] = None, scale: float = 1.0) -> None:
        """Require the affine matrix expression to be PSD.

        ``scale`` preconditions the block: the solver sees expr/scale, which
        is equivalent for a positive scalar but keeps entries near unity when
        the raw data spans many orders of magnitude.
        """
        expr = cp.Constant(np.asarray(expr, dtype=float)) if isinstance(expr, np.ndarray) else expr
        if expr.shape[0] != expr.shape[1]:
            raise ValueError(f"PSD block must be square, got {expr.shape}")
        if not expr.is_symmetric():
            expr = 0.5 * (expr + expr.T)
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError(f"scale must be a positive finite number, got {scale}")
        self.psd_blocks.append(
            _PsdBlock(expr=expr, name=name or f"psd{len(self.psd_blocks)}", scale=float(scale))
        )

    def add_constraint(self, constraint: cp.Constraint) -> None:
        """Affine scalar (in)equality, e.g. ``a @ Q @ a <= 1``."""
        self.scalar_constraints.append(constraint)

    def set_logdet_objective(self, name: str) -> None:
        var = self.variables.get(name)
        if var is None:
            raise KeyError(f"no variable named {name!r}")
        if var.ndim != 2 or var.shape[0] != var.shape[1]:
            raise ValueError(f"log-det variable {name!r} must be square")
        self.logdet_var = name

    # -- helpers -----------------------------------------------------------
    def _constraints(self, extra: Optional[list] = None) -> list:
        cons = [blk.expr / blk.scale >> 0 for blk in self.psd_blocks]
        cons += list(self.scalar_constraints)
        if extra:
            cons += extra
        return cons

    def debug_dump(self) -> str:
        """Plain-text sketch of the assembled cone program."""
        lines = [f"problem {self.name}"]
        for vname, var in self.variables.items():
            lines.append(f"  var {vname}: shape {tuple(var.shape)}")
        for blk in self.psd_blocks:
            lines.append(f"  psd {blk.name}: size {blk.expr.shape[0]}, scale {blk.scale:g}")
        lines.append(f"  scalar constraints: {len(self.scalar_constraints)}")
        lines.append(f"  objective: {'logdet ' + self.logdet_var if self.logdet_var else 'feasibility'}")
        return "\n".join(lines)


@dataclass
class LmiSolution:
    """Solver verdict plus an independently re-checked assignment.

    ``worst_psd_violation`` is the most negative eigenvalue across the
    solver-facing (scale-divided) PSD blocks at the returned assignment,
    clipped at zero from above; per-block values sit in ``detail``.
    """

    status: str
    assignments: dict[str, np.ndarray] = field(default_factory=dict)
    objective_value: Optional[float] = None
    worst_psd_violation: float = 0.0
    engine: str = ""
    detail: dict = field(default_factory=dict)

    @property
    def is_feasible(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)


def logdet_reform(problem: LmiProblem, encoding: str = "native", level: Optional[float] = None) -> cp.Problem:
    """Materialize the cone program for the problem's log-det objective.

    encoding='native' returns max log_det(V) (cvxpy lowers it to exponential
    cones).  encoding='detroot' returns the determinant-root hypograph form:
    an auxiliary lower-triangular L with [[V, L], [L', diag(L)]] >= 0 and the
    objective max geomean(diag L), whose maximizer coincides with the log-det
    maximizer because t -> t^{1/s} is monotone.  With ``level`` set, the
    det-root objective becomes the constraint geomean(diag L) >= level and the
    program is a pure feasibility problem (used by the level bisection).
    Feasibility problems (no objective) are returned as Minimize 0.
    """
    if problem.logdet_var is None:
        return cp.Problem(cp.Minimize(0), problem._constraints())
    V = problem.variables[problem.logdet_var]
    if encoding == "native":
        return cp.Problem(cp.Maximize(cp.log_det(V)), problem._constraints())
    if encoding != "detroot":
        raise ValueError(f"unknown encoding {encoding!r}")
    s = V.shape[0]
    L = cp.Variable((s, s), name="_detroot_L")
    extra: list = [cp.bmat([[V, L], [L.T, cp.diag(cp.diag(L))]]) >> 0]
    for i in range(s):
        for j in range(i + 1, s):
            extra.append(L[i, j] == 0)
    root = cp.geo_mean(cp.diag(L))
    if level is None:
        return cp.Problem(cp.Maximize(root), problem._constraints(extra))
    extra.append(root >= level)
    return cp.Problem(cp.Minimize(0), problem._constraints(extra))


def _try_solve(prob: cp.Problem, engine: str, opts: SolverOptions) -> str:
    """Run one engine, mapping exceptions to a status string."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # statuses are checked, not parsed from warnings
            if engine == "CLARABEL":
                prob.solve(solver=cp.CLARABEL, max_iter=max(opts.max_iter, 50))
            elif engine == "CVXOPT":
                prob.solve(solver=cp.CVXOPT)
            elif engine == "SCS":
                prob.solve(solver=cp.SCS, eps=1e-9, max_iters=50000)
            else:  # pragma: no cover
                raise ValueError(engine)
    except cp.error.SolverError:
        return "solver_error"
    except Exception:
        return "solver_error"
    return prob.status or "solver_error"


def _extract(problem: LmiProblem) -> dict[str, np.ndarray]:
    out = {}
    for name, var in problem.variables.items():
        val = var.value
        if val is None:
            return {}
        out[name] = np.array(val, dtype=float) if np.ndim(val) else float(val)
    return out


def _residuals(problem: LmiProblem, assignments: dict) -> tuple[float, dict]:
    """Independent eigenvalue check of every scaled block at the assignment."""
    per_block = {}
    worst = 0.0
    subs = {problem.variables[k]: v for k, v in assignments.items()}
    for blk in problem.psd_blocks:
        value = _eval_expr(blk.expr, subs)
        value = 0.5 * (value + value.T)
        lam = float(np.linalg.eigvalsh(value / blk.scale).min())
        per_block[blk.name] = {"lambda_min_scaled": lam, "scale": blk.scale}
        worst = min(worst, lam)
    return worst, per_block


def _eval_expr(expr: cp.Expression, subs: dict) -> np.ndarray:
    # cvxpy evaluates expressions through Variable.value; set, read, restore.
    saved = {}
    for var, val in subs.items():
        saved[var] = var.value
        var.value = val
    try:
        return np.atleast_2d(np.asarray(expr.value, dtype=float))
    finally:
        for var, val in saved.items():
            var.value = val


def _logdet_of(assignments: dict, name: str) -> Optional[float]:
    V = assignments.get(name)
    if V is None:
        return None
    sign, logdet = np.linalg.slogdet(np.atleast_2d(V))
    return float(logdet) if sign > 0 else -np.inf


def _accept(problem, opts, engine, objective_done) -> Optional[LmiSolution]:
    """Package the current cvxpy variable values if residuals check out."""
    assignments = _extract(problem)
    if not assignments:
        return None
    worst, per_block = _residuals(problem, assignments)
    if worst < -opts.feas_tol:
        return None
    obj = _logdet_of(assignments, problem.logdet_var) if problem.logdet_var else None
    status = OPTIMAL if (problem.logdet_var and objective_done) else FEASIBLE
    return LmiSolution(
        status=status,
        assignments=assignments,
        objective_value=obj,
        worst_psd_violation=min(worst, 0.0),
        engine=engine,
        detail={"blocks": per_block},
    )


def _degenerate_at_floor(problem: LmiProblem, sol: LmiSolution) -> bool:
    """True when the log-det variable collapsed onto the strictness floor.

    Below the feasibility frontier, interior-point engines can return
    near-zero matrices whose PSD violations hide under the absolute
    tolerance; the only tolerance-feasible points there are floor artifacts,
    so the truthful verdict is infeasibility.
    """
    if problem.logdet_var is None:
        return False
    V = np.atleast_2d(sol.assignments[problem.logdet_var])
    return float(np.linalg.eigvalsh(0.5 * (V + V.T)).min()) < 2.0 * MATRIX_FLOOR


def _level_bisection(problem: LmiProblem, opts: SolverOptions, start: LmiSolution) -> LmiSolution:
    """Push the det-root level up from a known feasible point via bisection."""
    name = problem.logdet_var
    s = np.atleast_2d(start.assignments[name]).shape[0]
    best = start
    t_best = max(np.exp(start.objective_value / s), 0.0) if np.isfinite(start.objective_value) else 0.0
    trace = []

    def feasible_at(level: float) -> Optional[LmiSolution]:
        prob = logdet_reform(problem, encoding="detroot", level=level)
        status = _try_solve(prob, "CVXOPT", opts)
        trace.append((level, status))
        if status != "optimal":
            return None
        return _accept(problem, opts, "cvxopt/detroot-level", objective_done=False)

    # grow an upper bracket by doubling from the incumbent level
    lo = t_best
    hi = max(2.0 * t_best, 1e-3)
    for _ in range(20):
        sol = feasible_at(hi)
        if sol is None:
            break
        best, lo = sol, hi
        hi *= 2.0
    else:  # pragma: no cover - level kept doubling, accept what we have
        hi *= 1.0
    # bisect the bracket
    while hi - lo > opts.level_rel_tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        sol = feasible_at(mid)
        if sol is None:
            hi = mid
        else:
            best, lo = sol, mid
    best.status = OPTIMAL
    best.objective_value = _logdet_of(best.assignments, name)
    best.detail["level_trace"] = trace
    return best


def solve(problem: LmiProblem, opts: Optional[SolverOptions] = None) -> LmiSolution:
    """Feasibility/optimality verdict for the problem under the engine ladder."""
    opts = opts or SolverOptions()

    if problem.logdet_var is not None:
        prob = logdet_reform(problem, encoding="native")
        status = _try_solve(prob, "CLARABEL", opts)
        if status == "optimal":
            sol = _accept(problem, opts, "clarabel/logdet", objective_done=True)
            if sol is not None:
                if _degenerate_at_floor(problem, sol):
                    return LmiSolution(status=INFEASIBLE, engine="clarabel/logdet",
                                       detail={"note": "only floor-degenerate points"})
                return sol
        elif status == "infeasible":
            return LmiSolution(status=INFEASIBLE, engine="clarabel/logdet")

    # Feasibility through the ladder.  CVXOPT first: it both solves and
    # certifies infeasibility reliably on the data-driven blocks.
    feas = cp.Problem(cp.Minimize(0), problem._constraints())
    verdicts = {}
    for engine in ("CVXOPT", "CLARABEL", "SCS"):
        status = _try_solve(feas, engine, opts)
        verdicts[engine] = status
        if status == "infeasible":
            return LmiSolution(status=INFEASIBLE, engine=engine.lower(), detail={"verdicts": verdicts})
        if status == "optimal":
            sol = _accept(problem, opts, engine.lower() + "/feasibility", objective_done=False)
            if sol is None:
                continue
            sol.detail["verdicts"] = verdicts
            if problem.logdet_var is None:
                return sol
            best = _level_bisection(problem, opts, sol)
            if _degenerate_at_floor(problem, best):
                return LmiSolution(status=INFEASIBLE, engine=best.engine,
                                   detail={"note": "only floor-degenerate points",
                                           "verdicts": verdicts})
            return best
    return LmiSolution(status=NUMERICAL_FAILURE, detail={"verdicts": verdicts})
