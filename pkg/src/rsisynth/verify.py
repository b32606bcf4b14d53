"""Analytic certification and Monte-Carlo checking of invariant ellipsoids.

A certificate (Q, K, kappa, gamma) is checked with plain eigenvalue algebra:
the one-step contraction of the closed loop F = A + BK over the ellipsoid is
the largest eigenvalue of Q^{1/2} F' Q^{-1} F Q^{1/2}, which must not exceed
kappa, and the smallest eigenvalue of Q must clear the disturbance floor
c = gamma/(1-sqrt(kappa))^2.  Containment in the safety and input polyhedra
reduces to the scalar margins a_i Q a_i' and b_j K Q K' b_j'.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict, field
from typing import Optional

import numpy as np
import scipy.linalg

from .model import (
    DisturbanceModel,
    InputSet,
    LinearSystem,
    SafetySet,
    Trajectory,
    sample_disturbance,
)
from .synth import RsiCertificate, contraction_floor, KappaDomainError

__all__ = [
    "CertReport",
    "FalsifyReport",
    "MonteCarloReport",
    "certify_rsi",
    "one_step_falsify",
    "monte_carlo_invariance",
    "sample_in_ellipsoid",
    "project_ellipsoid",
    "ellipse_boundary_points",
    "DEFAULT_CERT_TOL",
]

# Looser than the solver feasibility tolerance by one order so that
# solver-feasible points do not flap at the boundary.
DEFAULT_CERT_TOL = 1e-7


def _sym_sqrt(Q: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(0.5 * (Q + Q.T))
    lam = np.maximum(lam, 0.0)
    return (U * np.sqrt(lam)) @ U.T


@dataclass(frozen=True)
class CertReport:
    """Eigenvalue and margin evidence for one certificate."""

    cond1_value: float          # contraction eigenvalue, must be <= kappa
    cond2_value: float          # smallest eigenvalue of Q, must be >= c
    kappa: float
    c: float
    safety_margins: list[float]  # a_i Q a_i'
    input_margins: list[float]   # b_j K Q K' b_j'
    passed: bool
    tolerance: float
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def certify_rsi(sys: LinearSystem, S: SafetySet, U: InputSet,
                cert: RsiCertificate, tol: float = DEFAULT_CERT_TOL) -> CertReport:
    """Analytic pass/fail of a certificate against a known system."""
    Q = 0.5 * (cert.Q + cert.Q.T)
    lam_q = np.linalg.eigvalsh(Q)
    if lam_q.min() <= 0.0:
        raise ValueError(f"certificate Q is not positive definite (lambda_min={lam_q.min():.3e})")

    notes: list[str] = []
    try:
        c = contraction_floor(cert.gamma, cert.kappa)
        kappa_ok = True
    except KappaDomainError as exc:
        c = np.inf
        kappa_ok = False
        notes.append(str(exc))

    F = sys.A + sys.B @ cert.K
    Qs = _sym_sqrt(Q)
    inner = Qs @ F.T @ np.linalg.solve(Q, F @ Qs)
    cond1 = float(np.linalg.eigvalsh(0.5 * (inner + inner.T)).max())
    cond2 = float(lam_q.min())

    safety = [float(a @ Q @ a) for a in S.a_rows]
    KQK = cert.K @ Q @ cert.K.T
    inputs = [float(b @ KQK @ b) for b in U.b_rows]

    passed = (
        kappa_ok
        and cond1 <= cert.kappa + tol
        and cond2 >= c - tol
        and all(v <= 1.0 + tol for v in safety)
        and all(v <= 1.0 + tol for v in inputs)
    )
    return CertReport(
        cond1_value=cond1,
        cond2_value=cond2,
        kappa=cert.kappa,
        c=c if np.isfinite(c) else -1.0,
        safety_margins=safety,
        input_margins=inputs,
        passed=passed,
        tolerance=tol,
        notes=notes,
    )


@dataclass(frozen=True)
class FalsifyReport:
    worst_margin: float
    worst_state: np.ndarray
    worst_disturbance: np.ndarray
    n_samples: int


def one_step_falsify(sys: LinearSystem, cert: RsiCertificate, n_samples: int,
                     rng: np.random.Generator) -> FalsifyReport:
    """Randomized search for a one-step exit from the ellipsoid.

    States are drawn on the ellipsoid boundary (the quadratic form's worst
    case); disturbances alternate between the sphere of radius sqrt(gamma)
    and its interior.  Returns the largest post-step value of
    x+' Q^{-1} x+ found; a sound certificate keeps it at or below one.
    """
    Q = 0.5 * (cert.Q + cert.Q.T)
    n = Q.shape[0]
    Qs = _sym_sqrt(Q)
    cho = scipy.linalg.cho_factor(Q, lower=True)
    F = sys.A + sys.B @ cert.K
    radius = float(np.sqrt(cert.gamma))

    worst = -np.inf
    worst_x = np.zeros(n)
    worst_d = np.zeros(n)
    batch = 4096
    done = 0
    while done < n_samples:
        k = min(batch, n_samples - done)
        G = rng.standard_normal((k, n))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        X = G @ Qs  # rows on the ellipsoid boundary
        if radius > 0.0:
            D = rng.standard_normal((k, n))
            D /= np.linalg.norm(D, axis=1, keepdims=True)
            # even rows stay on the sphere, odd rows move into the interior
            scale = np.ones(k)
            if k >= 2:
                scale[1::2] = rng.random(k // 2) ** (1.0 / n)
            D *= radius * scale[:, None]
        else:
            D = np.zeros((k, n))
        post = X @ F.T + D
        vals = np.einsum("ij,ij->i", post, scipy.linalg.cho_solve(cho, post.T).T)
        idx = int(np.argmax(vals))
        if vals[idx] > worst:
            worst = float(vals[idx])
            worst_x = X[idx].copy()
            worst_d = D[idx].copy()
        done += k
    return FalsifyReport(worst_margin=worst, worst_state=worst_x,
                         worst_disturbance=worst_d, n_samples=n_samples)


def sample_in_ellipsoid(Q: np.ndarray, rng: np.random.Generator,
                        mode: str = "volume") -> np.ndarray:
    """One sample from {x : x' Q^{-1} x <= 1}.

    mode='volume': uniform over the solid ellipsoid (linear image of the
    uniform ball).  mode='boundary': uniform direction pushed through Q^{1/2}
    and normalized in the Q^{-1} metric, landing exactly on the shell.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    lam = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if lam.min() <= 0.0:
        raise ValueError(f"shape matrix must be positive definite, lambda_min={lam.min():.3e}")
    Qs = _sym_sqrt(Q)
    g = rng.standard_normal(n)
    g /= np.linalg.norm(g)
    if mode == "boundary":
        return Qs @ g
    if mode == "volume":
        return Qs @ (g * rng.random() ** (1.0 / n))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class MonteCarloReport:
    """Closed-loop sampling outcome; counts are per trajectory and category."""

    n_traj: int
    horizon: int
    ellipsoid_exits: int
    safety_exits: int
    input_violations: int
    certificate_passed: bool
    certificate_gamma: float = 0.0
    disturbance_gamma: float = 0.0
    trajectories: list[Trajectory] = field(default_factory=list)
    tolerance: float = DEFAULT_CERT_TOL

    @property
    def clean(self) -> bool:
        return (self.ellipsoid_exits | self.safety_exits | self.input_violations) == 0

    @property
    def gamma_matches_certificate(self) -> bool:
        """False when the simulated disturbance exceeds what was certified;
        violations in that regime indict the mismatch, not the certificate."""
        return self.disturbance_gamma <= self.certificate_gamma * (1.0 + 1e-12)

    def summary(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "horizon": self.horizon,
            "violations": self.ellipsoid_exits,
            "safety_exits": self.safety_exits,
            "input_violations": self.input_violations,
            "certificate_passed": self.certificate_passed,
            "certificate_gamma": self.certificate_gamma,
            "disturbance_gamma": self.disturbance_gamma,
            "gamma_matches_certificate": self.gamma_matches_certificate,
        }


def monte_carlo_invariance(sys: LinearSystem, cert: RsiCertificate,
                           S: SafetySet, U: InputSet, n_traj: int, horizon: int,
                           dm: DisturbanceModel, rng: np.random.Generator,
                           tol: float = DEFAULT_CERT_TOL,
                           keep_trajectories: bool = True) -> MonteCarloReport:
    """Simulate the closed loop from uniform starts inside the ellipsoid.

    Each trajectory runs on its own spawned generator, so the merged counts
    do not depend on execution order.  A trajectory is counted at most once
    per category: leaving the ellipsoid, leaving the safety polyhedron, or
    exceeding an input bound.
    """
    report = certify_rsi(sys, S, U, cert, tol)
    if not report.passed:
        warnings.warn("certificate fails analytic certification; Monte-Carlo "
                      "counts describe an uncertified controller", stacklevel=2)
    Q = 0.5 * (cert.Q + cert.Q.T)
    cho = scipy.linalg.cho_factor(Q, lower=True)
    streams = rng.spawn(n_traj)

    ell = saf = inp = 0
    kept: list[Trajectory] = []
    for child in streams:
        x = sample_in_ellipsoid(Q, child, mode="volume")
        states = np.zeros((horizon + 1, sys.n))
        inputs = np.zeros((horizon, sys.m))
        dists = np.zeros((horizon, sys.n))
        states[0] = x
        hit_ell = hit_saf = hit_inp = False
        for k in range(horizon):
            u = cert.K @ states[k]
            d = sample_disturbance(dm, sys.n, child)
            inputs[k] = u
            dists[k] = d
            states[k + 1] = sys.A @ states[k] + sys.B @ u + d
            if not hit_inp and np.max(U.b_rows @ u) > 1.0 + tol:
                hit_inp = True
            xk = states[k + 1]
            if not hit_saf and np.max(S.a_rows @ xk) > 1.0 + tol:
                hit_saf = True
            if not hit_ell and float(xk @ scipy.linalg.cho_solve(cho, xk)) > 1.0 + tol:
                hit_ell = True
        ell += hit_ell
        saf += hit_saf
        inp += hit_inp
        if keep_trajectories:
            kept.append(Trajectory(states=states, inputs=inputs, disturbances=dists))
    return MonteCarloReport(
        n_traj=n_traj,
        horizon=horizon,
        ellipsoid_exits=ell,
        safety_exits=saf,
        input_violations=inp,
        certificate_passed=report.passed,
        certificate_gamma=cert.gamma,
        disturbance_gamma=dm.gamma,
        trajectories=kept,
        tolerance=tol,
    )


def project_ellipsoid(Q: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Shadow of {x' Q^{-1} x <= 1} on two coordinates (0-based indices).

    The projection is again an ellipse and its shape matrix is simply the
    2 x 2 submatrix of Q on those coordinates.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    i, j = dims
    n = Q.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"dims {dims} out of range for n={n}")
    if i == j:
        raise ValueError("projection needs two distinct coordinates")
    idx = np.array([i, j])
    return Q[np.ix_(idx, idx)]


def ellipse_boundary_points(Q2: np.ndarray, n_points: int = 256) -> np.ndarray:
    """Closed polyline tracing {y : y' Q2^{-1} y = 1}, shape (n_points, 2)."""
    Q2 = np.atleast_2d(np.asarray(Q2, dtype=float))
    if Q2.shape != (2, 2):
        raise ValueError(f"need a 2x2 shape matrix, got {Q2.shape}")
    theta = np.linspace(0.0, 2.0 * np.pi, n_points)
    circle = np.vstack([np.cos(theta), np.sin(theta)])
    return (_sym_sqrt(Q2) @ circle).T
