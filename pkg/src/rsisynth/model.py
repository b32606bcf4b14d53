"""Discrete-time linear plant, constraint sets, and bounded-disturbance models.

The plant is x(k+1) = A x(k) + B u(k) + d(k) with the disturbance confined to
the ball {d : d'd <= gamma}.  Safety and input sets are intersections of
half-spaces a_i x <= 1 and b_j u <= 1, so the origin is always strictly
interior.  Everything here is a plain value object; sampling takes an explicit
numpy Generator so Monte-Carlo callers control their own substreams.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "LinearSystem",
    "SafetySet",
    "InputSet",
    "DisturbanceModel",
    "Trajectory",
    "SystemSpec",
    "DimensionError",
    "step",
    "sample_disturbance",
    "simulate",
    "contains",
    "load_system_spec",
    "pendulum_spec",
    "write_trajectory_csv",
]

# Fraction of the radius-sqrt(gamma) ball's mass sitting on the positive
# orthant under the two-level density (5/32); the complement gets 27/32.
ORTHANT_MASS = 5.0 / 32.0
# Acceptance probability for non-orthant proposals in the rejection sampler,
# equal to the ratio of the two density levels (9/5) / (25/5).
_REJECT_KEEP = 9.0 / 25.0


class DimensionError(ValueError):
    """Shapes of system matrices, states, or inputs do not line up."""


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """State map A (n x n) and input map B (n x m)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(
                f"B has {B.shape[0]} rows but A is {A.shape[0]} x {A.shape[1]}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class SafetySet:
    """Polyhedron {x : a_i x <= 1 for every row a_i}, origin interior."""

    a_rows: np.ndarray

    def __post_init__(self):
        rows = _as_matrix(self.a_rows, "a_rows")
        if np.any(np.all(rows == 0.0, axis=1)):
            raise ValueError("safety set contains an all-zero row")
        object.__setattr__(self, "a_rows", rows)

    @property
    def n(self) -> int:
        return self.a_rows.shape[1]

    @property
    def n_rows(self) -> int:
        return self.a_rows.shape[0]


@dataclass(frozen=True)
class InputSet:
    """Polyhedron {u : b_j u <= 1 for every row b_j}."""

    b_rows: np.ndarray

    def __post_init__(self):
        rows = _as_matrix(self.b_rows, "b_rows")
        if np.any(np.all(rows == 0.0, axis=1)):
            raise ValueError("input set contains an all-zero row")
        object.__setattr__(self, "b_rows", rows)

    @property
    def m(self) -> int:
        return self.b_rows.shape[1]

    @property
    def n_rows(self) -> int:
        return self.b_rows.shape[0]


@dataclass(frozen=True)
class DisturbanceModel:
    """Disturbance law on the ball {d : d'd <= gamma}.

    density:
      'uniform'  uniform over the ball
      'orthant'  two-level density favouring the positive orthant (n = 4 only):
                 5/(pi^2 gamma^2) on the orthant, 9/(5 pi^2 gamma^2) elsewhere
      'zero'     degenerate at the origin
    """

    gamma: float
    density: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.density not in ("uniform", "orthant", "zero"):
            raise ValueError(f"unknown density {self.density!r}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class Trajectory:
    """States x(0..H), inputs u(0..H-1), optional recorded disturbances."""

    states: np.ndarray       # (H+1, n)
    inputs: np.ndarray       # (H, m)
    disturbances: Optional[np.ndarray] = None  # (H, n)

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if states.shape[0] != inputs.shape[0] + 1:
            raise DimensionError(
                f"{states.shape[0]} states need {states.shape[0] - 1} inputs, "
                f"got {inputs.shape[0]}"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        if self.disturbances is not None:
            d = np.atleast_2d(np.asarray(self.disturbances, dtype=float))
            if d.shape != (inputs.shape[0], states.shape[1]):
                raise DimensionError(
                    f"disturbance record shape {d.shape} does not match "
                    f"horizon {inputs.shape[0]} and state dim {states.shape[1]}"
                )
            object.__setattr__(self, "disturbances", d)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class SystemSpec:
    """System, sets, and disturbance model bundled as loaded from JSON."""

    system: LinearSystem
    safety: SafetySet
    inputs: InputSet
    disturbance: DisturbanceModel
    metadata: dict = field(default_factory=dict)


def step(sys: LinearSystem, x, u, d) -> np.ndarray:
    """One step of the recursion: A x + B u + d."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise DimensionError(f"state has dim {x.shape[0]}, system has n={sys.n}")
    if u.shape[0] != sys.m:
        raise DimensionError(f"input has dim {u.shape[0]}, system has m={sys.m}")
    if d.shape[0] != sys.n:
        raise DimensionError(f"disturbance has dim {d.shape[0]}, system has n={sys.n}")
    return sys.A @ x + sys.B @ u + d


def _uniform_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    # Normal direction + radial inverse-CDF gives the exact uniform law on the
    # ball without rejection.
    v = rng.standard_normal(n)
    norm = np.linalg.norm(v)
    while norm == 0.0:  # pragma: no cover - probability zero
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
    return (v / norm) * radius * rng.random() ** (1.0 / n)


def sample_disturbance(
    dm: DisturbanceModel, n: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Draw one disturbance vector; always satisfies d'd <= gamma.

    With no generator supplied a fresh one is seeded from ``dm.seed``, so
    repeated single-shot calls return the same value; pass a shared generator
    to stream samples.
    """
    if rng is None:
        rng = dm.rng()
    if dm.density == "zero":
        return np.zeros(n)
    radius = float(np.sqrt(dm.gamma))
    if dm.density == "uniform":
        return _uniform_ball(rng, n, radius)
    # orthant: rejection from the uniform law, keeping positive-orthant points
    # always and others with probability 9/25 (the density level ratio).
    if n != 4:
        raise ValueError(
            f"the orthant-weighted density is defined for n=4 only, got n={n}"
        )
    while True:
        d = _uniform_ball(rng, n, radius)
        if np.all(d >= 0.0) or rng.random() < _REJECT_KEEP:
            return d


Policy = Union[np.ndarray, Sequence]


def simulate(
    sys: LinearSystem,
    x0,
    policy: Policy,
    dm: DisturbanceModel,
    horizon: int,
    rng: Optional[np.random.Generator] = None,
) -> Trajectory:
    """Roll the closed or open loop forward and record everything.

    ``policy`` is either a feedback gain K (m x n: u = K x) or an explicit
    input sequence with at least ``horizon`` rows (H x m).  Disturbances are
    drawn from ``dm`` and recorded so the run can be replayed exactly.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise DimensionError(f"x0 has dim {x0.shape[0]}, system has n={sys.n}")
    if rng is None:
        rng = dm.rng()

    policy_arr = np.asarray(policy, dtype=float)
    feedback = policy_arr.ndim == 2 and policy_arr.shape == (sys.m, sys.n)
    if not feedback:
        policy_arr = np.atleast_2d(policy_arr)
        if policy_arr.shape == (sys.m, 1) and sys.n != 1:
            policy_arr = policy_arr.T
        if policy_arr.shape[1] != sys.m:
            raise DimensionError(
                f"input sequence needs {sys.m} columns, got {policy_arr.shape}"
            )
        if policy_arr.shape[0] < horizon:
            raise DimensionError(
                f"input sequence has {policy_arr.shape[0]} rows, horizon is {horizon}"
            )

    states = np.zeros((horizon + 1, sys.n))
    inputs = np.zeros((horizon, sys.m))
    dists = np.zeros((horizon, sys.n))
    states[0] = x0
    for k in range(horizon):
        u = policy_arr @ states[k] if feedback else policy_arr[k]
        d = sample_disturbance(dm, sys.n, rng)
        inputs[k] = u
        dists[k] = d
        states[k + 1] = step(sys, states[k], u, d)
    return Trajectory(states=states, inputs=inputs, disturbances=dists)


def contains(setlike: Union[SafetySet, InputSet], point) -> tuple[bool, float]:
    """Membership test returning (inside, worst row margin max_i a_i x)."""
    rows = setlike.a_rows if isinstance(setlike, SafetySet) else setlike.b_rows
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.shape[0] != rows.shape[1]:
        raise DimensionError(
            f"point has dim {point.shape[0]}, set lives in dim {rows.shape[1]}"
        )
    margins = rows @ point
    worst = float(margins.max())
    return worst <= 1.0, worst


_DENSITY_ALIASES = {"uniform": "uniform", "orthant": "orthant", "zero": "zero"}


def load_system_spec(path_or_dict) -> SystemSpec:
    """Load the JSON system document.

    Expected keys: A, B, safety_a, input_b, gamma, density, seed.  Unknown
    keys are preserved in ``metadata``.
    """
    if isinstance(path_or_dict, dict):
        doc = path_or_dict
    else:
        with open(path_or_dict) as fh:
            doc = json.load(fh)
    missing = [k for k in ("A", "B", "safety_a", "input_b", "gamma") if k not in doc]
    if missing:
        raise KeyError(f"system spec is missing keys: {', '.join(missing)}")
    density = _DENSITY_ALIASES.get(str(doc.get("density", "uniform")).lower())
    if density is None:
        raise ValueError(f"unknown density {doc.get('density')!r} in system spec")
    system = LinearSystem(A=np.array(doc["A"]), B=np.array(doc["B"]))
    safety = SafetySet(a_rows=np.array(doc["safety_a"]))
    inputs = InputSet(b_rows=np.array(doc["input_b"]))
    if safety.n != system.n:
        raise DimensionError(
            f"safety rows have dim {safety.n}, system has n={system.n}"
        )
    if inputs.m != system.m:
        raise DimensionError(
            f"input rows have dim {inputs.m}, system has m={system.m}"
        )
    dm = DisturbanceModel(
        gamma=float(doc["gamma"]),
        density=density,
        seed=int(doc.get("seed", 0)),
    )
    known = {"A", "B", "safety_a", "input_b", "gamma", "density", "seed"}
    meta = {k: v for k, v in doc.items() if k not in known}
    return SystemSpec(system=system, safety=safety, inputs=inputs, disturbance=dm,
                      metadata=meta)


def pendulum_spec(seed: int = 11) -> SystemSpec:
    """Shipped 4-state inverted-pendulum-on-cart benchmark.

    Discretized at tau = 0.02 s.  States: cart position, cart velocity,
    pendulum angle, pendulum angular rate.  Safety keeps |position| <= 1 m and
    |angle| <= pi/12 rad; the cart acceleration input is limited to [-5, 5].
    The disturbance ball radius is 0.05 * tau, i.e. gamma = 1e-6, sampled with
    the non-symmetric orthant-weighted density.
    """
    tau = 0.02
    A = np.array(
        [
            [1.0, 0.02, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0042, 0.0194],
            [0.0, 0.0, 0.4208, 0.9466],
        ]
    )
    B = np.array([[0.0002], [0.0200], [-0.0004], [-0.0429]])
    angle_cap = np.pi / 12.0
    safety = SafetySet(
        a_rows=np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 1.0 / angle_cap, 0.0],
                [0.0, 0.0, -1.0 / angle_cap, 0.0],
            ]
        )
    )
    inputs = InputSet(b_rows=np.array([[0.2], [-0.2]]))
    gamma = (0.05 * tau) ** 2
    dm = DisturbanceModel(gamma=gamma, density="orthant", seed=seed)
    return SystemSpec(
        system=LinearSystem(A=A, B=B),
        safety=safety,
        inputs=inputs,
        disturbance=dm,
        metadata={"name": "pendulum", "tau": tau},
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header k,x1..xn,u1..um,d1..dn; u/d are blank on the final row."""
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    header = (
        ["k"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"d{i + 1}" for i in range(n)]
    )
    has_d = traj.disturbances is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(traj.horizon + 1):
            row = [k] + [repr(float(v)) for v in traj.states[k]]
            if k < traj.horizon:
                row += [repr(float(v)) for v in traj.inputs[k]]
                row += [repr(float(v)) for v in traj.disturbances[k]] if has_d else [""] * n
            else:
                row += [""] * (m + n)
            writer.writerow(row)
