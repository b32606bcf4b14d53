import json

import numpy as np
import pytest

from rsisynth.model import (
    DimensionError,
    DisturbanceModel,
    InputSet,
    LinearSystem,
    SafetySet,
    contains,
    load_system_spec,
    pendulum_spec,
    sample_disturbance,
    simulate,
    step,
    write_trajectory_csv,
)

ORTHANT_MASS = 5.0 / 32.0


# -- step -------------------------------------------------------------------
def test_step_reproduces_input_column_from_origin():
    spec = pendulum_spec()
    x1 = step(spec.system, np.zeros(4), [1.0], np.zeros(4))
    assert np.allclose(x1, [0.0002, 0.0200, -0.0004, -0.0429], atol=0.0)


def test_step_zero_everything_is_zero():
    sys = LinearSystem(A=np.eye(3) * 0.7, B=np.ones((3, 2)))
    assert np.array_equal(step(sys, np.zeros(3), np.zeros(2), np.zeros(3)), np.zeros(3))


def test_step_scalar_arithmetic():
    sys = LinearSystem(A=[[2.0]], B=[[1.0]])
    assert step(sys, [3.0], [1.0], [0.5]) == pytest.approx([7.5])


def test_step_dimension_mismatch():
    sys = LinearSystem(A=[[2.0]], B=[[1.0]])
    with pytest.raises(DimensionError):
        step(sys, [1.0, 2.0], [0.0], [0.0])
    with pytest.raises(DimensionError):
        step(sys, [1.0], [0.0, 1.0], [0.0])


# -- disturbance sampling ---------------------------------------------------
def test_zero_density_returns_origin():
    dm = DisturbanceModel(gamma=0.3, density="zero", seed=1)
    assert np.array_equal(sample_disturbance(dm, 5), np.zeros(5))


def test_uniform_samples_stay_in_ball():
    dm = DisturbanceModel(gamma=0.04, density="uniform", seed=3)
    rng = dm.rng()
    draws = np.array([sample_disturbance(dm, 3, rng) for _ in range(100_000)])
    assert np.all(np.einsum("ij,ij->i", draws, draws) <= 0.04 + 1e-15)
    assert np.all(np.linalg.norm(draws, axis=1) <= 0.2 + 1e-12)


def test_orthant_samples_stay_in_ball_and_hit_orthant_mass():
    gamma = 1e-6
    dm = DisturbanceModel(gamma=gamma, density="orthant", seed=7)
    rng = dm.rng()
    n_draws = 200_000
    draws = np.array([sample_disturbance(dm, 4, rng) for _ in range(n_draws)])
    assert np.all(np.einsum("ij,ij->i", draws, draws) <= gamma * (1 + 1e-12))
    frac = np.mean(np.all(draws >= 0.0, axis=1))
    sigma = np.sqrt(ORTHANT_MASS * (1 - ORTHANT_MASS) / n_draws)
    assert abs(frac - ORTHANT_MASS) < 4 * sigma


def test_orthant_density_requires_dimension_four():
    dm = DisturbanceModel(gamma=1.0, density="orthant", seed=0)
    with pytest.raises(ValueError, match="n=4"):
        sample_disturbance(dm, 3)


def test_negative_gamma_rejected():
    with pytest.raises(ValueError):
        DisturbanceModel(gamma=-1.0, density="uniform")


def test_sampling_deterministic_under_seed():
    dm = DisturbanceModel(gamma=0.5, density="uniform", seed=42)
    a = [sample_disturbance(dm, 4, dm.rng()) for _ in range(5)]
    b = [sample_disturbance(dm, 4, dm.rng()) for _ in range(5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


# -- simulate ---------------------------------------------------------------
def test_simulate_geometric_decay():
    sys = LinearSystem(A=[[0.5]], B=[[0.0]])
    dm = DisturbanceModel(gamma=0.0, density="zero")
    traj = simulate(sys, [1.0], np.zeros((3, 1)), dm, horizon=3)
    assert np.allclose(traj.states.ravel(), [1.0, 0.5, 0.25, 0.125])


def test_simulate_pendulum_one_step_hand_check():
    spec = pendulum_spec()
    dm = DisturbanceModel(gamma=0.0, density="zero")
    K = np.zeros((1, 4))
    traj = simulate(spec.system, [0.0, 0.0, 0.01, 0.0], K, dm, horizon=1)
    # A row 3: 1.0042 * 0.01; A row 4: 0.4208 * 0.01
    assert traj.states[1] == pytest.approx([0.0, 0.0, 0.010042, 0.004208], abs=1e-15)


def test_simulate_feedback_then_replay_is_identical(pendulum):
    K = np.array([[1.0, 0.5, -2.0, 0.3]])
    dm = DisturbanceModel(gamma=0.0, density="zero")
    run = simulate(pendulum.system, [0.1, 0.0, 0.01, 0.0], K, dm, horizon=20)
    replay = simulate(pendulum.system, [0.1, 0.0, 0.01, 0.0], run.inputs, dm, horizon=20)
    assert np.array_equal(run.states, replay.states)


def test_simulate_records_replayable_disturbances(pendulum):
    dm = DisturbanceModel(gamma=1e-6, density="orthant", seed=5)
    K = np.zeros((1, 4))
    traj = simulate(pendulum.system, np.zeros(4), K, dm, horizon=50)
    x = traj.states[0]
    for k in range(traj.horizon):
        x = step(pendulum.system, x, traj.inputs[k], traj.disturbances[k])
        assert np.array_equal(x, traj.states[k + 1])


def test_simulate_rejects_short_input_sequence():
    sys = LinearSystem(A=[[0.5]], B=[[1.0]])
    dm = DisturbanceModel(gamma=0.0, density="zero")
    with pytest.raises(DimensionError):
        simulate(sys, [1.0], np.zeros((2, 1)), dm, horizon=5)


# -- contains ---------------------------------------------------------------
def test_contains_pendulum_cart_near_bound(pendulum):
    inside, margin = contains(pendulum.safety, [0.99, 0.0, 0.0, 0.0])
    assert inside and margin == pytest.approx(0.99)


def test_contains_origin_measures_zero(pendulum):
    inside, margin = contains(pendulum.safety, np.zeros(4))
    assert inside and margin == 0.0


def test_contains_input_overrun(pendulum):
    inside, margin = contains(pendulum.inputs, [5.1])
    assert not inside and margin == pytest.approx(1.02)


# -- spec loading and CSV ---------------------------------------------------
def test_load_system_spec_roundtrip(tmp_path):
    doc = {
        "A": [[0.5]],
        "B": [[1.0]],
        "safety_a": [[1.0], [-1.0]],
        "input_b": [[1.0], [-1.0]],
        "gamma": 1e-4,
        "density": "uniform",
        "seed": 9,
        "note": "toy",
    }
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(doc))
    spec = load_system_spec(path)
    assert spec.system.n == 1 and spec.disturbance.seed == 9
    assert spec.metadata == {"note": "toy"}


def test_load_system_spec_missing_key():
    with pytest.raises(KeyError, match="gamma"):
        load_system_spec({"A": [[1]], "B": [[1]], "safety_a": [[1]], "input_b": [[1]]})


def test_trajectory_csv_header(tmp_path):
    sys = LinearSystem(A=[[0.5]], B=[[1.0]])
    dm = DisturbanceModel(gamma=0.0, density="zero")
    traj = simulate(sys, [1.0], np.zeros((2, 1)), dm, horizon=2)
    out = tmp_path / "traj.csv"
    write_trajectory_csv(traj, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "k,x1,u1,d1"
    assert len(lines) == 4  # header + H+1 rows


def test_set_types_reject_zero_rows():
    with pytest.raises(ValueError):
        SafetySet(a_rows=[[0.0, 0.0]])
    with pytest.raises(ValueError):
        InputSet(b_rows=[[0.0]])
