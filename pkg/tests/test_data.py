import numpy as np
import pytest

from rsisynth.data import (
    Dataset,
    InsufficientExcitationError,
    check_pe,
    collect,
    extend_until_pe,
    hankel,
    read_dataset_csv,
    uniform_input_sampler,
    write_dataset_csv,
)
from rsisynth.model import DisturbanceModel, LinearSystem, DimensionError


def scalar_system():
    return LinearSystem(A=[[0.5]], B=[[1.0]])


def test_collect_noiseless_scalar_recursion():
    ds = collect(scalar_system(), [1.0], [[0.0, 0.0]], DisturbanceModel(gamma=0, density="zero"))
    assert np.allclose(ds.X0, [[1.0, 0.5]])
    assert np.allclose(ds.X1, [[0.5, 0.25]])
    assert np.allclose(ds.U0, [[0.0, 0.0]])


def test_collect_noiseless_residual_identity(pendulum):
    rng = np.random.default_rng(0)
    inputs = rng.uniform(-1, 1, size=(1, 30))
    ds = collect(pendulum.system, np.zeros(4), inputs,
                 DisturbanceModel(gamma=0, density="zero"))
    for p in range(ds.N):
        x0 = np.ascontiguousarray(ds.X0[:, p])  # columns were contiguous when produced
        u0 = np.ascontiguousarray(ds.U0[:, p])
        # same grouping as the generating recursion, so the identity is exact
        resid = ds.X1[:, p] - (pendulum.system.A @ x0 + pendulum.system.B @ u0)
        assert np.linalg.norm(resid) == 0.0


def test_collect_residuals_inside_disturbance_ball(pendulum):
    dm = DisturbanceModel(gamma=1e-6, density="orthant", seed=3)
    rng = dm.rng()
    inputs = rng.uniform(-1, 1, size=(1, 200))
    ds = collect(pendulum.system, np.zeros(4), inputs, dm, rng=rng)
    resid = ds.X1 - pendulum.system.A @ ds.X0 - pendulum.system.B @ ds.U0
    assert np.all(np.einsum("ij,ij->j", resid, resid) <= 1e-6 * (1 + 1e-12))


# -- hankel -----------------------------------------------------------------
def test_hankel_direct_layout():
    H = hankel([[1.0, 2.0, 3.0, 4.0, 5.0]], depth=2)
    assert np.array_equal(H, [[1, 2, 3, 4], [2, 3, 4, 5]])


def test_hankel_case_study_shape():
    U0 = np.arange(107.0).reshape(1, -1)
    H = hankel(U0, depth=5)
    assert H.shape == (5, 103)


def test_hankel_zero_input_rank_zero():
    H = hankel(np.zeros((1, 20)), depth=3)
    assert np.linalg.matrix_rank(H) == 0


def test_hankel_too_short():
    with pytest.raises(DimensionError):
        hankel(np.ones((1, 3)), depth=4)


# -- check_pe ---------------------------------------------------------------
def test_check_pe_zero_input_fails(pendulum):
    dm = DisturbanceModel(gamma=1e-6, density="orthant", seed=1)
    ds = collect(pendulum.system, np.zeros(4), np.zeros((1, 40)), dm)
    rep = check_pe(ds)
    assert rep.hankel_rank == 0
    assert not rep.pe_satisfied
    assert not rep.feasible_set_bounded


def test_check_pe_short_data_rank_bounded_by_columns(pendulum):
    dm = DisturbanceModel(gamma=1e-6, density="orthant", seed=1)
    rng = dm.rng()
    ds = collect(pendulum.system, np.zeros(4), rng.uniform(-1, 1, (1, 3)), dm, rng=rng)
    rep = check_pe(ds)
    assert rep.rank_xu <= 3 < rep.required_xu
    assert not rep.feasible_set_bounded


def test_check_pe_shipped_pendulum_dataset(pendulum_dataset):
    rep = check_pe(pendulum_dataset)
    assert rep.rank_xu == rep.required_xu == 5
    assert rep.hankel_rank == rep.required_hankel == 5
    assert rep.pe_satisfied


def test_check_pe_monotone_in_prefix_length(pendulum_dataset):
    ds = pendulum_dataset
    satisfied_from = None
    for N in range(1, ds.N + 1, 7):
        rep = check_pe(Dataset(X0=ds.X0[:, :N], X1=ds.X1[:, :N], U0=ds.U0[:, :N]))
        if satisfied_from is not None:
            assert rep.pe_satisfied, f"rank dropped at prefix {N}"
        elif rep.pe_satisfied:
            satisfied_from = N
    assert satisfied_from is not None


def test_bounded_iff_full_rank_on_random_data():
    rng = np.random.default_rng(12)
    n, m = 3, 2
    for trial in range(50):
        full = trial % 2 == 0
        if full:
            X0 = rng.standard_normal((n, 12))
            U0 = rng.standard_normal((m, 12))
        else:
            base = rng.standard_normal((n + m, 2))
            mix = base @ rng.standard_normal((2, 12))
            X0, U0 = mix[:n], mix[n:]
        ds = Dataset(X0=X0, X1=rng.standard_normal((n, 12)), U0=U0)
        rep = check_pe(ds)
        assert rep.feasible_set_bounded == (rep.rank_xu == n + m)
        assert rep.feasible_set_bounded == full


# -- extend_until_pe --------------------------------------------------------
def test_extend_until_pe_scalar_terminates_quickly():
    dm = DisturbanceModel(gamma=1e-4, density="uniform", seed=5)
    ds, rep = extend_until_pe(
        scalar_system(), [0.0], dm, uniform_input_sampler(1.0),
        n_start=1, n_max=20,
    )
    assert rep.pe_satisfied
    assert ds.N <= 4  # (m+1)(n+1) for n = m = 1


def test_extend_until_pe_zero_sampler_fails():
    dm = DisturbanceModel(gamma=0.0, density="zero")

    def silent(rng, k, m):
        return np.zeros(m)

    with pytest.raises(InsufficientExcitationError) as err:
        extend_until_pe(scalar_system(), [0.0], dm, silent, n_start=1, n_max=15)
    assert err.value.report.hankel_rank == 0
    assert err.value.dataset.N == 15


def test_extend_until_pe_pendulum_within_budget(pendulum):
    dm = pendulum.disturbance
    ds, rep = extend_until_pe(
        pendulum.system, np.zeros(4), dm, uniform_input_sampler(1.0),
        n_start=10, n_max=200,
    )
    assert rep.pe_satisfied and ds.N <= 200


def test_extend_grows_one_trajectory(pendulum):
    # X1 column p must equal X0 column p+1: a single never-restarted run
    dm = pendulum.disturbance
    ds, _ = extend_until_pe(
        pendulum.system, np.zeros(4), dm, uniform_input_sampler(0.5),
        n_start=3, n_max=60,
    )
    assert np.array_equal(ds.X1[:, :-1], ds.X0[:, 1:])


# -- CSV --------------------------------------------------------------------
def test_dataset_csv_roundtrip(tmp_path, pendulum_dataset):
    path = tmp_path / "d.csv"
    write_dataset_csv(pendulum_dataset, path)
    back = read_dataset_csv(path)
    assert np.array_equal(back.X0, pendulum_dataset.X0)
    assert np.array_equal(back.X1, pendulum_dataset.X1)
    assert np.array_equal(back.U0, pendulum_dataset.U0)
    header = path.read_text().splitlines()[0]
    assert header == "p,x0_1,x0_2,x0_3,x0_4,x1_1,x1_2,x1_3,x1_4,u_1"
