import numpy as np
import pytest
import scipy.linalg

from rsisynth.model import DisturbanceModel, InputSet, LinearSystem, SafetySet
from rsisynth.synth import RsiCertificate
from rsisynth.verify import (
    certify_rsi,
    ellipse_boundary_points,
    monte_carlo_invariance,
    one_step_falsify,
    project_ellipsoid,
    sample_in_ellipsoid,
)


def boxes(n, m):
    S = SafetySet(a_rows=np.vstack([np.eye(n), -np.eye(n)]))
    U = InputSet(b_rows=np.vstack([np.eye(m), -np.eye(m)]))
    return S, U


def make_cert(Q, K, kappa, gamma):
    Q = np.atleast_2d(np.asarray(Q, float))
    from rsisynth.synth import contraction_floor
    return RsiCertificate(Q=Q, K=np.atleast_2d(np.asarray(K, float)),
                          kappa=kappa, gamma=gamma,
                          c=contraction_floor(gamma, kappa) if kappa < 1 or gamma == 0 else 0.0,
                          provenance={"kind": "test"})


# -- certify ------------------------------------------------------------------
def test_certify_diagonal_contraction():
    sys = LinearSystem(A=0.5 * np.eye(2), B=np.eye(2))
    S, U = boxes(2, 2)
    cert = make_cert(np.eye(2), np.zeros((2, 2)), kappa=0.25, gamma=0.0)
    rep = certify_rsi(sys, S, U, cert)
    assert rep.passed
    assert rep.cond1_value == pytest.approx(0.25, abs=1e-12)


def test_certify_floor_arithmetic():
    sys = LinearSystem(A=0.4 * np.eye(2), B=np.eye(2))
    S, U = boxes(2, 2)
    cert = make_cert(np.eye(2), np.zeros((2, 2)), kappa=0.25, gamma=0.04)
    rep = certify_rsi(sys, S, U, cert)
    # floor c = 0.04 / (1 - 0.5)^2 = 0.16 <= lambda_min(Q) = 1
    assert rep.c == pytest.approx(0.16)
    assert rep.cond2_value == pytest.approx(1.0)
    assert rep.passed


def test_certify_kappa_one_with_noise_fails_with_note():
    sys = LinearSystem(A=0.5 * np.eye(2), B=np.eye(2))
    S, U = boxes(2, 2)
    cert = make_cert(np.eye(2), np.zeros((2, 2)), kappa=1.0, gamma=1e-6)
    rep = certify_rsi(sys, S, U, cert)
    assert not rep.passed
    assert rep.notes and "gamma" in rep.notes[0]


def test_certify_orthogonal_recoordinization_invariance():
    rng = np.random.default_rng(8)
    sys = LinearSystem(A=rng.standard_normal((3, 3)) * 0.3, B=rng.standard_normal((3, 1)))
    S, U = boxes(3, 1)
    Q = np.diag([1.0, 2.0, 0.5])
    K = rng.standard_normal((1, 3)) * 0.1
    cert = make_cert(Q, K, kappa=0.9, gamma=1e-4)
    base = certify_rsi(sys, S, U, cert)
    T, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    sysT = LinearSystem(A=T @ sys.A @ T.T, B=T @ sys.B)
    certT = make_cert(T @ Q @ T.T, K @ T.T, kappa=0.9, gamma=1e-4)
    moved = certify_rsi(sysT, S, U, certT)
    assert moved.cond1_value == pytest.approx(base.cond1_value, abs=1e-10)
    assert moved.cond2_value == pytest.approx(base.cond2_value, abs=1e-10)


def test_certify_requires_positive_definite_q():
    sys = LinearSystem(A=[[0.5]], B=[[1.0]])
    S, U = boxes(1, 1)
    cert = make_cert([[0.0]], [[0.0]], kappa=0.5, gamma=0.0)
    with pytest.raises(ValueError):
        certify_rsi(sys, S, U, cert)


# -- one-step falsification -----------------------------------------------------
def test_falsify_noise_free_tops_out_at_cond1():
    sys = LinearSystem(A=0.5 * np.eye(2), B=np.eye(2))
    S, U = boxes(2, 2)
    cert = make_cert(np.eye(2), np.zeros((2, 2)), kappa=0.25, gamma=0.0)
    rep = certify_rsi(sys, S, U, cert)
    fr = one_step_falsify(sys, cert, 20_000, np.random.default_rng(0))
    assert fr.worst_margin <= rep.cond1_value + 1e-12
    assert fr.worst_margin == pytest.approx(rep.cond1_value, rel=1e-3)


def test_falsify_scalar_matches_grid_oracle():
    a, b, k = 0.6, 1.0, -0.4
    q, gamma = 0.8, 1e-3
    sys = LinearSystem(A=[[a]], B=[[b]])
    cert = make_cert([[q]], [[k]], kappa=0.9, gamma=gamma)
    # exhaustive oracle in 1-D: x = ±sqrt(q), d in [-sqrt(gamma), sqrt(gamma)]
    xs = np.array([-np.sqrt(q), np.sqrt(q)])
    ds = np.linspace(-np.sqrt(gamma), np.sqrt(gamma), 2001)
    posts = (a + b * k) * xs[:, None] + ds[None, :]
    oracle = (posts**2 / q).max()
    fr = one_step_falsify(sys, cert, 50_000, np.random.default_rng(1))
    assert fr.worst_margin <= oracle + 1e-12
    assert fr.worst_margin == pytest.approx(oracle, rel=1e-3)


def test_falsify_detects_corrupted_gain(pendulum, pendulum_data_certificate):
    cert = pendulum_data_certificate.certificate
    from dataclasses import replace
    bad = replace(cert, K=-cert.K)
    fr = one_step_falsify(pendulum.system, bad, 10_000, np.random.default_rng(3))
    assert fr.worst_margin > 1.0


# -- ellipsoid sampling -----------------------------------------------------------
def test_volume_samples_center_and_containment():
    rng = np.random.default_rng(5)
    pts = np.array([sample_in_ellipsoid(np.eye(2), rng) for _ in range(100_000)])
    # all inside, mean near 0 within 3 sigma of the radial law
    assert np.all(np.einsum("ij,ij->i", pts, pts) <= 1 + 1e-12)
    assert np.abs(pts.mean(axis=0)).max() < 3 * 0.5 / np.sqrt(100_000)


def test_boundary_samples_sit_on_the_shell():
    rng = np.random.default_rng(6)
    Q = np.diag([4.0, 1.0])
    for _ in range(2000):
        x = sample_in_ellipsoid(Q, rng, mode="boundary")
        assert x @ np.linalg.solve(Q, x) == pytest.approx(1.0, abs=1e-12)


def test_volume_sampling_radial_law():
    # in the Q metric, r = |x|_{Q^{-1}} has CDF r^n; compare empirical quantiles
    rng = np.random.default_rng(7)
    Q = np.diag([2.0, 0.5, 1.0])
    n = 3
    r = np.sort([np.sqrt(x @ np.linalg.solve(Q, x))
                 for x in (sample_in_ellipsoid(Q, rng) for _ in range(40_000))])
    grid = np.linspace(0.05, 0.95, 19)
    empirical = np.quantile(r, grid)
    exact = grid ** (1.0 / n)
    assert np.abs(empirical - exact).max() < 0.01


def test_sample_rejects_indefinite_shape():
    with pytest.raises(ValueError):
        sample_in_ellipsoid(np.diag([1.0, -1.0]), np.random.default_rng(0))


# -- projection --------------------------------------------------------------------
def test_project_diagonal_case():
    assert np.array_equal(project_ellipsoid(np.diag([4.0, 1.0, 1.0, 1.0]), (0, 1)),
                          np.diag([4.0, 1.0]))


def test_project_identity_gives_unit_disk():
    assert np.array_equal(project_ellipsoid(np.eye(4), (1, 3)), np.eye(2))


def test_project_containment_oracle():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((4, 4))
    Q = M @ M.T + 0.5 * np.eye(4)
    dims = (1, 2)
    Q2 = project_ellipsoid(Q, dims)
    Q2_inv = np.linalg.inv(Q2)
    for _ in range(100_000 // 100):
        # batches of 100 for speed
        pts = np.array([sample_in_ellipsoid(Q, rng) for _ in range(100)])
        y = pts[:, dims]
        vals = np.einsum("ij,jk,ik->i", y, Q2_inv, y)
        assert np.all(vals <= 1.0 + 1e-9)


def test_project_bad_dims():
    with pytest.raises(IndexError):
        project_ellipsoid(np.eye(3), (0, 5))
    with pytest.raises(ValueError):
        project_ellipsoid(np.eye(3), (1, 1))


def test_ellipse_boundary_points_satisfy_equation():
    Q2 = np.array([[2.0, 0.3], [0.3, 0.5]])
    pts = ellipse_boundary_points(Q2, 64)
    vals = np.einsum("ij,jk,ik->i", pts, np.linalg.inv(Q2), pts)
    assert np.allclose(vals, 1.0, atol=1e-10)


# -- Monte-Carlo -----------------------------------------------------------------
def test_monte_carlo_autonomous_contraction_clean():
    sys = LinearSystem(A=0.5 * np.eye(2), B=np.zeros((2, 1)))
    S, U = boxes(2, 1)
    cert = make_cert(np.eye(2), np.zeros((1, 2)), kappa=0.25, gamma=0.0)
    dm = DisturbanceModel(gamma=0.0, density="zero")
    mc = monte_carlo_invariance(sys, cert, S, U, n_traj=50, horizon=40, dm=dm,
                                rng=np.random.default_rng(11))
    assert mc.clean
    assert mc.gamma_matches_certificate


def test_monte_carlo_attributes_widened_disturbance(pendulum, pendulum_data_certificate):
    cert = pendulum_data_certificate.certificate
    wide = DisturbanceModel(gamma=4 * cert.gamma, density="orthant", seed=13)
    mc = monte_carlo_invariance(pendulum.system, cert, pendulum.safety, pendulum.inputs,
                                n_traj=30, horizon=120, dm=wide,
                                rng=np.random.default_rng(13), keep_trajectories=False)
    assert not mc.gamma_matches_certificate
    assert mc.certificate_passed  # the certificate itself is fine
    assert mc.summary()["disturbance_gamma"] == pytest.approx(4 * cert.gamma)


def test_monte_carlo_warns_on_uncertified_candidate():
    sys = LinearSystem(A=1.5 * np.eye(1), B=np.zeros((1, 1)))
    S, U = boxes(1, 1)
    cert = make_cert([[1.0]], [[0.0]], kappa=0.9, gamma=0.0)
    dm = DisturbanceModel(gamma=0.0, density="zero")
    with pytest.warns(UserWarning, match="fails analytic certification"):
        mc = monte_carlo_invariance(sys, cert, S, U, n_traj=5, horizon=10, dm=dm,
                                    rng=np.random.default_rng(1), keep_trajectories=False)
    assert not mc.certificate_passed


def test_monte_carlo_counts_merge_deterministically(pendulum, pendulum_data_certificate):
    cert = pendulum_data_certificate.certificate
    runs = []
    for _ in range(2):
        mc = monte_carlo_invariance(pendulum.system, cert, pendulum.safety,
                                    pendulum.inputs, n_traj=20, horizon=50,
                                    dm=pendulum.disturbance,
                                    rng=np.random.default_rng(99),
                                    keep_trajectories=True)
        runs.append(mc)
    assert runs[0].summary() == runs[1].summary()
    assert np.array_equal(runs[0].trajectories[7].states, runs[1].trajectories[7].states)
