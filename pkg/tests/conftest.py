"""Shared fixtures; the expensive pendulum artifacts are built once per session."""

import numpy as np
import pytest

from rsisynth.data import check_pe, collect, square_dither_sampler
from rsisynth.model import pendulum_spec
from rsisynth.synth import SynthConfig, assemble_opd, kappa_search


def collect_pendulum_dataset(spec, steps=107):
    """The shipped excitation: square wave with dither, one growing run."""
    rng = spec.disturbance.rng()
    sampler = square_dither_sampler()
    inputs = np.column_stack(
        [np.asarray(sampler(rng, k, spec.system.m)).reshape(-1) for k in range(steps)]
    )
    return collect(spec.system, np.zeros(spec.system.n), inputs, spec.disturbance, rng=rng)


@pytest.fixture(scope="session")
def pendulum():
    return pendulum_spec()


@pytest.fixture(scope="session")
def pendulum_dataset(pendulum):
    ds = collect_pendulum_dataset(pendulum)
    assert check_pe(ds).pe_satisfied
    return ds


@pytest.fixture(scope="session")
def pendulum_data_certificate(pendulum, pendulum_dataset):
    """Data-driven certificate from the shipped seed; reused across suites."""
    spec = pendulum
    cfg = SynthConfig(kappa_init=0.95, e=1e-3, i_max=14)
    result = kappa_search(
        lambda k: assemble_opd(pendulum_dataset, spec.safety, spec.inputs,
                               spec.disturbance.gamma, k),
        cfg,
        mode="data",
        gamma=spec.disturbance.gamma,
    )
    assert result.feasible, "shipped-seed data synthesis must be feasible"
    return result
