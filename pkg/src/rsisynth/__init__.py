"""Robust safety invariant ellipsoids for uncertain linear systems.

Synthesis of state-feedback controllers that keep a maximal-volume ellipsoid
inside a polyhedral safety set for every bounded disturbance, either from a
known model or directly from one input-state trajectory of an unknown plant.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    DisturbanceModel,
    InputSet,
    LinearSystem,
    SafetySet,
    SystemSpec,
    Trajectory,
    contains,
    load_system_spec,
    pendulum_spec,
    sample_disturbance,
    simulate,
    step,
)
from .data import Dataset, PeReport, check_pe, collect, extend_until_pe, hankel  # noqa: F401
from .synth import (  # noqa: F401
    RsiCertificate,
    SynthConfig,
    assemble_opd,
    assemble_opm,
    extract_certificate,
    kappa_search,
)
from .verify import (  # noqa: F401
    CertReport,
    certify_rsi,
    monte_carlo_invariance,
    one_step_falsify,
    project_ellipsoid,
    sample_in_ellipsoid,
)
from .ident import IdentResult, convergence_trace, indirect_pipeline, least_squares_fit  # noqa: F401
