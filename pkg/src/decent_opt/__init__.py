"""Decentralized stochastic optimization simulator.

Core surface: topology builders and validation, synthetic problem families,
the exact-diffusion-with-momentum optimizer and its baselines, trajectory
analysis (shadow sequences, lemma monitors, rate bounds), and a seeded
experiment harness with CSV outputs.
"""

__version__ = "0.1.0"

from .algorithms import AlgorithmSpec, DivergenceError, MonitorSet, OptimizerState, init, run, step
from .analysis import (
    BoundInputs,
    MetricRow,
    RateSummary,
    Trace,
    aux_z,
    empirical_rate,
    lemma3_estimate,
    lemma_monitors,
    max_step_size,
    metrics,
    shadow_init,
    shadow_step,
    theorem1_bound,
    theorem2_bound,
    theorem2_floor,
    zeta0_sq,
)
from .problems import (
    LogisticProblem,
    ProblemConstants,
    QuadraticProblem,
    WelschProblem,
    gen_logistic,
    gen_quadratic,
    gen_welsch,
    load_problem,
    save_problem,
)
from .topology import (
    MixingMatrix,
    SpectralProfile,
    Topology,
    TopologyError,
    ValidationReport,
    build_complete,
    build_ring,
    lazy_transform,
    load_matrix_csv,
    save_matrix_csv,
    spectral_profile,
    validate,
)
