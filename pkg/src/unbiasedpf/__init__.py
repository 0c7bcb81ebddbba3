"""Unbiased and bias-controlled filtering for partially observed diffusions.

The filtering distribution of a diffusion observed at unit times is
approximated by particle filters run at dyadic Euler discretization levels.
Randomizing over the level (and over a doubling sequence of sample sizes)
and reweighting by the sampling probabilities removes the discretization
and particle biases in expectation; truncating the randomization keeps the
bias explicitly controlled at finite expected cost. A multilevel particle
filter is included as the fixed-bias baseline.
"""

from .costs import cost_of_draw, single_rand_draw_cost
from .cpf import (
    CoupledParticleSystem,
    CouplingDiagnostics,
    CpfBatchEstimate,
    batch_cpf_run,
    cpf_step,
    increment_functional,
    init_coupled_system,
    maximal_coupling_resample,
    wasserstein_resample,
)
from .errors import (
    ConfigError,
    CostBudgetExceeded,
    DegenerateWeights,
    ExactUnavailable,
    FilterError,
    InvalidLevel,
    InvalidRate,
    InvalidSimplex,
    ModelMismatch,
    NonOverlappingRange,
    NumericalOverflow,
    UnknownModel,
    UnsupportedDimension,
)
from .mlpf import LevelAllocation, MlpfResult, allocate, mlpf_cost, mlpf_estimate
from .observation import (
    BenchmarkModel,
    DataSet,
    ObservationModel,
    exact_unit_transition,
    generate_data,
    kalman_reference,
    make_benchmark,
    read_dataset,
    write_dataset,
)
from .pf import (
    BatchSchedule,
    ParticleSystem,
    PfBatchEstimate,
    batch_pf_run,
    filter_functional,
    init_particle_system,
    multinomial_indices,
    normalized_weights,
    pf_step,
)
from .randomization import (
    Pmf,
    RandomizationPlan,
    UnbiasedEstimate,
    XiSample,
    default_base_size,
    draw_xi,
    draw_xi_single,
    expected_draw_cost,
    make_single_rand_plan,
    make_theory_plan,
    make_truncated_plan,
    randomized_table_mean,
    single_randomized_estimate,
    unbiased_estimate,
)
from .rng import RngStream
from .sde import (
    CostCounter,
    DiffusionModel,
    Level,
    coupled_transition,
    euler_step,
    transition,
)

__version__ = "0.1.0"

__all__ = [
    "BatchSchedule",
    "BenchmarkModel",
    "ConfigError",
    "CostBudgetExceeded",
    "CostCounter",
    "CoupledParticleSystem",
    "CouplingDiagnostics",
    "CpfBatchEstimate",
    "DataSet",
    "DegenerateWeights",
    "DiffusionModel",
    "ExactUnavailable",
    "FilterError",
    "InvalidLevel",
    "InvalidRate",
    "InvalidSimplex",
    "Level",
    "LevelAllocation",
    "MlpfResult",
    "ModelMismatch",
    "NonOverlappingRange",
    "NumericalOverflow",
    "ObservationModel",
    "ParticleSystem",
    "PfBatchEstimate",
    "Pmf",
    "RandomizationPlan",
    "RngStream",
    "UnbiasedEstimate",
    "UnknownModel",
    "UnsupportedDimension",
    "XiSample",
    "allocate",
    "batch_cpf_run",
    "batch_pf_run",
    "cost_of_draw",
    "coupled_transition",
    "cpf_step",
    "default_base_size",
    "draw_xi",
    "draw_xi_single",
    "euler_step",
    "exact_unit_transition",
    "expected_draw_cost",
    "filter_functional",
    "generate_data",
    "increment_functional",
    "init_coupled_system",
    "init_particle_system",
    "kalman_reference",
    "make_benchmark",
    "make_single_rand_plan",
    "make_theory_plan",
    "make_truncated_plan",
    "maximal_coupling_resample",
    "mlpf_cost",
    "mlpf_estimate",
    "multinomial_indices",
    "normalized_weights",
    "pf_step",
    "randomized_table_mean",
    "read_dataset",
    "single_rand_draw_cost",
    "single_randomized_estimate",
    "transition",
    "unbiased_estimate",
    "wasserstein_resample",
    "write_dataset",
]
