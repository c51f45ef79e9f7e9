"""Non-Markovian quantum-state-diffusion simulator for two qubits in a common bath."""

__version__ = "0.1.0"

from .algebra import (
    BASIS_LABELS,
    PSI_BASIS,
    ModelParams,
    basis_operator,
    basis_state,
    build_hamiltonian,
    build_lowering,
    expectation,
    ket,
)
from .noise import (
    KernelSpec,
    NoisePath,
    OUKernel,
    RngStream,
    TableKernel,
    covariance_estimate,
    kernel_eval,
    sample_cholesky_path,
    sample_ou_path,
)
from .fields import (
    CoeffTables,
    FieldBlowupError,
    FieldSlice,
    advance_slice,
    compute_F,
    initial_slice,
    rhs_fields,
    riccati_oracle,
    solve_fields,
)
from .trajectory import (
    F5NoiseIntegral,
    ShiftedNoiseState,
    Trajectory,
    TrajectoryBlowupError,
    TrajectoryConfig,
    dump_trajectory_csv,
    obar_apply,
    run_trajectory,
    step_linear,
    step_nonlinear,
    symmetric_basis_oracle,
)
from .oracles import (
    DensityMatrixSeries,
    LindbladConvergenceError,
    analytic_rabi,
    lindblad_solve,
    lindblad_steady,
    trace_distance,
    validate_density,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    ObservableSeries,
    SteadyValue,
    coefficients_c,
    concurrence,
    fluctuation_L,
    purity,
    run_ensemble,
    steady_extract,
    write_ensemble_csv,
)

__all__ = [
    "BASIS_LABELS",
    "PSI_BASIS",
    "ModelParams",
    "basis_operator",
    "basis_state",
    "build_hamiltonian",
    "build_lowering",
    "expectation",
    "ket",
    "KernelSpec",
    "NoisePath",
    "OUKernel",
    "RngStream",
    "TableKernel",
    "covariance_estimate",
    "kernel_eval",
    "sample_cholesky_path",
    "sample_ou_path",
    "CoeffTables",
    "FieldBlowupError",
    "FieldSlice",
    "advance_slice",
    "compute_F",
    "initial_slice",
    "rhs_fields",
    "riccati_oracle",
    "solve_fields",
    "F5NoiseIntegral",
    "ShiftedNoiseState",
    "Trajectory",
    "TrajectoryBlowupError",
    "TrajectoryConfig",
    "dump_trajectory_csv",
    "obar_apply",
    "run_trajectory",
    "step_linear",
    "step_nonlinear",
    "symmetric_basis_oracle",
    "DensityMatrixSeries",
    "LindbladConvergenceError",
    "analytic_rabi",
    "lindblad_solve",
    "lindblad_steady",
    "trace_distance",
    "validate_density",
    "EnsembleConfig",
    "EnsembleError",
    "ObservableSeries",
    "SteadyValue",
    "coefficients_c",
    "concurrence",
    "fluctuation_L",
    "purity",
    "run_ensemble",
    "steady_extract",
    "write_ensemble_csv",
]
