"""perfctl: distribution-free confidence sets and robust open-loop control
for systems whose noise distribution depends on the applied control."""

__version__ = "0.1.0"

from .conformal import (
    ConfidenceProduct,
    CoverageReport,
    Euclidean,
    Mahalanobis,
    Provenance,
    build_confidence_product,
    chi_quantile,
    coverage_audit,
    empirical_quantile,
    ideal_confidence_product,
    ideal_quantile,
    quantile_index,
    quantile_lipschitz,
)
from .diagnostics import (
    ConstantEstimates,
    ContractionReport,
    ProbeSpec,
    RateReport,
    contraction_report,
    estimate_constants,
    iterations_to_delta,
    ps_po_gap_bound,
    theoretical_rate,
)
from .dynamics import (
    extract_noise,
    noise_batch_to_csv,
    rollout_noisy,
    rollout_nominal,
    sample_noise_batch,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    InsufficientSamplesError,
    NonContractionError,
    PerfctlError,
    SamplingError,
)
from .history import (
    IterationHistory,
    IterationRecord,
    compare_histories,
    load_history_jsonl,
    save_history_jsonl,
    synthetic_history,
    write_summary_csv,
)
from .irpc import (
    Constant,
    GridSpec,
    RunConfig,
    StableControl,
    Theoretical,
    estimate_u_ps,
    grid_search_u_po,
    run_e_irpc,
    run_i_irpc,
    sample_schedule_theoretical,
    solve_nominal,
)
from .solver import (
    AlignmentReport,
    InnerSolution,
    OuterSolution,
    RobustProblem,
    SolverConfig,
    check_alignment,
    evaluate_loss,
    inner_max,
    loss_gradients,
    outer_min,
)
from .types import (
    CustomNoise,
    GaussianAnisotropic,
    GaussianIsotropic,
    GenericDynamics,
    GenericLoss,
    LinearTimeVarying,
    QuadraticLoss,
    SystemModel,
    UniformBall,
    ValidationReport,
    box_from_bounds,
    validate_model,
)
