"""Euler-Maruyama simulation of diffusions with singular drifts,
exponential-martingale reweighting of their laws, and empirical
weak-convergence verification."""

from .config import ConfigError, Experiment, ExperimentConfig, load_config, parse_config_text
from .core import (
    DiffusionMatrix,
    DriftField,
    EllipticityError,
    EmpiricalMeasure,
    NoiseSource,
    PathEnsemble,
    PotentialSpec,
    ReferenceSystem,
    SchemeTag,
    SingularDriftError,
    TimeGrid,
    coarsen_increments,
    gaussian_potential,
    gaussian_reference,
    make_reference_system,
    t_floor,
)
from .drifts import (
    BumpKernel,
    MollifiedDrift,
    MollificationError,
    ProbeReport,
    bump_kernel,
    drift_by_name,
    integrability_probe,
    kinetic_drift,
    kinetic_ou_drift,
    list_drifts,
    mollify,
    ou_drift,
    singular_log_drift,
    singular_log_series,
    theory_bound_bracket,
)
from .girsanov import (
    DataQualityError,
    GirsanovAccumulator,
    WeightKind,
    novikov_diagnostic,
    weighted_expectation,
    weights_degenerate,
    weights_to_scheme,
    weights_to_target,
)
from .harness import (
    ExperimentReport,
    Status,
    emit_csv,
    emit_plot_script,
    parse_report_csv,
    run_and_emit,
    run_experiment,
    run_girsanov_crosscheck,
    run_mollify_sweep,
    run_novikov_report,
    run_rate_regression,
    run_weak_convergence,
)
from .integrate import (
    SchemeConfig,
    SchemeMode,
    exact_linear_sde_sampler,
    exact_linear_terminal_coupled,
    exact_ou_sampler,
    simulate_em,
    simulate_em_degenerate,
    simulate_reference,
    simulate_reference_degenerate,
)
from .metrics import (
    BoundedObservable,
    TestFunction,
    TestFunctionFamily,
    bl_dictionary,
    default_observables,
    w1_coupling_upper,
    w1_exact_1d,
    w1_lp_oracle,
    w1_marginal_max,
    wbl_estimate,
    weak_error,
)

__version__ = "0.1.0"
