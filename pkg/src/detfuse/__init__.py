"""Distributed Bayesian detection with dependent sensor observations.

Copula-based joint models, quantized-data maximum likelihood,
Bayes-optimal fusion-rule and quantizer design, and a seeded
Monte-Carlo experiment harness with a feedback estimation loop.
"""

from .config import ConfigError, ExperimentConfig, load_config
from .copulas import (
    CopulaFamily,
    CopulaModel,
    clayton_density_grid,
    copula_cdf,
    copula_density,
    sample_copula,
    spearman_rho,
    theta_from_rho,
)
from .design import (
    CostCoefficients,
    DesignState,
    DetectionMetrics,
    FusionRule,
    StageRecord,
    bank_metrics,
    bayes_cost,
    empirical_rates,
    optimal_fusion_rule,
    optimize_quantizers,
    optimize_quantizers_multistart,
    rule_metrics,
    run_feedback_loop,
)
from .estimation import (
    FisherInfo,
    LoglikEvaluator,
    MleOptions,
    MleResult,
    fisher_crlb,
    fisher_info,
    log_likelihood,
    mle_fit,
)
from .harness import (
    ExperimentFailure,
    ExperimentReport,
    generate_observations,
    read_stage_trace,
    run_efficiency_experiment,
    run_rmse_experiment,
    run_roc_experiment,
    run_trace,
    trace_histogram,
    write_csv,
    write_stage_trace,
)
from .models import (
    GammaMarginal,
    HypothesisModel,
    HypothesisParams,
    MixtureModel,
    ParamVector,
    Scenario,
    marginal_cdf,
    marginal_pdf,
    marginal_quantile,
)
from .quantizers import (
    HistogramGroup,
    QuantizedHistogram,
    QuantizedPmf,
    QuantizerBank,
    SensorGrid,
    cell_mass,
    count_outcomes,
    pack_bits,
    quantized_pmf,
    read_histogram_log,
    unpack_bits,
    write_histogram_log,
)

__version__ = "0.1.0"

__all__ = [
    "CopulaFamily",
    "CopulaModel",
    "clayton_density_grid",
    "copula_cdf",
    "copula_density",
    "sample_copula",
    "spearman_rho",
    "theta_from_rho",
    "GammaMarginal",
    "HypothesisModel",
    "HypothesisParams",
    "MixtureModel",
    "ParamVector",
    "Scenario",
    "marginal_cdf",
    "marginal_pdf",
    "marginal_quantile",
    "SensorGrid",
    "QuantizerBank",
    "QuantizedPmf",
    "QuantizedHistogram",
    "HistogramGroup",
    "quantized_pmf",
    "cell_mass",
    "count_outcomes",
    "pack_bits",
    "unpack_bits",
    "read_histogram_log",
    "write_histogram_log",
    "MleOptions",
    "MleResult",
    "LoglikEvaluator",
    "FisherInfo",
    "mle_fit",
    "log_likelihood",
    "fisher_info",
    "fisher_crlb",
    "CostCoefficients",
    "DetectionMetrics",
    "FusionRule",
    "DesignState",
    "StageRecord",
    "optimal_fusion_rule",
    "bayes_cost",
    "rule_metrics",
    "bank_metrics",
    "empirical_rates",
    "optimize_quantizers",
    "optimize_quantizers_multistart",
    "run_feedback_loop",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "ExperimentFailure",
    "ExperimentReport",
    "generate_observations",
    "run_trace",
    "run_rmse_experiment",
    "run_efficiency_experiment",
    "run_roc_experiment",
    "trace_histogram",
    "write_csv",
    "write_stage_trace",
    "read_stage_trace",
    "__version__",
]
