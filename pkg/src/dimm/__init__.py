"""DIMM: distributed and integrated method of moments for correlated Gaussian panels.

Partition a high-dimensional response into blocks, fit each block by
pairwise composite likelihood, and integrate the block estimates into a
single estimate of the shared mean parameters with full inference.
"""

from dimm.baselines import BaselineFit, gee_fit, gls_oracle
from dimm.errors import (
    ConfigError,
    CovarianceError,
    DataError,
    DimmError,
    FitError,
    IntegrationError,
    PartitionError,
    ScenarioError,
)
from dimm.io import (
    FitConfig,
    FitReport,
    GofReport,
    build_fit_report,
    load_fit_config,
    load_panel,
    save_panel,
    write_estimates_csv,
)
from dimm.integrate import (
    CoefficientTest,
    IntegratedFit,
    StackedScores,
    WeightMatrix,
    cef_log_density,
    dimm_covariance,
    gof_test,
    integrate_fits,
    one_step_estimator,
    q_statistic,
    stack_scores,
    wald_tests,
    weight_matrix,
)
from dimm.model import (
    AR1,
    CS,
    Block,
    BlockPartition,
    Dependence,
    KroneckerCovariance,
    PairCovariance,
    PanelDataset,
    assemble_kronecker,
    pair_correlation,
    pair_covariance,
    partition_dataset,
)
from dimm.pairwise import (
    BlockFit,
    FitOptions,
    OptimizerTrace,
    bivariate_normal_logpdf,
    block_logcl,
    block_score_beta,
    block_score_gamma,
    block_sensitivity,
    fit_block,
    fit_blocks,
)
from dimm.simulate import (
    BlockScenario,
    CovariateSpec,
    GofSummary,
    MethodReport,
    SimReport,
    SimScenario,
    bundled_scenario,
    bundled_scenario_names,
    eeg_mimic_scenario,
    generate_replicate,
    random_between_matrix,
    report_fingerprint,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from dimm.special import chi2_cdf, chi2_quantile, normal_cdf

__version__ = "0.1.0"

__all__ = [
    "AR1",
    "CS",
    "BaselineFit",
    "Block",
    "BlockFit",
    "BlockPartition",
    "BlockScenario",
    "CoefficientTest",
    "ConfigError",
    "CovarianceError",
    "CovariateSpec",
    "DataError",
    "Dependence",
    "DimmError",
    "FitConfig",
    "FitError",
    "FitOptions",
    "FitReport",
    "GofReport",
    "GofSummary",
    "IntegratedFit",
    "IntegrationError",
    "KroneckerCovariance",
    "MethodReport",
    "OptimizerTrace",
    "PairCovariance",
    "PanelDataset",
    "PartitionError",
    "ScenarioError",
    "SimReport",
    "SimScenario",
    "StackedScores",
    "WeightMatrix",
    "__version__",
    "assemble_kronecker",
    "bivariate_normal_logpdf",
    "block_logcl",
    "block_score_beta",
    "block_score_gamma",
    "block_sensitivity",
    "build_fit_report",
    "bundled_scenario",
    "bundled_scenario_names",
    "cef_log_density",
    "chi2_cdf",
    "chi2_quantile",
    "dimm_covariance",
    "eeg_mimic_scenario",
    "fit_block",
    "fit_blocks",
    "gee_fit",
    "generate_replicate",
    "gls_oracle",
    "gof_test",
    "integrate_fits",
    "load_fit_config",
    "load_panel",
    "normal_cdf",
    "one_step_estimator",
    "pair_correlation",
    "pair_covariance",
    "partition_dataset",
    "q_statistic",
    "random_between_matrix",
    "report_fingerprint",
    "run_scenario",
    "save_panel",
    "scenario_from_dict",
    "scenario_to_dict",
    "stack_scores",
    "wald_tests",
    "weight_matrix",
]
