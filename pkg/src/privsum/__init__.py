"""Locally differentially private estimation of power-sum functionals."""

from .channels import (
    InteractiveTranscript,
    LdpReport,
    PrivatizedBatch,
    interactive_stage2,
    laplace_bin_means,
    laplace_channel,
    run_interactive_protocol,
    verify_ldp_interactive,
    verify_ldp_ni,
    z_alpha,
)
from .core import (
    Power,
    PrivacyBudget,
    ProbabilityVector,
    ThresholdSpec,
    clip02,
    make_probability_vector,
    point_mass_law,
    power_sum,
    renyi_entropy,
    sample_categorical,
    theoretical_rate,
    thresholded_norm,
    uniform_law,
)
from .estimators import (
    EstimateResult,
    EstimatorKind,
    combined_estimate,
    empirical_threshold,
    interactive_estimate,
    plugin_estimate,
    thresholded_estimate,
)
from .experiments import (
    CheckReport,
    DistributionSpec,
    ExperimentConfig,
    HardInstance,
    RateScanResult,
    RiskReport,
    concentration_check,
    kl_budget,
    monte_carlo_risk,
    negative_association_check,
    perturbation_family,
    rate_scan,
    separation_check,
    two_point_instance,
)

__version__ = "0.1.0"
