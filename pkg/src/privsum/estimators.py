"""The four power-sum estimators and the data-splitting they require.

All estimators consume only bin means (plug-in, thresholded) or stage-2
releases (interactive), so their values are invariant under permutation of
individuals within a batch.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .channels import (
    InteractiveTranscript,
    PrivatizedBatch,
    laplace_channel,
    run_interactive_protocol,
)
from .core import PrivacyBudget, ThresholdSpec, as_gamma, clip02
from .rng import ROLE_COMBINED, child_seed


class EstimatorKind(enum.Enum):
    PLUG_IN = "plugin"
    THRESHOLDED = "thresholded"
    INTERACTIVE = "interactive"
    COMBINED = "combined"


@dataclass(frozen=True)
class EstimateResult:
    value: float
    kind: EstimatorKind
    n_used: int
    diagnostics: dict = field(default_factory=dict)


def plugin_value_from_means(bin_means: np.ndarray, gamma: float) -> float:
    return float(np.power(clip02(bin_means), gamma).sum())


def plugin_estimate(batch: PrivatizedBatch, gamma) -> EstimateResult:
    """Plug-in estimator: sum over bins of clip02(bin mean)^gamma."""
    g = as_gamma(gamma)
    value = plugin_value_from_means(batch.bin_means, g)
    # 1e-12 relative slack: the exact bound can be crossed by summation ulps
    if not 0.0 <= value <= batch.K * 2.0**g * (1.0 + 1e-12):
        raise errors.PrivsumError("plug-in value escaped its deterministic bounds")
    return EstimateResult(value=value, kind=EstimatorKind.PLUG_IN, n_used=batch.n,
                          diagnostics={"K": batch.K})


def empirical_threshold(K: int, n: int, budget: PrivacyBudget) -> float:
    """Detection threshold 192 sigma sqrt(log(K n) / (alpha^2 n)).

    May exceed 2 at small n, in which case every bin is screened out; the
    thresholded estimator reports that in its diagnostics rather than
    failing. Its validity condition n >= 2 log K is likewise reported, not
    enforced.
    """
    if K < 1 or n < 1:
        raise errors.ZeroSampleSize("need K >= 1 and n >= 1")
    return 192.0 * budget.sigma * math.sqrt(math.log(K * n) / (budget.alpha**2 * n))


def thresholded_value_from_means(means1: np.ndarray, means2: np.ndarray,
                                 gamma: float, tau_hat: float) -> tuple[float, int]:
    surviving = means1 >= tau_hat
    value = float(np.power(clip02(means2 * surviving), gamma).sum())
    return value, int(surviving.sum())


def thresholded_estimate(batch1: PrivatizedBatch, batch2: PrivatizedBatch, gamma,
                         budget: PrivacyBudget,
                         threshold: ThresholdSpec | None = None) -> EstimateResult:
    """Thresholded estimator.

    gamma > 1: bins are kept only when the first batch's mean clears the
    empirical threshold; the second batch's means are plugged in on the
    kept bins. gamma < 1: the plug-in on the full data (batch1) when
    K <= 1/tau, else the trivial estimator 0. gamma = 1 falls back to the
    plug-in.
    """
    g = as_gamma(gamma)
    if batch1.K != batch2.K:
        raise errors.DimensionMismatch("batches must share the alphabet size K")
    threshold = threshold if threshold is not None else ThresholdSpec(c=1.0)
    K = batch1.K

    if g > 1.0:
        tau_hat = empirical_threshold(K, batch1.n, budget)
        value, kept = thresholded_value_from_means(
            batch1.bin_means, batch2.bin_means, g, tau_hat)
        diag = {
            "branch": "threshold-detect",
            "tau_hat": tau_hat,
            "surviving_bins": kept,
            "all_screened": tau_hat > 2.0,
            "n_condition_ok": batch1.n >= 2.0 * math.log(K),
        }
        return EstimateResult(value=value, kind=EstimatorKind.THRESHOLDED,
                              n_used=batch1.n + batch2.n, diagnostics=diag)

    if g == 1.0:
        value = plugin_value_from_means(batch1.bin_means, g)
        return EstimateResult(value=value, kind=EstimatorKind.THRESHOLDED,
                              n_used=batch1.n,
                              diagnostics={"branch": "gamma-one-plugin"})

    # gamma < 1: compare K against 1/tau with tau from the full sample size
    tau = threshold.tau_at(budget.alpha, batch1.n)
    if K <= 1.0 / tau:
        value = plugin_value_from_means(batch1.bin_means, g)
        branch = "plugin"
    else:
        value = 0.0
        branch = "trivial-zero"
    return EstimateResult(value=value, kind=EstimatorKind.THRESHOLDED, n_used=batch1.n,
                          diagnostics={"branch": branch, "tau": tau, "c": threshold.c})


def interactive_estimate(transcript: InteractiveTranscript) -> EstimateResult:
    """Interactive estimator: the mean of the stage-2 releases."""
    if transcript.stage2.size == 0:
        raise errors.EmptyStageTwo("no stage-2 releases to average")
    value = float(transcript.stage2.mean())
    # 1e-12 relative slack: averaging identical +/- z_alpha terms can round
    # a single ulp past the exact bound
    if abs(value) > transcript.z_alpha * (1.0 + 1e-12):
        raise errors.PrivsumError("interactive value escaped [-z_alpha, z_alpha]")
    return EstimateResult(
        value=value, kind=EstimatorKind.INTERACTIVE,
        n_used=transcript.stage1.n + transcript.stage2.size,
        diagnostics={"z_alpha": transcript.z_alpha,
                     "n_stage1": transcript.stage1.n,
                     "n_stage2": int(transcript.stage2.size)},
    )


def split_halves(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a raw sample into two disjoint halves of floor(N/2), dropping one if odd."""
    x = np.asarray(x)
    half = x.size // 2
    if half < 1:
        raise errors.ZeroSampleSize("need at least 2 individuals to split")
    return x[:half], x[half : 2 * half]


def combined_estimate(x, K: int, gamma, budget: PrivacyBudget, seed: int,
                      threshold: ThresholdSpec | None = None) -> EstimateResult:
    """Branching recipe over the three estimators.

    K <= sqrt(alpha^2 N) sends the full sample through the non-interactive
    channel and the plug-in. Otherwise gamma < 1 uses the thresholded rule
    on the full sample (no split is needed for that branch) and gamma > 1
    runs the two-stage interactive protocol on halves of floor(N/2).
    gamma = 1 has no interactive theory; it falls back to the plug-in with
    a warning recorded in the diagnostics.
    """
    g = as_gamma(gamma)
    x = np.asarray(x)
    N = x.size
    if N < 1:
        raise errors.ZeroSampleSize("empty raw sample")
    budget_warnings = budget.warnings_for(N)

    if K <= math.sqrt(budget.alpha**2 * N):
        batch = laplace_channel(x, K, budget, child_seed(seed, ROLE_COMBINED, 0))
        result = plugin_estimate(batch, g)
        diag = dict(result.diagnostics, branch="plugin", n_effective=N,
                    warnings=budget_warnings)
        return EstimateResult(value=result.value, kind=EstimatorKind.COMBINED,
                              n_used=N, diagnostics=diag)

    if g < 1.0:
        batch = laplace_channel(x, K, budget, child_seed(seed, ROLE_COMBINED, 1))
        result = thresholded_estimate(batch, batch, g, budget, threshold)
        diag = dict(result.diagnostics, branch="thresholded", n_effective=N,
                    warnings=budget_warnings)
        return EstimateResult(value=result.value, kind=EstimatorKind.COMBINED,
                              n_used=N, diagnostics=diag)

    if g == 1.0:
        batch = laplace_channel(x, K, budget, child_seed(seed, ROLE_COMBINED, 2))
        result = plugin_estimate(batch, g)
        diag = dict(result.diagnostics, branch="plugin-gamma-one-fallback",
                    n_effective=N, warnings=budget_warnings + [
                        "gamma = 1 has no interactive branch; using the plug-in"])
        return EstimateResult(value=result.value, kind=EstimatorKind.COMBINED,
                              n_used=N, diagnostics=diag)

    x1, x2 = split_halves(x)
    transcript = run_interactive_protocol(
        x1, x2, K, budget, g, child_seed(seed, ROLE_COMBINED, 3))
    result = interactive_estimate(transcript)
    diag = dict(result.diagnostics, branch="interactive", n_effective=x1.size,
                warnings=budget_warnings)
    return EstimateResult(value=result.value, kind=EstimatorKind.COMBINED,
                          n_used=2 * x1.size, diagnostics=diag)
