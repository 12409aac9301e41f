"""Monte Carlo risk measurement, log-log rate fitting, and hard instances.

Trials are independent: trial t draws every random object from substreams
keyed by (master seed, role, t), so results are identical whatever the
execution order or worker count. Aggregation is a deterministic reduction
in trial-index order.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import errors
from .channels import interactive_stage2, laplace_bin_means
from .core import (
    PrivacyBudget,
    ProbabilityVector,
    ThresholdSpec,
    as_gamma,
    clip02,
    make_probability_vector,
    point_mass_law,
    power_sum,
    sample_categorical,
    theoretical_rate,
    uniform_law,
)
from .estimators import (
    EstimatorKind,
    combined_estimate,
    empirical_threshold,
    plugin_value_from_means,
    thresholded_value_from_means,
)
from .rng import (
    ROLE_CHANNEL,
    ROLE_CHANNEL_SECOND,
    ROLE_CHECK,
    ROLE_COMBINED,
    ROLE_SAMPLE,
    ROLE_STAGE_TWO,
    child_seed,
    substream,
)

WORKERS_ENV_VAR = "PRIVSUM_WORKERS"
MSE_STDERR_BATCHES = 20
DEFAULT_C_TILDE = 1.0 / (6.0 * math.sqrt(2.0))


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True)
class DistributionSpec:
    """Which law the trials sample from; hard-instance kinds resolve to their base vector."""

    kind: str  # uniform | point_mass | two_point | perturbation_family | custom
    values: tuple | None = None
    c_tilde: float = DEFAULT_C_TILDE

    def __post_init__(self):
        allowed = {"uniform", "point_mass", "two_point", "perturbation_family", "custom"}
        if self.kind not in allowed:
            raise errors.PrivsumError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "custom" and not self.values:
            raise errors.EmptyInput("custom distribution needs explicit probabilities")


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo cell: (gamma, K, n, budget, distribution, estimator, trials, seed)."""

    gamma: float
    K: int
    n: int
    budget: PrivacyBudget
    distribution: DistributionSpec
    estimator: EstimatorKind
    trials: int
    seed: int
    threshold_c: float = 1.0

    def __post_init__(self):
        as_gamma(self.gamma)
        if self.K < 1:
            raise errors.PrivsumError("K must be >= 1")
        if self.n < 1:
            raise errors.ZeroSampleSize("n must be >= 1")
        if self.trials < 2:
            raise errors.PrivsumError("need trials >= 2 to estimate a variance")


@dataclass(frozen=True)
class RiskReport:
    """Measured bias / variance / MSE of one Monte Carlo cell."""

    config: ExperimentConfig
    true_value: float
    mean_estimate: float
    bias: float
    variance: float
    mse: float
    mse_stderr: float
    trial_count: int
    degenerate: bool = False

    def __post_init__(self):
        decomposed = self.bias**2 + self.variance
        if abs(self.mse - decomposed) > 1e-9 * max(self.mse, 1e-18):
            raise errors.PrivsumError("mse must decompose as bias^2 + variance")
        if self.mse_stderr < 0.0:
            raise errors.PrivsumError("mse_stderr must be non-negative")


@dataclass(frozen=True)
class RateScanResult:
    axis: str
    points: tuple  # (axis_value, mse, mse_stderr) triples
    fitted_slope: float
    fitted_intercept: float
    r_squared: float
    predicted_slope: float
    reports: tuple = ()  # the per-point RiskReports, in axis order


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HardInstance:
    """An adversarial vector pair or perturbation family with its KL budget."""

    kind: str  # two_point | family
    vectors: tuple
    delta: np.ndarray
    separation: float
    kl_budget: float
    kl_condition_met: bool
    gamma: float
    n: int
    alpha: float
    regime: str | None = None
    k_tilde: int | None = None

    def perturbed(self, nu) -> ProbabilityVector:
        """Family member p^(nu) for signs nu in {-1, +1}^(k_tilde / 2)."""
        if self.kind != "family":
            raise errors.PrivsumError("only perturbation families have members")
        nu = np.asarray(nu)
        half = self.k_tilde // 2
        if nu.shape != (half,) or np.any(np.abs(nu) != 1):
            raise errors.PrivsumError(f"nu must be a +/-1 vector of length {half}")
        entries = self.vectors[0].entries.copy()
        entries[0 : self.k_tilde : 2] += nu * self.delta[0 : self.k_tilde : 2]
        entries[1 : self.k_tilde : 2] -= nu * self.delta[1 : self.k_tilde : 2]
        return ProbabilityVector(entries=entries, K=entries.size)


# ---------------------------------------------------------------------------
# distribution resolution


def resolve_distribution(config: ExperimentConfig) -> ProbabilityVector:
    spec = config.distribution
    if spec.kind == "uniform":
        return uniform_law(config.K)
    if spec.kind == "point_mass":
        return point_mass_law(config.K)
    if spec.kind == "custom":
        p = make_probability_vector(spec.values)
        if p.K != config.K:
            raise errors.DimensionMismatch("custom vector length must equal K")
        return p
    if spec.kind == "two_point":
        inst = two_point_instance(config.K, config.n, config.budget, config.gamma,
                                  spec.c_tilde)
        return inst.vectors[0]
    inst = perturbation_family(config.K, config.n, config.budget, config.gamma)
    return inst.vectors[0]


# ---------------------------------------------------------------------------
# the Monte Carlo engine


def _interactive_trial_value(x: np.ndarray, config: ExperimentConfig, t: int) -> float:
    g = config.gamma
    half = x.size // 2
    if half < 1:
        raise errors.ZeroSampleSize("interactive trials need n >= 2")
    x1, x2 = x[:half], x[half : 2 * half]
    means1 = laplace_bin_means(x1, config.K, config.budget,
                               child_seed(config.seed, ROLE_CHANNEL, t))
    vals = clip02(means1) ** (g - 1.0)
    stage2 = interactive_stage2(x2, vals, config.budget, g,
                                child_seed(config.seed, ROLE_STAGE_TWO, t))
    return float(stage2.mean())


def _thresholded_trial_value(x: np.ndarray, config: ExperimentConfig, t: int) -> float:
    g = config.gamma
    budget = config.budget
    if g > 1.0:
        half = x.size // 2
        if half < 1:
            raise errors.ZeroSampleSize("thresholded trials need n >= 2 for gamma > 1")
        x1, x2 = x[:half], x[half : 2 * half]
        means1 = laplace_bin_means(x1, config.K, budget,
                                   child_seed(config.seed, ROLE_CHANNEL, t))
        tau_hat = empirical_threshold(config.K, half, budget)
        if not np.any(means1 >= tau_hat):
            # no surviving bin: the estimate is 0 whatever the second batch
            # releases, so its draws are not simulated
            return 0.0
        means2 = laplace_bin_means(x2, config.K, budget,
                                   child_seed(config.seed, ROLE_CHANNEL_SECOND, t))
        value, _ = thresholded_value_from_means(means1, means2, g, tau_hat)
        return value
    means = laplace_bin_means(x, config.K, budget,
                              child_seed(config.seed, ROLE_CHANNEL, t))
    if g == 1.0:
        return plugin_value_from_means(means, g)
    tau = ThresholdSpec(c=config.threshold_c).tau_at(budget.alpha, x.size)
    if config.K <= 1.0 / tau:
        return plugin_value_from_means(means, g)
    return 0.0


def run_single_trial(config: ExperimentConfig, p: ProbabilityVector, t: int) -> float:
    """End-to-end pipeline (sample -> channel -> estimator) for trial index t."""
    try:
        x = sample_categorical(p, config.n, child_seed(config.seed, ROLE_SAMPLE, t))
        kind = config.estimator
        if kind is EstimatorKind.PLUG_IN:
            means = laplace_bin_means(x, config.K, config.budget,
                                      child_seed(config.seed, ROLE_CHANNEL, t))
            return plugin_value_from_means(means, config.gamma)
        if kind is EstimatorKind.THRESHOLDED:
            return _thresholded_trial_value(x, config, t)
        if kind is EstimatorKind.INTERACTIVE:
            return _interactive_trial_value(x, config, t)
        result = combined_estimate(x, config.K, config.gamma, config.budget,
                                   child_seed(config.seed, ROLE_COMBINED, t),
                                   ThresholdSpec(c=config.threshold_c))
        return result.value
    except errors.PrivsumError as exc:
        raise errors.PrivsumError(f"trial {t}: {exc}") from exc


def _trial_block(config: ExperimentConfig, start: int, stop: int) -> np.ndarray:
    p = resolve_distribution(config)
    return np.array([run_single_trial(config, p, t) for t in range(start, stop)])


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV_VAR)
    return max(1, int(env)) if env else 1


def run_trials(config: ExperimentConfig, workers: int | None = None) -> np.ndarray:
    """Per-trial estimates in trial order; independent of the worker count."""
    workers = resolve_workers(workers)
    if workers == 1:
        return _trial_block(config, 0, config.trials)
    bounds = np.linspace(0, config.trials, workers * 4 + 1).astype(int)
    spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        blocks = list(pool.map(_trial_block, [config] * len(spans),
                               [a for a, _ in spans], [b for _, b in spans]))
    return np.concatenate(blocks)


def monte_carlo_risk(config: ExperimentConfig, workers: int | None = None) -> RiskReport:
    """Measure bias, variance and MSE of the configured estimator."""
    p = resolve_distribution(config)
    true_value = power_sum(p, config.gamma)
    estimates = run_trials(config, workers)
    sq_errors = (estimates - true_value) ** 2
    mean_estimate = float(estimates.mean())
    bias = mean_estimate - true_value
    variance = float(estimates.var())
    mse = float(sq_errors.mean())
    batches = np.array_split(sq_errors, min(MSE_STDERR_BATCHES, config.trials))
    batch_means = np.array([b.mean() for b in batches])
    mse_stderr = float(batch_means.std(ddof=1) / math.sqrt(len(batches)))
    return RiskReport(
        config=config, true_value=true_value, mean_estimate=mean_estimate,
        bias=bias, variance=variance, mse=mse, mse_stderr=mse_stderr,
        trial_count=config.trials, degenerate=(mse_stderr == 0.0),
    )


# ---------------------------------------------------------------------------
# rate fitting


def fit_power_law(xs, ys) -> tuple[float, float, float]:
    """OLS fit of log(y) against log(x); returns (slope, intercept, r_squared)."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    cx = lx - lx.mean()
    if float(cx @ cx) == 0.0:
        raise errors.InsufficientPoints("axis values are all identical")
    slope = float(cx @ (ly - ly.mean()) / (cx @ cx))
    intercept = float(ly.mean() - slope * lx.mean())
    residual = ly - (intercept + slope * lx)
    total = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if total == 0.0 else 1.0 - float((residual**2).sum()) / total
    return slope, intercept, r2


def _axis_configs(base: ExperimentConfig, axis: str, values) -> list[ExperimentConfig]:
    if axis == "n":
        return [replace(base, n=int(v)) for v in values]
    if axis == "K":
        return [replace(base, K=int(v)) for v in values]
    if axis == "alpha":
        return [replace(base, budget=PrivacyBudget(alpha=float(v), sigma=base.budget.sigma))
                for v in values]
    raise errors.PrivsumError(f"unknown scan axis {axis!r}")


def predicted_slope_from_theory(base: ExperimentConfig, axis: str, values) -> float:
    """Log-log slope of the closed-form risk bound along the scan axis."""
    rates = [theoretical_rate(c.gamma, c.K, c.n, c.budget.alpha)
             for c in _axis_configs(base, axis, values)]
    slope, _, _ = fit_power_law(values, rates)
    return slope


def rate_scan(base: ExperimentConfig, axis: str, values, predicted_slope: float,
              workers: int | None = None) -> RateScanResult:
    """Fit the empirical log-log MSE curve along one axis and compare slopes."""
    values = list(values)
    if len(values) < 4:
        raise errors.InsufficientPoints("need at least 4 axis values")
    if max(values) < 8 * min(values):
        raise errors.InsufficientPoints("axis values must span at least a factor of 8")
    points = []
    reports = []
    for cfg in _axis_configs(base, axis, values):
        report = monte_carlo_risk(cfg, workers)
        reports.append(report)
        points.append((float({"n": cfg.n, "K": cfg.K, "alpha": cfg.budget.alpha}[axis]),
                       report.mse, report.mse_stderr))
    if any(mse <= 0.0 for _, mse, _ in points):
        raise errors.NonPositiveMse("every scan point needs a positive MSE")
    slope, intercept, r2 = fit_power_law([v for v, _, _ in points],
                                         [m for _, m, _ in points])
    return RateScanResult(axis=axis, points=tuple(points), fitted_slope=slope,
                          fitted_intercept=intercept, r_squared=r2,
                          predicted_slope=float(predicted_slope),
                          reports=tuple(reports))


# ---------------------------------------------------------------------------
# lower-bound hard instances


def two_point_instance(K: int, n: int, budget: PrivacyBudget, gamma,
                       c_tilde: float = DEFAULT_C_TILDE) -> HardInstance:
    """Adversarial pair p, q differing by tau/2 in two coordinates.

    tau = c_tilde / sqrt(alpha^2 n); extra coordinates are padded with equal
    tails <= c_tilde / (4 K n) so the separation and the KL budget keep
    their two-coordinate values.
    """
    g = as_gamma(gamma)
    if g == 1.0:
        raise errors.GammaOne("the two-point construction needs gamma != 1")
    if K < 2:
        raise errors.KTooSmall("need K >= 2")
    if not 0.0 < c_tilde <= DEFAULT_C_TILDE:
        raise errors.CTildeOutOfRange(
            f"c_tilde must lie in (0, 1/(6 sqrt 2)] = (0, {DEFAULT_C_TILDE}]")
    alpha = budget.alpha
    tau = c_tilde / math.sqrt(alpha**2 * n)
    tail = c_tilde / (4.0 * K * n)
    head = 1.0 - tau - (K - 2) * tail
    if head < 0.0 or tau > 1.0:
        raise errors.InfeasibleConstruction(
            "alpha^2 n too small: the two-point masses do not fit the simplex")
    p_entries = np.full(K, tail)
    p_entries[0] = head
    p_entries[1] = tau
    q_entries = p_entries.copy()
    q_entries[0] = head + tau / 2.0
    q_entries[1] = tau / 2.0
    p = make_probability_vector(p_entries)
    q = make_probability_vector(q_entries)
    separation = abs(power_sum(p, g) - power_sum(q, g))
    tv_l1 = float(np.abs(p.entries - q.entries).sum())
    kl = 4.0 * (math.exp(alpha) - 1.0) ** 2 * n * tv_l1**2
    chain_bound = 36.0 * c_tilde**2
    return HardInstance(
        kind="two_point", vectors=(p, q), delta=q.entries - p.entries,
        separation=separation, kl_budget=kl,
        kl_condition_met=kl <= chain_bound * (1.0 + 1e-12),
        gamma=g, n=int(n), alpha=alpha,
    )


def _smallest_even_at_least(x: float) -> int:
    k = max(4, int(math.ceil(x)))
    return k + (k % 2)


def perturbation_family(K: int, n: int, budget: PrivacyBudget, gamma) -> HardInstance:
    """Paired-perturbation family p^(nu) = p + sum_k nu_k (+delta, -delta).

    Regime 1 (K below the privacy-adjusted sample size n g^2 with
    g = e^(2 alpha) - e^(-2 alpha)) perturbs all K coordinates; regime 2
    uses the uniform base for gamma < 1 and a reduced even block size for
    gamma in (1, 2). The perturbation always satisfies the KL budget
    condition ||delta||^2 <= 2 / (n g^2) by construction.
    """
    g_exp = as_gamma(gamma)
    if not (0.0 < g_exp < 2.0) or g_exp == 1.0:
        raise errors.GammaOutOfRange("the family construction covers gamma in (0,2), gamma != 1")
    K = int(K)
    if K < 4:
        raise errors.KTooSmall("need K >= 4")
    if K % 2:
        raise errors.OddK("odd alphabet sizes are not supported")
    alpha = budget.alpha
    spread = math.exp(2.0 * alpha) - math.exp(-2.0 * alpha)
    cutoff = n * spread**2

    if K < cutoff:
        regime = "dense"
        k_tilde = K
        delta_val = 1.0 / (4.0 * math.sqrt(K * n) * spread)
    elif g_exp < 1.0:
        regime = "sparse-uniform"
        k_tilde = K
        delta_val = 1.0 / (2.0 * K)
    else:
        regime = "sparse-block"
        k_tilde = min(K, _smallest_even_at_least(cutoff))
        delta_val = 1.0 / (8.0 * math.sqrt(k_tilde * n) * spread)

    delta = np.zeros(K)
    delta[:k_tilde] = delta_val
    entries = np.zeros(K)
    if regime == "sparse-uniform":
        entries[:] = 2.0 * delta_val  # exactly the uniform law 1/K
    elif k_tilde == K:
        # the last pair absorbs the leftover mass; it stays perturbable
        # because it keeps at least 2 delta per coordinate
        entries[: K - 2] = 2.0 * delta_val
        rest = 1.0 - (K - 2) * 2.0 * delta_val
        if rest < 4.0 * delta_val:
            raise errors.InfeasibleConstruction(
                "the paired masses exceed the simplex; increase n or alpha")
        entries[K - 2 :] = rest / 2.0
    else:
        entries[:k_tilde] = 2.0 * delta_val
        rest = 1.0 - k_tilde * 2.0 * delta_val
        if rest < 0.0:
            raise errors.InfeasibleConstruction(
                "the paired masses exceed the simplex; increase n or alpha")
        entries[k_tilde:] = rest / (K - k_tilde)
    base = make_probability_vector(entries, normalize=False)

    pair_p = base.entries[1:k_tilde:2]
    pair_d = delta[1:k_tilde:2]
    witness = float(np.power(pair_p, g_exp - 2.0) @ (pair_d**2))
    budget_result = kl_budget(delta, n, budget)
    return HardInstance(
        kind="family", vectors=(base,), delta=delta, separation=witness,
        kl_budget=budget_result.value, kl_condition_met=budget_result.condition_met,
        gamma=g_exp, n=int(n), alpha=alpha, regime=regime, k_tilde=k_tilde,
    )


@dataclass(frozen=True)
class KlBudgetResult:
    value: float
    delta_norm_sq: float
    limit: float
    condition_met: bool


def kl_budget(delta, n: int, budget: PrivacyBudget) -> KlBudgetResult:
    """Family-case KL bound n g^2 ||delta||^2 / 4 and its feasibility condition."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(~np.isfinite(delta)):
        raise errors.NonFiniteInput("delta must be finite")
    spread = math.exp(2.0 * budget.alpha) - math.exp(-2.0 * budget.alpha)
    norm_sq = float(delta @ delta)
    value = n * spread**2 * norm_sq / 4.0
    limit = 2.0 / (n * spread**2)
    return KlBudgetResult(value=value, delta_norm_sq=norm_sq, limit=limit,
                          condition_met=norm_sq <= limit * (1.0 + 1e-12))


# ---------------------------------------------------------------------------
# distributional property checks


def separation_check(instance: HardInstance, gamma, samples: int, seed: int) -> CheckReport:
    """Exact sign structure of the pairwise perturbation terms, plus the
    empirical separation-to-witness ratio over random family members."""
    g = as_gamma(gamma)
    if instance.kind != "family":
        raise errors.PrivsumError("separation check needs a perturbation family")
    if not (0.0 < g < 2.0) or g == 1.0:
        raise errors.GammaOutOfRange("separation signs are defined for gamma in (0,2), gamma != 1")
    if samples < 1:
        raise errors.PrivsumError("need at least one sampled sign vector")
    half = instance.k_tilde // 2
    base = instance.vectors[0]
    pair_p = base.entries[1 : instance.k_tilde : 2]
    pair_d = instance.delta[1 : instance.k_tilde : 2]
    rng = substream(seed, ROLE_CHECK)
    want_nonneg = g > 1.0
    sign_ok = True
    min_ratio = math.inf
    max_ratio = 0.0
    gap_vs_member = 0.0
    base_value = power_sum(base, g)
    for _ in range(samples):
        nu = np.where(rng.random(half) < 0.5, -1.0, 1.0)
        terms = ((pair_p + nu * pair_d) ** g + (pair_p - nu * pair_d) ** g
                 - 2.0 * pair_p**g)
        if want_nonneg:
            sign_ok &= bool(np.all(terms >= 0.0))
        else:
            sign_ok &= bool(np.all(terms <= 0.0))
        gap = abs(float(terms.sum()))
        member_gap = abs(power_sum(instance.perturbed(nu), g) - base_value)
        gap_vs_member = max(gap_vs_member, abs(gap - member_gap))
        if instance.separation > 0.0:
            ratio = gap / instance.separation
            min_ratio = min(min_ratio, ratio)
            max_ratio = max(max_ratio, ratio)
    return CheckReport(
        name="separation-signs",
        passed=sign_ok,
        details={"samples": samples, "gamma": g, "min_ratio": min_ratio,
                 "max_ratio": max_ratio, "witness": instance.separation,
                 "max_gap_vs_member": gap_vs_member},
    )


def concentration_check(p: ProbabilityVector, n: int, budget: PrivacyBudget,
                        trials: int, seed: int) -> CheckReport:
    """Empirical exceedance of the high-probability deviation threshold.

    The threshold is 96 sigma sqrt(log(K n^(1/3)) / ((alpha^2 ^ 1) n)); its
    exceedance probability per bin is at most 6 / (K^3 n).
    """
    K = p.K
    if n < math.log(K * n ** (1.0 / 3.0)):
        warnings.warn("n below the validity condition n >= log(K n^(1/3))",
                      RuntimeWarning, stacklevel=2)
    a_eff = min(budget.alpha**2, 1.0)
    threshold = 96.0 * budget.sigma * math.sqrt(math.log(K * n ** (1.0 / 3.0)) / (a_eff * n))
    bound = 6.0 / (K**3 * n)
    exceed = np.zeros(K, dtype=np.int64)
    for t in range(trials):
        x = sample_categorical(p, n, child_seed(seed, ROLE_SAMPLE, t))
        means = laplace_bin_means(x, K, budget, child_seed(seed, ROLE_CHANNEL, t))
        exceed += np.abs(means - p.entries) > threshold
    freq = exceed / trials
    stderr = np.sqrt(freq * (1.0 - freq) / trials)
    ok = freq <= bound + 3.0 * stderr
    return CheckReport(
        name="concentration",
        passed=bool(np.all(ok)),
        details={"threshold": threshold, "bound": bound, "trials": trials,
                 "exceed_counts": exceed.tolist(), "frequencies": freq.tolist()},
    )


def negative_association_check(p: ProbabilityVector, n: int, budget: PrivacyBudget,
                               gamma, trials: int, seed: int) -> CheckReport:
    """Pairwise covariances of the plug-in components are non-positive.

    Passes when every empirical pairwise covariance is at most 3 standard
    errors above zero.
    """
    g = as_gamma(gamma)
    K = p.K
    comps = np.empty((trials, K))
    for t in range(trials):
        x = sample_categorical(p, n, child_seed(seed, ROLE_SAMPLE, t))
        means = laplace_bin_means(x, K, budget, child_seed(seed, ROLE_CHANNEL, t))
        comps[t] = clip02(means) ** g
    centered = comps - comps.mean(axis=0)
    worst = -math.inf
    pairs = []
    for j in range(K):
        for k in range(j + 1, K):
            prods = centered[:, j] * centered[:, k]
            cov = float(prods.mean())
            stderr = float(prods.std(ddof=1) / math.sqrt(trials))
            pairs.append((j + 1, k + 1, cov, stderr))
            worst = max(worst, cov - 3.0 * stderr)
    return CheckReport(
        name="negative-association",
        passed=all(cov <= 3.0 * se for _, _, cov, se in pairs),
        details={"trials": trials, "pairs": pairs, "worst_margin": worst},
    )


def moment_constant_check(p: ProbabilityVector, budget: PrivacyBudget, n_fit: int,
                          n_verify: int, trials: int, seed: int,
                          margin: float = 0.15) -> CheckReport:
    """Stability of the second-moment constant of the bin means across n.

    Fits C so that E|mean - p_k|^2 <= C / ((alpha^2 ^ 1) n) at n_fit, then
    verifies the same C (inflated by ``margin``) still bounds the moment at
    n_verify.
    """
    a_eff = min(budget.alpha**2, 1.0)

    def fitted_constant(n: int, role: int) -> float:
        sq = np.zeros(p.K)
        for t in range(trials):
            x = sample_categorical(p, n, child_seed(seed, role, ROLE_SAMPLE, t))
            means = laplace_bin_means(x, p.K, budget, child_seed(seed, role, ROLE_CHANNEL, t))
            sq += (means - p.entries) ** 2
        return float((sq / trials).max() * a_eff * n)

    c_fit = fitted_constant(n_fit, 1) * (1.0 + margin)
    c_verify = fitted_constant(n_verify, 2)
    return CheckReport(
        name="moment-constant",
        passed=c_verify <= c_fit,
        details={"n_fit": n_fit, "n_verify": n_verify, "trials": trials,
                 "fitted": c_fit, "verified": c_verify, "margin": margin},
    )
