"""Probability vectors, the power-sum functional, and closed-form rate bounds.

Everything here is a pure function of its inputs (seeds included), so the
module is safe to use from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .rng import substream

SIMPLEX_ATOL = 1e-12


@dataclass(frozen=True)
class ProbabilityVector:
    """A discrete law p = (p_1, ..., p_K) on {1, ..., K}."""

    entries: np.ndarray
    K: int

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "K", int(self.K))
        if self.K < 1 or entries.shape != (self.K,):
            raise errors.EmptyInput("probability vector needs K >= 1 entries")
        if np.any(entries < 0.0) or np.any(entries > 1.0):
            raise errors.NegativeEntry("entries must lie in [0, 1]")
        if abs(float(entries.sum()) - 1.0) > SIMPLEX_ATOL:
            raise errors.SumNotOne(
                f"entries sum to {entries.sum()!r}, not 1 within {SIMPLEX_ATOL}"
            )


@dataclass(frozen=True)
class Power:
    """Exponent of the power-sum functional; gamma = 1 is allowed but trivial."""

    gamma: float

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma <= 0.0:
            raise errors.GammaOutOfRange("gamma must be > 0")

    @property
    def is_trivial(self) -> bool:
        return self.gamma == 1.0


def as_gamma(gamma) -> float:
    """Accept a float or a Power and return the validated exponent."""
    if isinstance(gamma, Power):
        return gamma.gamma
    return Power(float(gamma)).gamma


@dataclass(frozen=True)
class PrivacyBudget:
    """Local privacy level alpha and the Laplace scale multiplier sigma.

    sigma >= 2 is what guarantees the non-interactive channel is alpha-LDP;
    smaller values are accepted (so misconfigurations can be audited) but
    flagged in ``warnings_for``.
    """

    alpha: float
    sigma: float = 2.0

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha <= 0.0:
            raise errors.PrivsumError("alpha must be > 0")
        if not math.isfinite(self.sigma) or self.sigma <= 0.0:
            raise errors.PrivsumError("sigma must be > 0")

    @property
    def noise_scale(self) -> float:
        """Per-coordinate Laplace scale sigma / alpha of the channel."""
        return self.sigma / self.alpha

    @property
    def sigma_guarantees_ldp(self) -> bool:
        return self.sigma >= 2.0

    def warnings_for(self, n: int | None = None) -> list[str]:
        """Flags set when outside the main analysis regime."""
        out = []
        if self.sigma < 2.0:
            out.append("sigma < 2: non-interactive channel is not alpha-LDP")
        if not (0.0 < self.alpha < 1.0):
            out.append("alpha outside (0, 1): outside the main high-privacy regime")
        if n is not None and self.alpha**2 * n < 1.0:
            out.append("alpha^2 * n < 1: effective sample too small for the rate bounds")
        return out


@dataclass(frozen=True)
class ThresholdSpec:
    """Noise-level threshold tau = c / sqrt(alpha^2 n) with constant c >= 1."""

    c: float = 1.0
    tau: float = field(default=math.nan)
    alpha: float = field(default=math.nan)
    n: int = field(default=0)

    def __post_init__(self):
        if not math.isfinite(self.c) or self.c < 1.0:
            raise errors.PrivsumError("threshold constant c must be >= 1")
        if not math.isnan(self.tau):
            expected = self.c / math.sqrt(self.alpha**2 * self.n)
            if self.tau != expected:
                raise errors.PrivsumError("tau must equal c / sqrt(alpha^2 n) exactly")

    @classmethod
    def for_sample(cls, budget: PrivacyBudget, n: int, c: float = 1.0) -> "ThresholdSpec":
        return cls(c=c, tau=c / math.sqrt(budget.alpha**2 * n), alpha=budget.alpha, n=int(n))

    def tau_at(self, alpha: float, n: int) -> float:
        """Threshold value for a given privacy level and sample size."""
        return self.c / math.sqrt(alpha**2 * n)


def make_probability_vector(values, normalize: bool = False) -> ProbabilityVector:
    """Build a validated probability vector, optionally normalizing the input.

    Without ``normalize`` the entries must already sum to 1 within 1e-12;
    normalization is opt-in, never silent.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise errors.EmptyInput("values must be a non-empty 1-d sequence")
    if np.any(~np.isfinite(arr)):
        raise errors.NonFiniteInput("values must be finite")
    if np.any(arr < 0.0):
        raise errors.NegativeEntry("values must be non-negative")
    total = float(arr.sum())
    if normalize:
        if total == 0.0:
            raise errors.AllZero("cannot normalize an all-zero vector")
        arr = arr / total
    elif abs(total - 1.0) > SIMPLEX_ATOL:
        raise errors.SumNotOne(f"values sum to {total!r}, not 1 within {SIMPLEX_ATOL}")
    return ProbabilityVector(entries=arr, K=arr.size)


def uniform_law(K: int) -> ProbabilityVector:
    return make_probability_vector(np.full(int(K), 1.0 / int(K)), normalize=True)


def point_mass_law(K: int, atom: int = 1) -> ProbabilityVector:
    e = np.zeros(int(K))
    e[atom - 1] = 1.0
    return ProbabilityVector(entries=e, K=int(K))


def power_sum(p: ProbabilityVector, gamma) -> float:
    """Evaluate sum_k p_k^gamma with the convention 0^gamma = 0."""
    g = as_gamma(gamma)
    return float(np.power(p.entries, g).sum())


def renyi_entropy(p: ProbabilityVector, gamma) -> float:
    """Entropy of order gamma, log(power_sum) / (1 - gamma); gamma = 1 is rejected."""
    g = as_gamma(gamma)
    if g == 1.0:
        raise errors.GammaOne("order-1 entropy is not defined by this transform")
    f = power_sum(p, g)
    if f <= 0.0:
        raise errors.DegenerateFunctional("power sum must be positive")
    return math.log(f) / (1.0 - g)


def sample_categorical(p: ProbabilityVector, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. categories in 1..K; bit-reproducible under a fixed seed."""
    n = int(n)
    if n < 1:
        raise errors.ZeroSampleSize("need n >= 1 draws")
    u = substream(seed).random(n)
    cum = np.cumsum(p.entries)
    x = np.searchsorted(cum, u, side="right") + 1
    return np.minimum(x, p.K).astype(np.int64)


def clip02(y):
    """Project onto [0, 2]: (y v 0) ^ 2. Accepts scalars or arrays."""
    arr = np.asarray(y, dtype=np.float64)
    if np.any(~np.isfinite(arr)):
        raise errors.NonFiniteInput("clip02 requires finite input")
    out = np.minimum(np.maximum(arr, 0.0), 2.0)
    return float(out) if np.isscalar(y) or arr.ndim == 0 else out


def thresholded_norm(p: ProbabilityVector, tau: float, r: float, above: bool = True) -> float:
    """Sum of p_k^r over entries at or above tau (or strictly below it).

    The two variants partition the support, so above + below equals the
    full r-norm ||p||_r^r for every tau.
    """
    if tau < 0.0:
        raise errors.PrivsumError("tau must be >= 0")
    mask = p.entries >= tau if above else p.entries < tau
    return float(np.power(p.entries[mask], r).sum())


def theoretical_rate(gamma, K: int, n: int, alpha: float) -> float:
    """Regime-appropriate risk-bound expression with implicit constant 1.

    Used only to predict log-log slopes; the bounds' constants are unknown,
    so the absolute level is meaningless.
    """
    g = as_gamma(gamma)
    if g == 1.0:
        raise errors.GammaOne("no rate regime is defined at gamma = 1")
    a2n = alpha**2 * n
    if g < 1.0:
        return min(K ** (2.0 * (1.0 - g)), K**2 / a2n**g)
    if g <= 1.5:
        return min(a2n ** (1.0 - g), K**2 / a2n**g + K ** (3.0 - 2.0 * g) / a2n)
    if g < 2.0:
        return min(a2n ** (1.0 - g), K**2 / a2n**g + 1.0 / a2n)
    return 1.0 / a2n
