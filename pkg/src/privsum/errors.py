"""Typed exceptions raised by the privsum library.

Every input-contract violation maps to a distinct class so callers (and the
CLI) can distinguish usage errors from runtime failures.
"""


class PrivsumError(ValueError):
    """Base class for all privsum input-contract violations."""


# probability vectors
class EmptyInput(PrivsumError):
    pass


class NegativeEntry(PrivsumError):
    pass


class SumNotOne(PrivsumError):
    pass


class AllZero(PrivsumError):
    pass


# functional parameters
class GammaOne(PrivsumError):
    """Operation undefined at gamma = 1."""


class GammaNotAboveOne(PrivsumError):
    """Operation requires gamma > 1."""


class GammaOutOfRange(PrivsumError):
    pass


class GammaOneUnsupported(PrivsumError):
    pass


class DegenerateFunctional(PrivsumError):
    pass


# sampling / channels
class ZeroSampleSize(PrivsumError):
    pass


class NonFiniteInput(PrivsumError):
    pass


class CategoryOutOfRange(PrivsumError):
    pass


class StageOneValueOutOfRange(PrivsumError):
    """Stage-1 plug-in values outside [0, 2^(gamma-1)] signal a pipeline bug."""


class EmptyStageTwo(PrivsumError):
    pass


class DimensionMismatch(PrivsumError):
    pass


# experiments
class InsufficientPoints(PrivsumError):
    pass


class NonPositiveMse(PrivsumError):
    pass


class CTildeOutOfRange(PrivsumError):
    pass


class KTooSmall(PrivsumError):
    pass


class OddK(PrivsumError):
    pass


class InfeasibleConstruction(PrivsumError):
    """Perturbation-family mass constraints cannot be met for these parameters."""
