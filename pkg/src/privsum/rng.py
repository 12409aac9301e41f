"""Deterministic random-number plumbing.

All randomness in the library flows through counter-based Philox generators
keyed by a 64-bit master seed plus an integer derivation path, so that any
consumer (a trial, a channel invocation, a protocol stage) owns an
independent substream and results never depend on execution order or worker
count.

Laplace noise is produced by the inverse CDF (sign-log transform of a single
uniform), never by rejection sampling, so output is a pure function of the
uniform stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Derivation-path role tags. Values are arbitrary but frozen: changing them
# changes every seeded result.
ROLE_SAMPLE = 1
ROLE_CHANNEL = 2
ROLE_CHANNEL_SECOND = 3
ROLE_STAGE_TWO = 4
ROLE_COMBINED = 5
ROLE_CHECK = 6


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a Philox generator for the substream at ``(seed, *path)``."""
    entropy = [int(seed) & _MASK64] + [int(p) & _MASK64 for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def child_seed(seed: int, *path: int) -> int:
    """Derive a 64-bit child seed from a master seed and an integer path."""
    entropy = [int(seed) & _MASK64] + [int(p) & _MASK64 for p in path]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def laplace_from_uniform(u: np.ndarray) -> np.ndarray:
    """Map uniforms on [0, 1) to standard Laplace draws via the inverse CDF.

    For u < 1/2 the draw is log(2u), otherwise -log(2 - 2u); both linear
    forms are exact in floating point. The argument is floored at the
    smallest subnormal so u == 0 maps to a finite (if extreme) left-tail
    value instead of -inf.
    """
    u = np.asarray(u, dtype=np.float64)
    t = 2.0 * u
    lo = np.log(np.maximum(t, 5e-324))
    hi = -np.log(np.maximum(2.0 - t, 5e-324))
    return np.where(t < 1.0, lo, hi)
