"""Compiled hot loops for channel simulation.

The Monte Carlo harness pushes ~1e10 Laplace draws through the
non-interactive channel; fusing the inverse-CDF transform with the
column reduction keeps that affordable on one core. The scalar transform
here must stay bit-identical to :func:`privsum.rng.laplace_from_uniform`.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def laplace_colsum(u: np.ndarray, acc: np.ndarray) -> None:
    """Accumulate column sums of standard Laplace draws built from ``u``.

    ``u`` is an (rows, K) block of uniforms; ``acc`` is the running
    length-K sum, updated row by row in index order.
    """
    rows, K = u.shape
    for i in range(rows):
        for k in range(K):
            t = 2.0 * u[i, k]
            if t < 1.0:
                w = np.log(max(t, 5e-324))
            else:
                w = -np.log(max(2.0 - t, 5e-324))
            acc[k] += w


@numba.njit(cache=True)
def laplace_fill(u: np.ndarray, out: np.ndarray) -> None:
    """Write standard Laplace draws built from ``u`` into ``out`` (same shape)."""
    rows, K = u.shape
    for i in range(rows):
        for k in range(K):
            t = 2.0 * u[i, k]
            if t < 1.0:
                out[i, k] = np.log(max(t, 5e-324))
            else:
                out[i, k] = -np.log(max(2.0 - t, 5e-324))
