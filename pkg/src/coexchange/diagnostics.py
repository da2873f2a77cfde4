"""Convergence and quality diagnostics for multi-chain output."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

QUANTILE_LEVELS = (0.05, 0.25, 0.50, 0.75, 0.95)


def psrf(chains: Sequence[Sequence[float]]) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is cut into two halves (the middle draw is dropped for odd
    lengths) and the classic between/within comparison is applied to the
    ``2 * len(chains)`` half-chains:

        R = sqrt(((n - 1) / n * W + B / n) / W)

    Returns 1.0 when every half-chain is the same constant and ``inf`` when
    the half-chains are constant but differ.
    """
    arrs = [np.asarray(c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise ValueError("psrf needs at least 2 chains")
    lengths = {a.size for a in arrs}
    if len(lengths) != 1:
        raise ValueError(f"chains must have equal length, got {sorted(lengths)}")
    n_total = lengths.pop()
    if n_total < 4:
        raise ValueError("each chain needs at least 4 draws")
    half = n_total // 2
    x = np.vstack([np.vstack([a[:half], a[n_total - half:]]) for a in arrs])
    n = half
    if np.all(np.ptp(x, axis=1) == 0.0):
        # constant half-chains: decide exactly rather than on rounding residue
        return 1.0 if np.ptp(x[:, 0]) == 0.0 else math.inf
    means = x.mean(axis=1)
    within = float(np.mean(x.var(axis=1, ddof=1)))
    between = float(n * means.var(ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else math.inf
    return math.sqrt(((n - 1) / n * within + between / n) / within)


def mcse_batch_means(series: Sequence[float]) -> float:
    """Monte Carlo standard error of the mean using batches of size floor(sqrt(n))."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 16:
        raise ValueError(f"batch means needs at least 16 values, got {n}")
    size = int(math.isqrt(n))
    n_batches = n // size
    x = x[n - n_batches * size:]
    batch = x.reshape(n_batches, size).mean(axis=1)
    var = size * batch.var(ddof=1)
    return float(math.sqrt(max(var, 0.0) / x.size))


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float
    mcse: float
    n: int
    mcse_available: bool = True


def summarize(samples: Sequence[float]) -> Summary:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    qs = np.quantile(x, QUANTILE_LEVELS)  # numpy's default "linear" is type 7
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    if x.size >= 16:
        mcse, ok = mcse_batch_means(x), True
    else:
        mcse, ok = 0.0, False
    return Summary(float(x.mean()), sd, *(float(q) for q in qs), mcse=mcse, n=int(x.size), mcse_available=ok)


def correlations(draws) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation matrix of the columns of ``draws``.

    Returns ``(corr, constant)`` where ``constant`` flags zero-variance
    columns; their off-diagonal entries are set to 0 and the diagonal to 1.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need a 2-d array with at least 3 draws")
    centred = x - x.mean(axis=0)
    # rescale first so tiny or huge columns neither underflow nor overflow
    peak = np.max(np.abs(centred), axis=0)
    centred = centred / np.where(peak > 0, peak, 1.0)
    sd = np.sqrt(np.sum(centred**2, axis=0))
    # exact test; a centred constant column can carry rounding residue
    constant = (np.ptp(x, axis=0) == 0.0) | (sd == 0.0)
    z = centred / np.where(constant, 1.0, sd)
    corr = z.T @ z
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    return corr, constant
