"""Paired Wilcoxon signed-rank test.

Zero differences are dropped and tied magnitudes share their mid-rank. Up to
``EXACT_MAX_N`` pairs the two-sided p-value is exact, by enumerating every
sign assignment of the ranks; above that the normal approximation with the
tie-corrected variance is used.
"""

from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import norm, rankdata

from src.utils.errors import ContractViolation, UndefinedTestError

EXACT_MAX_N = 20


class WilcoxonResult(BaseModel):
    n: int = Field(..., ge=1, description="Pairs left after dropping zero differences.")
    statistic: float = Field(..., ge=0, description="W = min(W+, W-).")
    w_plus: float = Field(..., ge=0)
    p_value: float = Field(..., gt=0, le=1)
    method: Literal["exact", "normal"]


def signed_rank_sums(ranks: np.ndarray) -> np.ndarray:
    """W+ for every one of the 2^n sign assignments."""
    sums = np.zeros(1)
    for rank in ranks:
        sums = np.concatenate([sums, sums + rank])
    return sums


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    sums = signed_rank_sums(ranks)
    # Mid-ranks are multiples of 0.5, so the sums are exact in float64
    tol = 1e-9
    lower = np.count_nonzero(sums <= w_plus + tol) / sums.size
    upper = np.count_nonzero(sums >= w_plus - tol) / sums.size
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p(ranks: np.ndarray, w_plus: float, magnitudes: np.ndarray) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(magnitudes, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    if variance <= 0:
        raise UndefinedTestError("Signed-rank variance is zero.")
    z = (w_plus - mean) / np.sqrt(variance)
    # Far tails underflow to 0, which is not a valid p-value
    return float(min(1.0, max(2.0 * norm.sf(abs(z)), np.finfo(float).tiny)))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ContractViolation("Wilcoxon needs two equal-length, non-empty samples.")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ContractViolation("Wilcoxon samples must be finite.")
    diff = a - b
    diff = diff[diff != 0]
    if diff.size == 0:
        raise UndefinedTestError("All paired differences are zero.")

    magnitudes = np.abs(diff)
    ranks = rankdata(magnitudes, method="average")
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    if diff.size <= EXACT_MAX_N:
        p_value, method = _exact_p(ranks, w_plus), "exact"
    else:
        p_value, method = _normal_p(ranks, w_plus, magnitudes), "normal"
    return WilcoxonResult(
        n=int(diff.size),
        statistic=min(w_plus, w_minus),
        w_plus=w_plus,
        p_value=p_value,
        method=method,
    )
