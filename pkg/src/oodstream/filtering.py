"""The adaptive in-out-aware filter.

Score statistics estimated on training in-distribution data fix two margins:
samples scoring above the inner margin are treated as pseudo-ID, samples
below the outlier margin as pseudo-OOD, and the band in between abstains.
The inner margin never moves; the outlier margin follows a greedy running
mean of the pseudo-OOD scores it accepts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as _replace
from enum import Enum

import numpy as np


class FilterDecision(Enum):
    PSEUDO_ID = "pseudo_id"
    PSEUDO_OOD = "pseudo_ood"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class IdStats:
    """Mean / population standard deviation of in-distribution scores."""

    mu_in: float
    sigma_in: float
    n_samples: int


@dataclass(frozen=True)
class Margins:
    """Filter state. ``m_in`` is fixed after init; ``m_out`` is a running mean.

    ``m_count`` counts recorded pseudo-OOD scores, including the virtual
    anchor the initialization contributes in the default mode.
    """

    m_in: float
    m_out: float
    m_count: int
    k1: float
    k2: float


def estimate_id_stats(scores) -> IdStats:
    """Arithmetic mean and population standard deviation (sqrt of sum((s-mu)^2)/N)."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot estimate score statistics from an empty list")
    mu = float(np.mean(arr))
    sigma = float(math.sqrt(np.mean((arr - mu) ** 2)))
    return IdStats(mu_in=mu, sigma_in=sigma, n_samples=int(arr.size))


def init_margins(stats: IdStats, k1: float, k2: float, *,
                 literal_m0: bool = False) -> Margins:
    """m_in = mu + k1*sigma, m_out = mu - k2*sigma.

    The initial m_out normally counts as one virtual observation so it
    anchors the running mean; ``literal_m0`` starts the counter at zero
    instead, letting the first accepted score replace it entirely.
    """
    if k1 < 0 or k2 < 0:
        raise ValueError("k1 and k2 must be nonnegative")
    return Margins(
        m_in=stats.mu_in + k1 * stats.sigma_in,
        m_out=stats.mu_in - k2 * stats.sigma_in,
        m_count=0 if literal_m0 else 1,
        k1=k1,
        k2=k2,
    )


def classify(margins: Margins, score: float) -> FilterDecision:
    """Strict comparisons; scores exactly on a margin abstain."""
    if score > margins.m_in:
        return FilterDecision.PSEUDO_ID
    if score < margins.m_out:
        return FilterDecision.PSEUDO_OOD
    return FilterDecision.ABSTAIN


def update_outlier_margin(margins: Margins, score: float) -> Margins:
    """Greedy running-mean update: only scores below the current margin count."""
    if score >= margins.m_out:
        return margins
    m = margins.m_count
    new_out = (m * margins.m_out + score) / (m + 1)
    return _replace(margins, m_out=new_out, m_count=m + 1)
