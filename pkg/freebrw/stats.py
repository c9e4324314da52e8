from __future__ import annotations

import math
from typing import Tuple

import numpy as np
from scipy import stats as sps


def mean_and_se(samples) -> Tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def z_score(estimate: float, se: float, target: float) -> float:
    if se == 0 or not np.isfinite(se):
        return 0.0 if estimate == target else float("inf")
    return (estimate - target) / se


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def sigma_for_simultaneous(cells: int, level: float = 0.9973) -> float:
    """Bonferroni-adjusted normal quantile for `cells` simultaneous two-sided bands."""
    cells = max(1, int(cells))
    return float(sps.norm.ppf(1.0 - (1.0 - level) / (2 * cells)))


def multinomial_band_violations(counts, probs, sigmas: float = 3.0) -> np.ndarray:
    """
    Indices of cells whose empirical frequency falls outside
    p ± sigmas·sqrt(p(1-p)/N); cells with p = 0 must be empty.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    total = counts.sum()
    freq = counts / total
    half = sigmas * np.sqrt(probs * (1.0 - probs) / total)
    bad = np.abs(freq - probs) > half + 1e-15
    return np.flatnonzero(bad)
