"""
Large deviations of |Y_n|/n.

Λₙ(t) = (1/n) log E[exp(t|Y_n|)] from exact laws or Monte Carlo samples,
extrapolated to Λ(t), Legendre-Fenchel transformed into I(x), checked for
the shape properties a rate function of a free-product walk must have, and
intersected with log ρ to get the displacement speeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import bisect
from scipy.special import logsumexp

from freebrw.errors import InconsistentInputError, InsufficientDataError
from freebrw.groups import FreeProduct
from freebrw.streams import as_rng
from freebrw.walks import StepLaw, exact_distributions, final_lengths, lower_tail_distribution

log = logging.getLogger(__name__)

SLOPE_TOL = 1e-9


# ---------------- Λₙ ----------------

def log_mgf(t_grid, support, weights) -> Tuple[np.ndarray, np.ndarray]:
    """
    log E[exp(t L)] and the relative variance Var(e^{tL}) / E[e^{tL}]^2 for a
    discrete L with the given support and probabilities, for every t.
    """
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    k = np.asarray(support, dtype=float)
    p = np.asarray(weights, dtype=float)
    keep = p > 0
    k, p = k[keep], p[keep]
    first = logsumexp(t[:, None] * k[None, :], b=p[None, :], axis=1)
    second = logsumexp(2.0 * t[:, None] * k[None, :], b=p[None, :], axis=1)
    rel_var = np.expm1(np.clip(second - 2.0 * first, None, 700.0))
    return first, np.maximum(rel_var, 0.0)


def lambda_n_from_pmf(t_grid, pmf, n: int) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be >= 1")
    vals, _ = log_mgf(t_grid, np.arange(len(pmf)), pmf)
    vals = vals / n
    vals[np.asarray(np.atleast_1d(t_grid)) == 0] = 0.0
    return vals


def lambda_n_from_lengths(t_grid, lengths, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Monte Carlo Λₙ with delta-method standard errors."""
    if n <= 0:
        raise ValueError("n must be >= 1")
    return LengthLaw.from_lengths(n, lengths).evaluate(t_grid)


def lambda_n(G: FreeProduct, law: StepLaw, t: float, n: int, method: str = "exact",
             replicas_or_cap: int = 10**7, rng_state=None) -> Tuple[float, float]:
    """Λₙ(t) and its standard error (0 for the exact method)."""
    if method == "exact":
        dist = exact_distributions(G, law, n, cap=replicas_or_cap)[-1]
        return float(lambda_n_from_pmf([t], dist.length_pmf(), n)[0]), 0.0
    if method == "mc":
        if replicas_or_cap < 1000:
            raise ValueError("mc method needs at least 10^3 replicas")
        lengths = final_lengths(G, law, n, replicas_or_cap, as_rng(rng_state))
        v, se = lambda_n_from_lengths([t], lengths, n)
        return float(v[0]), float(se[0])
    raise ValueError(f"unknown method {method!r}")


# ---------------- grid of Λₙ and its limit ----------------

@dataclass
class LambdaGrid:
    t_grid: np.ndarray
    values: pd.DataFrame                # t, n, value, method, se, rel_err
    lambda_hat: Optional[pd.DataFrame] = None
    notes: List[str] = field(default_factory=list)

    @property
    def ns(self) -> List[int]:
        return sorted(self.values["n"].unique().tolist())


@dataclass
class LengthLaw:
    """
    Law of |Y_n|: exact, the empirical law of `samples` Monte Carlo walks, or
    a lower tail (exact on lengths < `tail_from`, with `tail` mass beyond).
    """
    n: int
    method: str
    support: np.ndarray
    weights: np.ndarray
    samples: int = 0
    tail: float = 0.0
    tail_from: int = 0

    @classmethod
    def exact(cls, n: int, pmf) -> "LengthLaw":
        pmf = np.asarray(pmf, dtype=float)
        return cls(int(n), "exact", np.arange(pmf.size), pmf)

    @classmethod
    def from_lengths(cls, n: int, lengths) -> "LengthLaw":
        k, counts = np.unique(np.asarray(lengths), return_counts=True)
        return cls(int(n), "mc", k, counts / counts.sum(), int(counts.sum()))

    @classmethod
    def lower_tail(cls, n: int, pmf, j_max: int) -> "LengthLaw":
        pmf = np.asarray(pmf, dtype=float)
        return cls(int(n), "lower_tail", np.arange(pmf.size), pmf,
                   tail=max(0.0, 1.0 - math.fsum(pmf)), tail_from=int(j_max) + 1)

    def evaluate(self, t_grid) -> Tuple[np.ndarray, np.ndarray]:
        """
        Λₙ on the grid and its error scale. For Monte Carlo laws that is the
        delta-method standard error sqrt(rel_var / samples) / n; for a lower
        tail it is the bound tail·e^{t·tail_from} / E[e^{tL}; L < tail_from],
        divided by n, which is only finite for t < 0.
        """
        t = np.atleast_1d(np.asarray(t_grid, dtype=float))
        vals, rel_var = log_mgf(t, self.support, self.weights)
        if self.method == "exact":
            se = np.zeros_like(vals)
        elif self.method == "mc":
            se = np.sqrt(rel_var / self.samples) / self.n
        else:
            with np.errstate(over="ignore"):
                bound = np.where(t < 0, self.tail * np.exp(t * self.tail_from - vals), np.inf)
            se = bound / self.n
        vals = vals / self.n
        if self.method != "lower_tail":
            vals[t == 0] = 0.0
            se[t == 0] = 0.0
        return vals, se


def collect_length_laws(G: FreeProduct, law: StepLaw, exact_ns: Sequence[int] = (), mc_ns: Sequence[int] = (),
                        replicas: int = 10_000, rng_state=None, cap: int = 10**7,
                        tail_ns: Sequence[int] = (), tail_j_max: int = 10) -> List[LengthLaw]:
    out: List[LengthLaw] = []
    if exact_ns:
        dists = exact_distributions(G, law, max(exact_ns), cap)
        out += [LengthLaw.exact(n, dists[n].length_pmf()) for n in sorted(set(int(n) for n in exact_ns))]
    for n in sorted(set(int(n) for n in tail_ns)):
        pmf = lower_tail_distribution(G, law, n, tail_j_max, cap).length_pmf()
        out.append(LengthLaw.lower_tail(n, pmf, tail_j_max))
    rng = as_rng(rng_state)
    for n in sorted(set(int(n) for n in mc_ns)):
        out.append(LengthLaw.from_lengths(n, final_lengths(G, law, n, replicas, rng)))
        log.info("length law at n=%d from %d walks", n, replicas)
    return out


def lambda_grid(laws: Sequence[LengthLaw], t_grid) -> LambdaGrid:
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("t grid must be strictly increasing")
    if not laws:
        raise InsufficientDataError("no n requested for the Λ grid")
    frames = []
    for L in laws:
        vals, se = L.evaluate(t)
        frames.append(pd.DataFrame({"t": t, "n": L.n, "value": vals, "method": L.method, "se": se,
                                    "rel_err": se * L.n}))
    grid = LambdaGrid(t, pd.concat(frames, ignore_index=True))
    for n, part in grid.values.groupby("n"):
        bad = convexity_violations(part["t"].to_numpy(), part["value"].to_numpy())
        if bad.size:
            grid.notes.append(f"Λ_{n} not convex at {bad.size} grid points")
    return grid


def build_lambda_grid(G: FreeProduct, law: StepLaw, t_grid, exact_ns: Sequence[int] = (),
                      mc_ns: Sequence[int] = (), replicas: int = 10_000, rng_state=None,
                      cap: int = 10**7, tail_ns: Sequence[int] = (), tail_j_max: int = 10) -> LambdaGrid:
    laws = collect_length_laws(G, law, exact_ns, mc_ns, replicas, rng_state, cap, tail_ns, tail_j_max)
    return lambda_grid(laws, t_grid)


def convexity_violations(x, y, tol: float = 1e-6) -> np.ndarray:
    """Interior indices where the discrete second derivative is below -tol."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        return np.zeros(0, dtype=int)
    ok = np.isfinite(y[:-2]) & np.isfinite(y[1:-1]) & np.isfinite(y[2:])
    left = (y[1:-1] - y[:-2]) / (x[1:-1] - x[:-2])
    right = (y[2:] - y[1:-1]) / (x[2:] - x[1:-1])
    return np.flatnonzero(ok & (right - left < -tol)) + 1


def lower_convex_hull(x, y) -> np.ndarray:
    """Lower convex envelope of the points (x, y), evaluated at x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hull: List[int] = []
    for k in range(x.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j when it lies on or above the chord from i to k
            if (y[j] - y[i]) * (x[k] - x[i]) >= (y[k] - y[i]) * (x[j] - x[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.interp(x, x[hull], y[hull])


def _fit_limit(ns: np.ndarray, vals: np.ndarray, log_correction: bool) -> float:
    inv = 1.0 / ns
    cols = [np.ones_like(inv), inv]
    if log_correction and ns.size >= 3:
        cols.append(np.log(ns) * inv)
    if log_correction and ns.size >= 4:
        cols.append(inv ** 1.5)
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), vals, rcond=None)
    return float(coef[0])


def lambda_limit(grid: LambdaGrid, rel_tol: float = 0.05, log_correction: bool = True,
                 fit_points: int = 4) -> pd.DataFrame:
    """
    Λ̂(t) per grid t.

    A Monte Carlo cell is reliable when the relative error of its moment
    generating function, sqrt(rel_var / samples), is at most `rel_tol`.

    t >= 0: Λₙ(t) at the largest reliable n, tagged upper_bound (Λₙ is
    subadditive in n). t < 0: intercept of a fit Λ + c/n + d log n / n
    (+ e n^{-3/2} once four n are available) over the `fit_points` largest
    reliable n, preferring n of one parity; tagged extrapolated.

    The returned `value` is the lower convex envelope of the per-t values;
    the per-t values stay in `raw`.
    """
    rows = []
    for t, part in grid.values.groupby("t", sort=True):
        if t == 0:
            rows.append({"t": 0.0, "raw": 0.0, "uncertainty": 0.0, "tag": "exact", "n_used": 0})
            continue
        good = part[np.isfinite(part["value"]) & (part["rel_err"] <= rel_tol)]
        good = good.sort_values(["n", "method"]).drop_duplicates("n", keep="first")
        if good["n"].nunique() < 3:
            raise InsufficientDataError(f"Λ at t={t}: {good['n'].nunique()} reliable n, need 3")
        top = good.loc[good["n"].idxmax()]
        if t > 0:
            rows.append({"t": float(t), "raw": float(top["value"]), "uncertainty": float(top["se"]),
                         "tag": "upper_bound", "n_used": int(top["n"])})
            continue
        same = good[good["n"] % 2 == int(top["n"]) % 2]
        use = (same if len(same) >= 3 else good).nlargest(max(3, fit_points), "n")
        value = _fit_limit(use["n"].to_numpy(dtype=float), use["value"].to_numpy(), log_correction)
        unc = abs(value - float(top["value"])) + float(use["se"].max())
        rows.append({"t": float(t), "raw": value, "uncertainty": unc, "tag": "extrapolated",
                     "n_used": int(top["n"])})
    out = pd.DataFrame(rows)
    t = out["t"].to_numpy()
    out["value"] = lower_convex_hull(t, out["raw"].to_numpy())
    moved = np.flatnonzero(out["raw"].to_numpy() - out["value"].to_numpy() > 1e-9)
    if moved.size:
        msg = f"Λ̂ replaced by its convex envelope at {moved.size} t points (largest shift " \
              f"{float((out['raw'] - out['value']).max()):.3g})"
        log.info(msg)
        grid.notes.append(msg)
    out = out[["t", "value", "raw", "uncertainty", "tag", "n_used"]]
    grid.lambda_hat = out
    return out


# ---------------- Legendre-Fenchel transform ----------------

@dataclass
class RateFunction:
    x_grid: np.ndarray
    values: np.ndarray
    uncertainty: np.ndarray
    uncertain: np.ndarray
    beta: float
    ell: float
    K: float
    neg_log_r: Optional[float] = None
    raw_I0: Optional[float] = None
    slope_range: Tuple[float, float] = (0.0, 0.0)
    notes: List[str] = field(default_factory=list)
    neg_log_r_uncertainty: float = 0.0

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def branch(self) -> np.ndarray:
        tag = np.where(self.x_grid < self.ell, "decreasing", "increasing").astype(object)
        tag[~self.finite] = "infinite"
        return tag

    def value_at(self, x: float) -> float:
        f = self.finite
        xs, ys = self.x_grid[f], self.values[f]
        if xs.size == 0 or x < xs[0] - 1e-12 or x > xs[-1] + 1e-12:
            return float("inf")
        return float(np.interp(x, xs, ys))

    def inf_above(self, a: float) -> float:
        """inf of I over [a, ∞)."""
        keep = self.finite & (self.x_grid >= a - 1e-12)
        return float(self.values[keep].min()) if keep.any() else float("inf")

    def inf_below(self, a: float) -> float:
        keep = self.finite & (self.x_grid <= a + 1e-12)
        return float(self.values[keep].min()) if keep.any() else float("inf")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.x_grid, "I": self.values, "uncertainty": self.uncertainty,
            "branch": self.branch(), "uncertain": self.uncertain,
        })

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def _parabola_max(t0, t1, t2, y0, y1, y2):
    """Vertex value of the parabola through three points where it is a maximum inside [t0, t2]."""
    d = (t0 - t1) * (t0 - t2) * (t1 - t2)
    A = (t2 * (y1 - y0) + t1 * (y0 - y2) + t0 * (y2 - y1)) / d
    B = (t2 * t2 * (y0 - y1) + t1 * t1 * (y2 - y0) + t0 * t0 * (y1 - y2)) / d
    C = (t1 * t2 * (t1 - t2) * y0 + t2 * t0 * (t2 - t0) * y1 + t0 * t1 * (t0 - t1) * y2) / d
    with np.errstate(divide="ignore", invalid="ignore"):
        tv = -B / (2 * A)
        yv = C - B * B / (4 * A)
    good = (A < 0) & (tv >= t0) & (tv <= t2) & np.isfinite(yv)
    return np.where(good, np.maximum(yv, y1), y1)


def legendre_transform(t_grid, lambda_values, x_grid=None, K: Optional[float] = None,
                       ell: Optional[float] = None, neg_log_r: Optional[float] = None,
                       lambda_uncertainty=None, neg_log_r_uncertainty: float = 0.0,
                       n_x: int = 512) -> RateFunction:
    """
    I(x) = max over grid t of (x t − Λ̂(t)), refined by the parabola through
    the argmax and its neighbours.

    x outside the achieved slope range of Λ̂ is +inf when Λ̂ is affine at that
    end (the slope has saturated, so x lies beyond the domain) and otherwise
    kept as a lower bound with the `uncertain` flag set.

    `neg_log_r` is an independent estimate of −log r. It is carried on the
    result next to the transform's own I(0) and never replaces it.
    """
    t = np.asarray(t_grid, dtype=float)
    lam = np.asarray(lambda_values, dtype=float)
    if t.size < 3 or np.any(np.diff(t) <= 0):
        raise ValueError("t grid must be strictly increasing with at least 3 points")
    if not np.all(np.isfinite(lam)):
        raise ValueError("Λ̂ must be finite on the t grid")
    lam_u = np.zeros_like(lam) if lambda_uncertainty is None else np.asarray(lambda_uncertainty, dtype=float)

    slopes = np.diff(lam) / np.diff(t)
    s_lo, s_hi = float(slopes[0]), float(slopes[-1])
    if K is None:
        K = max(1.0, math.ceil(s_hi - SLOPE_TOL))
    x = np.linspace(0.0, K, n_x) if x_grid is None else np.asarray(x_grid, dtype=float)

    vals = x[:, None] * t[None, :] - lam[None, :]
    j = np.argmax(vals, axis=1)
    best = vals[np.arange(x.size), j]
    inner = (j > 0) & (j < t.size - 1)
    if inner.any():
        ji = j[inner]
        rows = np.flatnonzero(inner)
        best[inner] = _parabola_max(t[ji - 1], t[ji], t[ji + 1],
                                    vals[rows, ji - 1], vals[rows, ji], vals[rows, ji + 1])
    unc = lam_u[j].copy()

    left_affine = slopes.size > 1 and abs(slopes[1] - slopes[0]) <= SLOPE_TOL
    right_affine = slopes.size > 1 and abs(slopes[-1] - slopes[-2]) <= SLOPE_TOL
    below = x < s_lo - SLOPE_TOL
    above = x > s_hi + SLOPE_TOL
    values = best.copy()
    uncertain = np.zeros(x.size, dtype=bool)
    values[x > K + SLOPE_TOL] = np.inf
    if left_affine:
        values[below] = np.inf
    else:
        uncertain |= below
    if right_affine:
        values[above] = np.inf
    else:
        uncertain |= above & np.isfinite(values)
    values = np.where(np.isfinite(values), np.maximum(values, 0.0), values)

    notes: List[str] = []
    if (uncertain & np.isfinite(values)).any():
        lo, hi = s_lo, s_hi
        msg = f"slope range of Λ̂ is [{lo:.6g}, {hi:.6g}]; I outside it is a lower bound"
        log.warning(msg)
        notes.append(msg)

    zero = np.flatnonzero(np.isclose(x, 0.0, atol=1e-15))
    raw_I0 = float(values[zero[0]]) if zero.size else None

    finite = np.isfinite(values)
    beta = float(x[finite].max()) if finite.any() else float("nan")
    if ell is None:
        ell = float(x[finite][np.argmin(values[finite])]) if finite.any() else float("nan")
    return RateFunction(x, values, unc, uncertain, beta, float(ell), float(K), neg_log_r, raw_I0,
                        (s_lo, s_hi), notes, float(neg_log_r_uncertainty))


def extend_t_grid(evaluate: Callable[[np.ndarray], np.ndarray], t_grid, K: float,
                  t_limit: float = 240.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Widen a uniform t grid until the end slopes of Λ̂ cover [0, K], an end
    turns affine, or |t| reaches t_limit. `evaluate` maps t values to Λ̂.
    """
    t = np.asarray(t_grid, dtype=float)
    lam = np.asarray(evaluate(t), dtype=float)
    step = float(t[1] - t[0])
    while True:
        slopes = np.diff(lam) / np.diff(t)
        lo_ok = slopes[0] <= SLOPE_TOL or abs(slopes[1] - slopes[0]) <= SLOPE_TOL
        hi_ok = slopes[-1] >= K - SLOPE_TOL or abs(slopes[-1] - slopes[-2]) <= SLOPE_TOL
        span = max(abs(t[0]), abs(t[-1]))
        if (lo_ok and hi_ok) or span >= t_limit:
            return t, lam
        new_span = min(2 * span, t_limit)
        left = np.arange(-new_span, t[0] - step / 2, step) if not lo_ok else np.zeros(0)
        right = np.arange(t[-1] + step, new_span + step / 2, step) if not hi_ok else np.zeros(0)
        log.info("extending t grid to [%g, %g]", left[0] if left.size else t[0], right[-1] if right.size else t[-1])
        t = np.concatenate([left, t, right])
        lam = np.concatenate([np.asarray(evaluate(left), dtype=float) if left.size else np.zeros(0), lam,
                              np.asarray(evaluate(right), dtype=float) if right.size else np.zeros(0)])


def biconjugate_gap(I: RateFunction, t_grid, lambda_values) -> pd.DataFrame:
    """sup_x (t x − I(x)) against Λ̂(t) on the t grid."""
    t = np.asarray(t_grid, dtype=float)
    lam = np.asarray(lambda_values, dtype=float)
    f = I.finite
    xs, ys = I.x_grid[f], I.values[f]
    conj = np.max(t[:, None] * xs[None, :] - ys[None, :], axis=1)
    return pd.DataFrame({"t": t, "lambda": lam, "biconjugate": conj, "gap": np.abs(conj - lam)})


# ---------------- property report ----------------

@dataclass
class PropertyCheck:
    name: str
    passed: bool
    witness: Optional[str] = None


@dataclass
class PropertyReport:
    checks: List[PropertyCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_name(self) -> Dict[str, PropertyCheck]:
        return {c.name: c for c in self.checks}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"property": c.name, "passed": c.passed, "witness": c.witness or ""}
                             for c in self.checks])


def check_rate_properties(I: RateFunction, ell: Optional[float] = None, r: Optional[float] = None,
                          zero_tol: float = 5e-3, mono_tol: float = 1e-6, convex_tol: float = 1e-6,
                          strict_gap: Optional[float] = None, r_rel_tol: float = 0.15) -> PropertyReport:
    x, y = I.x_grid, I.values
    f = I.finite
    ell = I.ell if ell is None else float(ell)
    checks: List[PropertyCheck] = []

    idx = np.flatnonzero(f)
    if idx.size == 0:
        return PropertyReport([PropertyCheck("finite_interval", False, "no finite values")])
    contiguous = idx[-1] - idx[0] + 1 == idx.size
    starts_at_zero = idx[0] == 0 or idx.size == 1
    checks.append(PropertyCheck(
        "finite_interval", bool(contiguous and starts_at_zero),
        None if contiguous and starts_at_zero else f"finite on indices {idx[0]}..{idx[-1]} with {idx.size} points",
    ))

    at_ell = I.value_at(ell)
    checks.append(PropertyCheck("zero_at_drift", at_ell <= zero_tol,
                                None if at_ell <= zero_tol else f"I({ell:.6g}) = {at_ell:.6g}"))

    up = f & (x >= ell) & (x < I.beta)
    xs, ys = x[up], y[up]
    # values within zero_tol of 0 count as 0; the minimiser of I may sit slightly off ℓ̂
    drops = np.flatnonzero((np.diff(ys) < -mono_tol) & (ys[:-1] > zero_tol))
    witness = None if drops.size == 0 else f"I decreases between x={xs[drops[0]]:.6g} and {xs[drops[0] + 1]:.6g}"
    if drops.size == 0 and xs.size > 1:
        gap = strict_gap if strict_gap is not None else max(0.05 * I.K, 4 * float(np.diff(xs).max()))
        anchors = np.arange(xs[0], xs[-1], gap)
        vals = np.interp(anchors, xs, ys)
        flat = np.flatnonzero(np.diff(vals) <= 0)
        if flat.size:
            witness = f"I not strictly increasing from x={anchors[flat[0]]:.6g} to {anchors[flat[0] + 1]:.6g}"
    checks.append(PropertyCheck("monotone_above_drift", witness is None, witness))

    x0 = max(ell, float(x[x > 0].min()) if (x > 0).any() else ell)
    part = f & (x >= x0) & (x < I.beta) & (x > 0) & (y > zero_tol)
    ratio = y[part] / x[part]
    drops = np.flatnonzero(np.diff(ratio) < -mono_tol)
    checks.append(PropertyCheck("ratio_monotone", drops.size == 0,
                                None if drops.size == 0 else f"I(x)/x decreases at x={x[part][drops[0]]:.6g}"))

    bad = convexity_violations(x[f], y[f], convex_tol)
    checks.append(PropertyCheck("convex", bad.size == 0,
                                None if bad.size == 0 else f"second difference < -{convex_tol} at x={x[f][bad[0]]:.6g}"))

    if r is not None and 0 < r <= 1:
        # the transform's own I(0), not the anchor carried in neg_log_r
        target = -math.log(r)
        got = float(I.raw_I0) if I.raw_I0 is not None else float(y[0])
        ok = math.isfinite(got) and abs(got - target) <= r_rel_tol * max(target, 1e-12)
        checks.append(PropertyCheck("I0_matches_r", ok, None if ok else f"I(0) = {got:.6g}, -log r = {target:.6g}"))
    return PropertyReport(checks)


# ---------------- speeds ----------------

@dataclass
class SpeedSolution:
    v_max: float
    v_max_case: str
    v_min: float
    v_min_case: str
    log_rho: float
    v_max_band: Tuple[float, float]
    v_min_band: Tuple[float, float]
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "v_max": self.v_max, "v_max_case": self.v_max_case,
            "v_min": self.v_min, "v_min_case": self.v_min_case,
            "log_rho": self.log_rho,
            "v_max_band": list(self.v_max_band), "v_min_band": list(self.v_min_band),
            "notes": list(self.notes),
        }


def _root_increasing(xs: np.ndarray, ys: np.ndarray, level: float) -> Optional[float]:
    """Smallest x with interpolated y(x) = level on a nondecreasing branch."""
    if xs.size == 0 or level > ys[-1]:
        return None
    if level <= ys[0]:
        return float(xs[0])
    k = int(np.searchsorted(ys, level, side="left"))
    lo, hi = xs[k - 1], xs[k]
    fn = lambda v: float(np.interp(v, xs, ys)) - level
    if fn(hi) == 0 or hi - lo <= 1e-6:
        return float(hi)
    return float(bisect(fn, lo, hi, xtol=1e-6))


def solve_speeds(I: RateFunction, rho: float, r: Optional[float] = None) -> SpeedSolution:
    if not rho > 1:
        raise InconsistentInputError(f"rho must be > 1, got {rho}")
    L = math.log(rho)
    f = I.finite
    ell = I.ell
    notes: List[str] = []

    # increasing branch [ℓ, β̂]
    up = f & (I.x_grid >= ell - 1e-12)
    xs = I.x_grid[up]
    if xs.size == 0:
        raise InconsistentInputError("rate function has no finite value at or above the drift")
    base = np.maximum.accumulate(I.values[up])
    unc = I.uncertainty[up]

    def vmax_for(ys):
        root = _root_increasing(xs, ys, L)
        return (float(I.beta), "sup-domain") if root is None else (root, "intersection")

    v_max, v_max_case = vmax_for(base)
    hi_band = vmax_for(np.maximum.accumulate(I.values[up] + unc))[0]
    lo_band = vmax_for(np.maximum.accumulate(np.maximum(I.values[up] - unc, 0.0)))[0]
    v_max_band = (min(hi_band, v_max), max(lo_band, v_max))
    if v_max_case == "sup-domain":
        notes.append(f"log rho = {L:.6g} above I(β̂⁻) = {base[-1]:.6g}; v_max = β̂")

    # decreasing branch [0, ℓ]
    neg_log_r = -math.log(r) if r is not None and r > 0 else I.neg_log_r
    if neg_log_r is None:
        neg_log_r = float(I.values[0])
    if r is not None and r >= 1 - 1e-9:
        notes.append("r = 1 (no exponential growth); v_min case analysis unreliable")
    if L > neg_log_r:
        v_min, v_min_case, v_min_band = 0.0, "zero", (0.0, 0.0)
    else:
        down = f & (I.x_grid <= ell + 1e-12)
        dx = I.x_grid[down][::-1]
        dy = np.maximum.accumulate(I.values[down][::-1])
        du = I.uncertainty[down][::-1]

        def vmin_for(ys):
            # walking left from ℓ, the first x where I reaches L
            root = _root_increasing(-dx, ys, L)
            return float(dx[-1]) if root is None else -root

        v_min = vmin_for(dy)
        v_min_case = "intersection"
        a = vmin_for(np.maximum.accumulate(I.values[down][::-1] + du))
        b = vmin_for(np.maximum.accumulate(np.maximum(I.values[down][::-1] - du, 0.0)))
        v_min_band = (min(a, b, v_min), max(a, b, v_min))
        if dx.size == 1:
            notes.append("rate function finite at a single point; v_min set to it")
    return SpeedSolution(v_max, v_max_case, v_min, v_min_case, L, v_max_band, v_min_band, notes)
