"""
Branching random walk on a free product.

Generations are grown breadth-first on a `WordStacks` frontier: every
particle draws its number of children from π, children copy the parent's
word and take an independent μ-step. Several independent trees can share
one frontier (a forest), each row remembering which tree it belongs to.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from freebrw.errors import CapExceededError, ConfigError
from freebrw.groups import IDENTITY, FreeProduct, Word
from freebrw.stats import mean_and_se, z_score
from freebrw.streams import as_rng
from freebrw.walks import ExactDistribution, StepLaw, WordStacks, exact_distribution

log = logging.getLogger(__name__)


# ---------------- offspring law ----------------

@dataclass(frozen=True)
class OffspringLaw:
    support: Tuple[int, ...]
    probs: Tuple[float, ...]

    @classmethod
    def build(cls, pmf: Mapping[int, float]) -> "OffspringLaw":
        problems: List[str] = []
        items = sorted((int(k), float(p)) for k, p in pmf.items())
        if any(k < 0 for k, _ in items):
            problems.append("offspring: negative child count")
        if any(p < 0 for _, p in items):
            problems.append("offspring: negative probability")
        total = math.fsum(p for _, p in items)
        if abs(total - 1.0) > 1e-12:
            problems.append(f"offspring: pmf sums to {total!r}, not 1")
        if any(k == 0 and p > 0 for k, p in items):
            problems.append("A2 violated: pi(0) > 0 (every particle must have at least one child)")
        items = [(k, p) for k, p in items if p > 0]
        rho = math.fsum(k * p for k, p in items)
        if not rho > 1:
            problems.append(f"A1 violated: rho = {rho!r} must satisfy 1 < rho < inf")
        if problems:
            raise ConfigError(problems)
        return cls(tuple(k for k, _ in items), tuple(p for _, p in items))

    @property
    def rho(self) -> float:
        return math.fsum(k * p for k, p in zip(self.support, self.probs))

    @property
    def pmf(self) -> Dict[int, float]:
        return dict(zip(self.support, self.probs))

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.minimum(np.searchsorted(cdf, rng.random(int(size)), side="right"), len(self.probs) - 1)
        return np.asarray(self.support, dtype=np.int64)[idx]

    def generating_function(self, s: float) -> float:
        return math.fsum(p * s ** k for k, p in zip(self.support, self.probs))


# ---------------- particles and generations ----------------

@dataclass
class Particle:
    generation: int
    position: Word
    length: int
    parent: Optional[int]


@dataclass
class GenerationStats:
    n: int
    population: int
    max_disp: int
    min_disp: int
    histogram: np.ndarray

    @property
    def mean_disp(self) -> float:
        k = np.arange(self.histogram.size)
        return float(np.dot(k, self.histogram) / max(self.population, 1))

    @classmethod
    def of(cls, n: int, lengths: np.ndarray) -> "GenerationStats":
        return cls(n, int(lengths.size), int(lengths.max()), int(lengths.min()), np.bincount(lengths))


@dataclass
class BrwRun:
    stats: List[GenerationStats]
    truncated: bool = False
    frontier: Optional[List[Particle]] = None

    def to_frame(self, replica: int = 0) -> pd.DataFrame:
        return pd.DataFrame([
            {"replica": replica, "n": s.n, "population": s.population, "max": s.max_disp,
             "min": s.min_disp, "mean": s.mean_disp}
            for s in self.stats
        ])


def grow(frontier: WordStacks, pi: OffspringLaw, law: StepLaw, rng: np.random.Generator,
         pop_cap: int) -> Tuple[WordStacks, np.ndarray]:
    """
    One generation: children of every row, each moved by an independent μ-step.
    Returns the children and their parent rows.
    """
    counts = pi.draw(rng, frontier.size)
    total = int(counts.sum())
    if total > pop_cap:
        raise CapExceededError("population", total, pop_cap)
    parent = np.repeat(np.arange(frontier.size), counts)
    children = frontier.take(parent)
    children.step(law, rng)
    return children, parent


def simulate_brw(G: FreeProduct, law: StepLaw, pi: OffspringLaw, n: int, pop_cap: int = 10**7,
                 rng_state=None, start: Word = IDENTITY, dump_frontier: bool = False) -> BrwRun:
    """
    Run n generations from a single particle at `start`. Hitting pop_cap stops
    the run; the stats gathered so far come back with truncated=True.
    """
    start = G.validate(start)
    rng = as_rng(rng_state)
    if pi.rho ** n > pop_cap:
        log.warning("expected population rho^n = %.3g exceeds pop_cap %d", pi.rho ** n, pop_cap)
    frontier = WordStacks(G, 1, start)
    stats = [GenerationStats.of(0, frontier.length)]
    parent = np.zeros(1, dtype=np.int64)
    for g in range(1, int(n) + 1):
        try:
            frontier, parent = grow(frontier, pi, law, rng, pop_cap)
        except CapExceededError as err:
            log.warning("simulate_brw stopped at generation %d: %s", g, err)
            return BrwRun(stats, truncated=True)
        stats.append(GenerationStats.of(g, frontier.length))
        log.debug("generation %d: %d particles", g, frontier.size)
    dump = None
    if dump_frontier:
        dump = [Particle(int(n), w, int(l), int(p) if n > 0 else None)
                for w, l, p in zip(frontier.words(), frontier.length, parent)]
    return BrwRun(stats, truncated=False, frontier=dump)


def exceedance_fraction(runs: List[BrwRun], a: float, n: int) -> float:
    """Fraction of runs with a generation-n particle at distance >= n·a."""
    hits = [r.stats[n].max_disp >= n * a for r in runs if len(r.stats) > n]
    return float(np.mean(hits)) if hits else float("nan")


# ---------------- many-to-one ----------------

@dataclass(frozen=True)
class TestFunction:
    """f(x) from a fixed family: 'one', 'word' (δ_w), 'length_at_least' (|x| >= c), 'exp_length' (e^{t|x|})."""
    kind: str
    word: Word = IDENTITY
    threshold: int = 0
    t: float = 0.0

    __test__ = False

    @property
    def label(self) -> str:
        if self.kind == "word":
            return "delta_" + ("e" if not self.word else "-".join(f"{l.factor}:{l.element}" for l in self.word))
        if self.kind == "length_at_least":
            return f"length_ge_{self.threshold}"
        if self.kind == "exp_length":
            return f"exp_{self.t:g}_length"
        return "one"

    def on_batch(self, stacks: WordStacks) -> np.ndarray:
        if self.kind == "one":
            return np.ones(stacks.size)
        if self.kind == "length_at_least":
            return (stacks.length >= self.threshold).astype(float)
        if self.kind == "exp_length":
            return np.exp(self.t * stacks.length)
        if self.kind == "word":
            h = len(self.word)
            hit = stacks.height == h
            if h:
                codes = np.asarray([stacks.codes.code(l) for l in self.word])
                hit &= np.all(stacks.stack[:, :h] == codes, axis=1)
            return hit.astype(float)
        raise ValueError(f"unknown test function {self.kind!r}")

    def on_word(self, w: Word, length: int) -> float:
        if self.kind == "one":
            return 1.0
        if self.kind == "length_at_least":
            return float(length >= self.threshold)
        if self.kind == "exp_length":
            return math.exp(self.t * length)
        if self.kind == "word":
            return float(tuple(w) == tuple(self.word))
        raise ValueError(f"unknown test function {self.kind!r}")


@dataclass
class ManyToOneReport:
    function: str
    n: int
    replicas: int
    estimate: float
    se: float
    exact: float
    z: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _forest_sums(G, law, pi, n, f_list, replicas, rng, pop_cap) -> np.ndarray:
    """Per tree and per test function, Σ_{|v|=n} f(X_v), trees grown in chunks."""
    per_tree = max(pi.rho ** n, 1.0)
    chunk = max(1, min(int(replicas), int(pop_cap // (4 * per_tree))))
    out = np.zeros((int(replicas), len(f_list)))
    done = 0
    while done < replicas:
        b = min(chunk, int(replicas) - done)
        frontier = WordStacks(G, b)
        owner = np.arange(b)
        for _ in range(int(n)):
            frontier, parent = grow(frontier, pi, law, rng, pop_cap)
            owner = owner[parent]
        for k, f in enumerate(f_list):
            out[done: done + b, k] = np.bincount(owner, weights=f.on_batch(frontier), minlength=b)
        done += b
    return out


def many_to_one_check(G: FreeProduct, law: StepLaw, pi: OffspringLaw, n: int,
                      f: Union[TestFunction, List[TestFunction]], replicas: int, rng_state=None,
                      pop_cap: int = 10**7, dist: Optional[ExactDistribution] = None) -> List[ManyToOneReport]:
    """E[Σ_{|v|=n} f(X_v)] by simulation against ρⁿ·E[f(Y_n)] from the exact law."""
    f_list = [f] if isinstance(f, TestFunction) else list(f)
    rng = as_rng(rng_state)
    dist = dist if dist is not None else exact_distribution(G, law, n)
    sums = _forest_sums(G, law, pi, n, f_list, replicas, rng, pop_cap)
    reports = []
    for k, fn in enumerate(f_list):
        est, se = mean_and_se(sums[:, k])
        exact = pi.rho ** n * dist.expectation(fn.on_word)
        reports.append(ManyToOneReport(fn.label, int(n), int(replicas), est, se, exact, z_score(est, se, exact)))
    return reports


def markov_bounds(G: FreeProduct, law: StepLaw, pi: OffspringLaw, n: int, a: float,
                  dist: Optional[ExactDistribution] = None) -> Dict[str, float]:
    """
    First-moment bounds: P(some |X_v| >= na) <= ρⁿP(|Y_n| >= na) and
    P(some |X_v| <= na) <= ρⁿP(|Y_n| <= na), both exact.
    """
    dist = dist if dist is not None else exact_distribution(G, law, n)
    pmf = dist.length_pmf()
    k = np.arange(pmf.size)
    rho_n = pi.rho ** n
    return {
        "n": int(n), "a": float(a),
        "upper_tail": float(rho_n * pmf[k >= n * a].sum()),
        "lower_tail": float(rho_n * pmf[k <= n * a].sum()),
    }


def rate_markov_bound(log_rho: float, rate_above: float, n: int) -> float:
    """exp(n·(log ρ − inf_{x>=a} I(x))), capped at 1."""
    return float(min(1.0, math.exp(n * (log_rho - rate_above)))) if math.isfinite(rate_above) else 0.0


# ---------------- stopping line ----------------

@dataclass
class StoppingLineCensus:
    n: int
    a: float
    cone: Optional[int]
    records: pd.DataFrame          # generation, suffix_type, stayed_in_cone, length, word
    censored: int
    truncated: bool = False
    gen_cap: int = 0

    def filtered(self, max_generation: Optional[float] = None, stayed: bool = True,
                 suffix_type: Optional[int] = None) -> pd.DataFrame:
        rec = self.records
        keep = np.ones(len(rec), dtype=bool)
        if max_generation is not None:
            keep &= rec["generation"].to_numpy() <= max_generation
        if stayed:
            keep &= rec["stayed_in_cone"].to_numpy()
        if suffix_type is not None:
            keep &= rec["suffix_type"].to_numpy() == suffix_type
        return rec[keep]


def stopping_line(G: FreeProduct, law: StepLaw, pi: OffspringLaw, n: int, a: float, i: Optional[int],
                  gen_cap: int, rng_state=None, pop_cap: int = 10**7, strict_cone: bool = False,
                  keep_words: bool = False) -> StoppingLineCensus:
    """
    Freeze every lineage the first time it reaches distance n. Cone violations
    only clear the `stayed_in_cone` flag; lineages still inside B_n at gen_cap
    are counted as censored.
    """
    if a <= 0:
        raise ValueError("speed a must be > 0")
    if gen_cap < math.ceil(n / a):
        raise ValueError(f"gen_cap {gen_cap} < ceil(n/a) = {math.ceil(n / a)}")
    rng = as_rng(rng_state)
    active = WordStacks(G, 1)
    stayed = np.ones(1, dtype=bool)
    frames = []
    truncated = False
    for g in range(1, int(gen_cap) + 1):
        try:
            active, parent = grow(active, pi, law, rng, pop_cap)
        except CapExceededError as err:
            log.warning("stopping_line stopped at generation %d: %s", g, err)
            truncated = True
            break
        stayed = stayed[parent]
        if i is not None:
            stayed &= active.in_cone(i, strict_cone)
        out = active.length >= n
        if out.any():
            rows = np.flatnonzero(out)
            frame = pd.DataFrame({
                "generation": g,
                "suffix_type": active.suffix_type()[rows],
                "stayed_in_cone": stayed[rows],
                "length": active.length[rows],
            })
            if keep_words:
                frame["word"] = [G.token(active.word(int(k))) for k in rows]
            frames.append(frame)
            keep = np.flatnonzero(~out)
            active, stayed = active.take(keep), stayed[keep]
        if active.size == 0:
            break
    cols = ["generation", "suffix_type", "stayed_in_cone", "length"] + (["word"] if keep_words else [])
    records = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)
    return StoppingLineCensus(int(n), float(a), i, records, int(active.size), truncated, int(gen_cap))


# ---------------- start-position coupling ----------------

@dataclass
class CoupledShiftReport:
    shift: Word
    table: pd.DataFrame
    holds: bool
    truncated: bool = False


def coupled_start_shift(G: FreeProduct, law: StepLaw, pi: OffspringLaw, n: int, x: Word,
                        rng_state=None, pop_cap: int = 10**7) -> CoupledShiftReport:
    """
    Runs from e and from x on common random numbers, so both share the tree
    and every increment, and compares the extremes generation by generation
    against the bound |x|.
    """
    x = G.validate(x)
    rng = as_rng(rng_state)
    twin = copy.deepcopy(rng)
    base = simulate_brw(G, law, pi, n, pop_cap, rng, IDENTITY)
    shifted = simulate_brw(G, law, pi, n, pop_cap, twin, x)
    bound = G.word_length(x)
    rows = []
    for s0, s1 in zip(base.stats, shifted.stats):
        rows.append({
            "n": s0.n, "population": s0.population,
            "max_e": s0.max_disp, "max_x": s1.max_disp,
            "min_e": s0.min_disp, "min_x": s1.min_disp,
            "max_gap": abs(s1.max_disp - s0.max_disp), "min_gap": abs(s1.min_disp - s0.min_disp),
            "bound": bound,
        })
    table = pd.DataFrame(rows)
    holds = bool((table["max_gap"] <= bound).all() and (table["min_gap"] <= bound).all())
    if not holds:
        log.error("start-shift bound |x| = %d violated", bound)
    return CoupledShiftReport(x, table, holds, base.truncated or shifted.truncated)
