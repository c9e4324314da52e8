"""
The single random walk (Y_n) on a free product with step law μ = Σ α_k μ_k.

Three ways in:
- scalar simulation (`simulate_walk`, `sample_exit`) on a Python list stack,
- batch simulation (`WordStacks`) holding many words as an integer array,
- exact n-step laws by convolution (`exact_distribution`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from freebrw.errors import CapExceededError, ConfigError, InsufficientDataError
from freebrw.groups import IDENTITY, FreeProduct, Letter, Word, push_letter
from freebrw.stats import mean_and_se, wilson_interval
from freebrw.streams import as_rng

log = logging.getLogger(__name__)

Number = Union[float, int, Fraction]


# ---------------- step law ----------------

@dataclass(frozen=True)
class StepLaw:
    """
    μ = Σ α_k μ_k. `outcomes` merges all identity mass into one entry (None),
    so the outcome list is exactly supp(μ) as group elements.
    """
    alphas: Tuple[float, ...]
    factor_laws: Tuple[Tuple[float, ...], ...]
    K: int
    outcomes: Tuple[Optional[Letter], ...]
    probs: Tuple[float, ...]
    codes: Tuple[int, ...]

    @classmethod
    def build(
        cls,
        G: FreeProduct,
        alphas: Sequence[Number],
        factor_laws: Sequence[Union[Sequence[Number], Mapping[str, Number]]],
    ) -> "StepLaw":
        problems: List[str] = []
        a = [float(x) for x in alphas]
        if len(a) != G.r:
            raise ConfigError([f"step law: {len(a)} alphas for {G.r} factors"])
        if len(factor_laws) != G.r:
            raise ConfigError([f"step law: {len(factor_laws)} factor laws for {G.r} factors"])
        if any(x < 0 for x in a):
            problems.append("step law: negative alpha")
        if abs(math.fsum(a) - 1.0) > 1e-12:
            problems.append(f"step law: alphas sum to {math.fsum(a)!r}, not 1")
        for k, x in enumerate(a, start=1):
            if x <= 0:
                problems.append(f"A3 violated: alpha_{k} = {x} (every factor must be visited with positive probability)")

        laws: List[Tuple[float, ...]] = []
        for k, raw in enumerate(factor_laws, start=1):
            f = G.factor(k)
            if isinstance(raw, Mapping):
                vec = [0.0] * f.order
                for lab, p in raw.items():
                    if lab not in f.labels:
                        problems.append(f"step law: factor {k} has no element {lab!r}")
                        continue
                    vec[f.labels.index(lab)] += float(p)
            else:
                vec = [float(p) for p in raw]
            if len(vec) != f.order:
                problems.append(f"step law: mu_{k} has {len(vec)} entries, factor order is {f.order}")
                vec = (vec + [0.0] * f.order)[: f.order]
            if any(p < 0 for p in vec):
                problems.append(f"step law: mu_{k} has negative mass")
            if abs(math.fsum(vec) - 1.0) > 1e-12:
                problems.append(f"step law: mu_{k} sums to {math.fsum(vec)!r}, not 1")
            laws.append(tuple(vec))
        if problems:
            raise ConfigError(problems)

        outcomes: List[Optional[Letter]] = [None]
        probs: List[float] = [math.fsum(a[k] * laws[k][0] for k in range(G.r))]
        for k in range(G.r):
            for g in range(1, G.factors[k].order):
                p = a[k] * laws[k][g]
                if p > 0:
                    outcomes.append(Letter(k + 1, g))
                    probs.append(p)
        if probs[0] == 0:
            outcomes, probs = outcomes[1:], probs[1:]
        K = max((G.letter_length(l) for l in outcomes if l is not None), default=0)
        codes = tuple(-1 if l is None else G.codes.code(l) for l in outcomes)
        return cls(tuple(a), tuple(laws), K, tuple(outcomes), tuple(probs), codes)

    @classmethod
    def uniform_generators(cls, G: FreeProduct, alphas: Optional[Sequence[Number]] = None) -> "StepLaw":
        """α uniform by default; μ_k uniform on the (symmetric) generating set S_k."""
        alphas = alphas or [Fraction(1, G.r)] * G.r
        laws = []
        for f in G.factors:
            vec = [Fraction(0)] * f.order
            for g in f.generators:
                vec[g] = Fraction(1, len(f.generators))
            laws.append(vec)
        return cls.build(G, alphas, laws)

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(np.asarray(self.probs, dtype=float))
        c[-1] = 1.0
        return c

    @cached_property
    def code_array(self) -> np.ndarray:
        return np.asarray(self.codes, dtype=np.int64)

    @property
    def moves(self) -> List[Tuple[Word, float]]:
        return [((l,) if l is not None else IDENTITY, p) for l, p in zip(self.outcomes, self.probs)]

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Outcome indices, one uniform per draw."""
        idx = np.searchsorted(self.cdf, rng.random(size), side="right")
        return np.minimum(idx, len(self.probs) - 1)


def sample_step(law: StepLaw, rng_state=None) -> Word:
    rng = as_rng(rng_state)
    letter = law.outcomes[int(law.draw(rng, 1)[0])]
    return (letter,) if letter is not None else IDENTITY


# ---------------- batch of words as integer stacks ----------------

class WordStacks:
    """
    `size` reduced words stored row-wise as letter codes (see LetterCodes),
    with per-row height and cached word length. Rows are independent walkers
    or particles; only the top of each row is touched by a step.
    """

    def __init__(self, G: FreeProduct, size: int, start: Word = IDENTITY, depth: int = 16):
        self.G = G
        self.codes = G.codes
        depth = max(int(depth), len(start) + 1)
        self.stack = np.full((int(size), depth), -1, dtype=np.int32)
        if start:
            self.stack[:, : len(start)] = [self.codes.code(l) for l in start]
        self.height = np.full(int(size), len(start), dtype=np.int64)
        self.length = np.full(int(size), G.word_length(start), dtype=np.int64)

    @classmethod
    def _wrap(cls, G, stack, height, length) -> "WordStacks":
        obj = cls.__new__(cls)
        obj.G, obj.codes = G, G.codes
        obj.stack, obj.height, obj.length = stack, height, length
        return obj

    @property
    def size(self) -> int:
        return int(self.height.size)

    def take(self, rows) -> "WordStacks":
        rows = np.asarray(rows, dtype=np.int64)
        return WordStacks._wrap(self.G, self.stack[rows].copy(), self.height[rows].copy(), self.length[rows].copy())

    def _reserve(self, needed: int) -> None:
        depth = self.stack.shape[1]
        if needed > depth:
            extra = max(needed - depth, depth)
            pad = np.full((self.size, extra), -1, dtype=self.stack.dtype)
            self.stack = np.concatenate([self.stack, pad], axis=1)

    def step(self, law: StepLaw, rng: np.random.Generator, rows: Optional[np.ndarray] = None) -> None:
        """One μ-step for the given rows (all rows by default)."""
        idx = np.arange(self.size) if rows is None else np.asarray(rows, dtype=np.int64)
        if idx.size == 0:
            return
        code = law.code_array[law.draw(rng, idx.size)]
        moving = code >= 0
        idx, code = idx[moving], code[moving]
        if idx.size == 0:
            return
        cf, cl = self.codes.factor, self.codes.length
        h = self.height[idx]
        top = np.where(h > 0, self.stack[idx, np.maximum(h - 1, 0)], -1)
        same = (top >= 0) & (cf[np.maximum(top, 0)] == cf[code])

        push = ~same
        if push.any():
            pi, ph, pc = idx[push], h[push], code[push]
            self._reserve(int(ph.max()) + 1)
            self.stack[pi, ph] = pc
            self.height[pi] += 1
            self.length[pi] += cl[pc]

        if same.any():
            mi, mh, old = idx[same], h[same], top[same]
            new = self.codes.merge[old, code[same]]
            cancel = new < 0
            self.length[mi] += np.where(cancel, 0, cl[np.maximum(new, 0)]) - cl[old]
            self.stack[mi, mh - 1] = np.where(cancel, -1, new)
            self.height[mi[cancel]] -= 1

    def first_factor(self) -> np.ndarray:
        """Factor of the first letter, 0 for e."""
        first = self.stack[:, 0]
        return np.where(self.height > 0, self.codes.factor[np.maximum(first, 0)], 0)

    def suffix_type(self) -> np.ndarray:
        """s(x) per row, 0 for e."""
        top = self.stack[np.arange(self.size), np.maximum(self.height - 1, 0)]
        return np.where(self.height > 0, self.codes.factor[np.maximum(top, 0)], 0)

    def in_cone(self, i: int, strict: bool = False) -> np.ndarray:
        ff = self.first_factor()
        return np.where(self.height > 0, ff != i, not strict)

    def word(self, row: int) -> Word:
        h = int(self.height[row])
        return tuple(self.codes.letter(int(c)) for c in self.stack[row, :h])

    def words(self) -> List[Word]:
        return [self.word(k) for k in range(self.size)]


# ---------------- paths ----------------

@dataclass
class WalkPath:
    positions: List[Word]
    lengths: List[int]
    suffix_types: List[Optional[int]]

    @property
    def n(self) -> int:
        return len(self.positions) - 1


def simulate_walk(G: FreeProduct, law: StepLaw, n: int, rng_state=None) -> WalkPath:
    rng = as_rng(rng_state)
    draws = law.draw(rng, int(n))
    stack: List[Letter] = []
    length = 0
    positions, lengths, types = [IDENTITY], [0], [None]
    for s in draws:
        letter = law.outcomes[int(s)]
        if letter is not None:
            length += push_letter(G, stack, letter)
        positions.append(tuple(stack))
        lengths.append(length)
        types.append(stack[-1].factor if stack else None)
    return WalkPath(positions, lengths, types)


# ---------------- exact n-step distributions ----------------

def _times_letter(G: FreeProduct, x: Word, letter: Optional[Letter]) -> Tuple[Word, int]:
    if letter is None:
        return x, 0
    f = G.factors[letter.factor - 1]
    if x and x[-1].factor == letter.factor:
        top = x[-1]
        h = f.mul_table[top.element][letter.element]
        if h == 0:
            return x[:-1], -f.dist_from_identity[top.element]
        return x[:-1] + (Letter(letter.factor, h),), f.dist_from_identity[h] - f.dist_from_identity[top.element]
    return x + (letter,), f.dist_from_identity[letter.element]


class _Compensated:
    """Neumaier summation per key."""

    def __init__(self):
        self.total: Dict[Word, float] = {}
        self.comp: Dict[Word, float] = {}

    def add(self, key: Word, value: float) -> None:
        s = self.total.get(key)
        if s is None:
            self.total[key] = value
            self.comp[key] = 0.0
            return
        t = s + value
        if abs(s) >= abs(value):
            self.comp[key] += (s - t) + value
        else:
            self.comp[key] += (value - t) + s
        self.total[key] = t

    def result(self) -> Dict[Word, float]:
        return {k: v + self.comp[k] for k, v in self.total.items()}

    def __len__(self) -> int:
        return len(self.total)


@dataclass
class ExactDistribution:
    n: int
    support: Dict[Word, float]
    lengths: Dict[Word, int] = field(default_factory=dict)

    def total(self) -> float:
        return math.fsum(self.support.values())

    def prob(self, x: Word) -> float:
        return self.support.get(tuple(x), 0.0)

    def length_pmf(self) -> np.ndarray:
        top = max(self.lengths.values(), default=0)
        pmf = np.zeros(top + 1)
        for w, p in self.support.items():
            pmf[self.lengths[w]] += p
        return pmf

    def expectation(self, func) -> float:
        return math.fsum(p * func(w, self.lengths[w]) for w, p in self.support.items())

    def to_frame(self, G: FreeProduct) -> pd.DataFrame:
        rows = sorted(((self.lengths[w], w, p) for w, p in self.support.items()))
        return pd.DataFrame(
            {"word": [G.token(w) for _, w, _ in rows],
             "length": [l for l, _, _ in rows],
             "probability": [p for _, _, p in rows]}
        )

    def to_csv(self, G: FreeProduct, path: str) -> None:
        self.to_frame(G).to_csv(path, index=False, float_format="%.17g")


def _advance(G: FreeProduct, dist: ExactDistribution, law: StepLaw, cap: int,
             keep_radius: Optional[int] = None) -> ExactDistribution:
    acc = _Compensated()
    lengths: Dict[Word, int] = {}
    for x, p in dist.support.items():
        lx = dist.lengths[x]
        for letter, q in zip(law.outcomes, law.probs):
            z, dl = _times_letter(G, x, letter)
            if keep_radius is not None and lx + dl > keep_radius:
                continue
            acc.add(z, p * q)
            lengths[z] = lx + dl
        if len(acc) > cap:
            raise CapExceededError("exact support", len(acc), cap)
    return ExactDistribution(dist.n + 1, acc.result(), lengths)


def exact_distributions(G: FreeProduct, law: StepLaw, n_max: int, cap: int = 10**7) -> List[ExactDistribution]:
    """Exact laws of Y_0, ..., Y_{n_max}."""
    cur = ExactDistribution(0, {IDENTITY: 1.0}, {IDENTITY: 0})
    out = [cur]
    for _ in range(int(n_max)):
        cur = _advance(G, cur, law, cap)
        out.append(cur)
    return out


def exact_distribution(G: FreeProduct, law: StepLaw, n: int, cap: int = 10**7) -> ExactDistribution:
    if n < 0:
        raise ValueError("n must be >= 0")
    return exact_distributions(G, law, n, cap)[-1]


def lower_tail_distribution(G: FreeProduct, law: StepLaw, n: int, j_max: int,
                            cap: int = 10**7) -> ExactDistribution:
    """
    Law of Y_n on the event |Y_n| <= j_max, exact there; the missing mass is
    P(|Y_n| > j_max). A path that ends inside the ball is never farther than
    j_max + K·(n - k) from e after step k, so farther words are dropped.
    """
    if n < 0 or j_max < 0:
        raise ValueError("n and j_max must be >= 0")
    K = max(law.K, 1)
    cur = ExactDistribution(0, {IDENTITY: 1.0}, {IDENTITY: 0})
    for k in range(1, int(n) + 1):
        cur = _advance(G, cur, law, cap, keep_radius=int(j_max) + K * (int(n) - k))
    return cur


def convolve(G: FreeProduct, first: ExactDistribution, second: ExactDistribution, cap: int = 10**7) -> ExactDistribution:
    """Law of X·Y for independent X ~ first, Y ~ second."""
    acc = _Compensated()
    lengths: Dict[Word, int] = {}
    for x, p in first.support.items():
        for y, q in second.support.items():
            z = G.multiply(x, y)
            acc.add(z, p * q)
            if z not in lengths:
                lengths[z] = G.word_length(z)
        if len(acc) > cap:
            raise CapExceededError("exact support", len(acc), cap)
    return ExactDistribution(first.n + second.n, acc.result(), lengths)


def return_probabilities(G: FreeProduct, law: StepLaw, n_max: int, cap: int = 10**7) -> np.ndarray:
    """
    P(Y_k = e) for k = 0..n_max. Words farther than K·(n_max - k) from e
    can no longer return and are dropped, which keeps the support small.
    """
    K = max(law.K, 1)
    cur = ExactDistribution(0, {IDENTITY: 1.0}, {IDENTITY: 0})
    out = [1.0]
    for k in range(1, int(n_max) + 1):
        cur = _advance(G, cur, law, cap, keep_radius=K * (int(n_max) - k))
        out.append(cur.prob(IDENTITY))
    return np.asarray(out)


# ---------------- spectral radius ----------------

@dataclass
class SpectralRadiusEstimate:
    estimate: float
    interval: Tuple[float, float]
    table: pd.DataFrame
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "interval": list(self.interval),
            "notes": list(self.notes),
            "sequence": self.table.to_dict(orient="list"),
        }


def estimate_spectral_radius(G: FreeProduct, law: StepLaw, n_max: int, cap: int = 10**7) -> SpectralRadiusEstimate:
    """
    r = limsup P(Y_n = e)^{1/n} from even n <= n_max.

    Reported: the root sequence p_{2m}^{1/2m}; the ratio sequence
    sqrt(p_{2m}/p_{2m-2} · (m/(m-1))^{3/2}), which removes the m^{-3/2}
    local-limit factor; and a Richardson step on the squared ratios, whose
    remaining error decays like m^{-3/2}. The point estimate is the last
    Richardson value clipped to [last root, 1]. The interval spans it and the
    last ratio, widened by the last Richardson gap.
    """
    if n_max < 4 or n_max % 2:
        raise InsufficientDataError("n_max must be even and >= 4")
    p = return_probabilities(G, law, n_max, cap)
    evens = list(range(2, int(n_max) + 1, 2))
    rows = []
    prev_sq = float("nan")
    for n in evens:
        m = n // 2
        root = p[n] ** (1.0 / n) if p[n] > 0 else 0.0
        ratio = rich = float("nan")
        if n >= 4 and p[n - 2] > 0 and p[n] > 0:
            sq = p[n] / p[n - 2] * (m / (m - 1)) ** 1.5
            ratio = math.sqrt(sq)
            if np.isfinite(prev_sq):
                w, w_prev = m ** 1.5, (m - 1) ** 1.5
                ext = (w * sq - w_prev * prev_sq) / (w - w_prev)
                rich = math.sqrt(ext) if ext > 0 else float("nan")
            prev_sq = sq
        rows.append({"n": n, "p_return": float(p[n]), "root": root, "ratio": ratio, "richardson": rich})
    table = pd.DataFrame(rows)
    notes: List[str] = []

    roots = table["root"].to_numpy()
    ratios = table["ratio"].dropna().to_numpy()
    riches = table["richardson"].dropna().to_numpy()
    last_root = float(roots[-1])
    if ratios.size == 0:
        notes.append("no returns observed; estimate is the root sequence only")
        return SpectralRadiusEstimate(last_root, (last_root, 1.0), table, notes)

    if riches.size == 0:
        notes.append("one ratio only; estimate is the last ratio")
        point = float(ratios[-1])
        gap = float(abs(ratios[-1] - last_root))
    else:
        point = float(riches[-1])
        gap = float(abs(riches[-1] - riches[-2])) if riches.size > 1 else float(abs(riches[-1] - ratios[-1]))
    est = float(np.clip(point, last_root, 1.0))
    lo = max(last_root, min(est, float(ratios[-1])) - gap)
    hi = min(1.0, max(est, float(ratios[-1])) + gap)
    diffs = np.diff(table["p_return"].to_numpy()[1:])
    if diffs.size and np.any(diffs > 0):
        notes.append("p_2n not monotone in n")
    return SpectralRadiusEstimate(est, (lo, hi), table, notes)


# ---------------- drift ----------------

@dataclass
class DriftEstimate:
    mean: float
    se: float
    n: int
    replicas: int
    exact: Dict[int, float]

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n, "replicas": self.replicas,
                "exact_ratio": {str(m): v for m, v in self.exact.items()}}


def final_lengths(G: FreeProduct, law: StepLaw, n: int, replicas: int, rng: np.random.Generator,
                  batch_size: int = 4096) -> np.ndarray:
    """|Y_n| for `replicas` independent walks."""
    out = []
    left = int(replicas)
    while left > 0:
        b = min(batch_size, left)
        stacks = WordStacks(G, b, depth=min(int(n) + 1, 64))
        for _ in range(int(n)):
            stacks.step(law, rng)
        out.append(stacks.length.copy())
        left -= b
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def estimate_drift(G: FreeProduct, law: StepLaw, n: int, replicas: int, rng_state=None,
                   m_max: int = 10, cap: int = 10**7) -> DriftEstimate:
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    rng = as_rng(rng_state)
    samples = final_lengths(G, law, n, replicas, rng) / float(n)
    mean, se = mean_and_se(samples)
    exact: Dict[int, float] = {}
    for d in exact_distributions(G, law, m_max, cap)[1:]:
        pmf = d.length_pmf()
        exact[d.n] = float(np.dot(np.arange(pmf.size), pmf) / d.n)
    return DriftEstimate(mean, se, int(n), int(replicas), exact)


# ---------------- exit times and cones ----------------

@dataclass
class ExitRecord:
    T_n: Optional[int]
    hit_fast: bool
    stayed_in_cone: bool
    exit_suffix_type: Optional[int]
    steps: int

    @property
    def censored(self) -> bool:
        return self.T_n is None


def default_step_cap(n: int, ell_hat: float, factor: float = 4.0) -> int:
    return int(math.ceil(factor * n / ell_hat))


def sample_exit(G: FreeProduct, law: StepLaw, n: int, a: float, i: int, step_cap: int,
                rng_state=None, strict_cone: bool = False) -> ExitRecord:
    """
    Run until |Y_k| >= n or k = step_cap. `stayed_in_cone` is E_{n,i}: Y_k ∈ C(i)
    for 1 <= k <= T_n (up to the cap when censored).
    """
    if a <= 0:
        raise ValueError("speed a must be > 0")
    if step_cap < n / a:
        raise ValueError(f"step_cap {step_cap} < n/a = {n / a}")
    rng = as_rng(rng_state)
    stack: List[Letter] = []
    length, k, stayed = 0, 0, True
    while length < n and k < step_cap:
        letter = law.outcomes[int(law.draw(rng, 1)[0])]
        if letter is not None:
            length += push_letter(G, stack, letter)
        k += 1
        if stayed and not (stack[0].factor != i if stack else not strict_cone):
            stayed = False
    T = k if length >= n else None
    return ExitRecord(
        T_n=T,
        hit_fast=T is not None and T <= n / a,
        stayed_in_cone=stayed,
        exit_suffix_type=(stack[-1].factor if stack else None) if T is not None else None,
        steps=k,
    )


def simulate_exits(G: FreeProduct, law: StepLaw, n: int, horizon: int, replicas: int,
                   rng: np.random.Generator, cone: Optional[int] = None, strict_cone: bool = False,
                   batch_size: int = 100_000) -> pd.DataFrame:
    """
    Batch version: every walk runs exactly `horizon` steps. Returns per-walk
    first exit time (-1 if none), E_{n,i} up to the exit (or horizon),
    s(Y_T) and |Y_horizon|.
    """
    frames = []
    left = int(replicas)
    while left > 0:
        b = min(batch_size, left)
        stacks = WordStacks(G, b, depth=min(n + law.K + 1, 256))
        T = np.full(b, -1, dtype=np.int64)
        stayed = np.ones(b, dtype=bool)
        stype = np.zeros(b, dtype=np.int64)
        if n <= 0:
            T[:] = 0
        for k in range(1, int(horizon) + 1):
            stacks.step(law, rng)
            running = T < 0
            if cone is not None:
                stayed &= ~running | stacks.in_cone(cone, strict_cone)
            hit = running & (stacks.length >= n)
            if hit.any():
                T[hit] = k
                stype[hit] = stacks.suffix_type()[hit]
        frames.append(pd.DataFrame({"T": T, "stayed": stayed, "suffix_type": stype,
                                    "final_length": stacks.length.copy()}))
        left -= b
    return pd.concat(frames, ignore_index=True)


def exit_rate_curve(G: FreeProduct, law: StepLaw, a: float, i: Optional[int], n_grid: Sequence[int],
                    replicas: int, rng_state=None, eps: Optional[float] = None, strict_cone: bool = False,
                    z: float = 1.96, batch_size: int = 100_000) -> pd.DataFrame:
    """
    −(1/n)·log P̂(T_n <= n/a [, E_{n,i}]) per n with Wilson bands. Cells with no
    success carry only a lower bound on the rate. With `eps`, the window event
    n/(a+eps) < T_n <= n/a is counted as well.
    """
    if a <= 0:
        raise ValueError("speed a must be > 0")
    rng = as_rng(rng_state)
    rows = []
    for n in n_grid:
        n = int(n)
        horizon = int(math.floor(n / a))
        sims = simulate_exits(G, law, n, horizon, replicas, rng, cone=i, strict_cone=strict_cone,
                              batch_size=batch_size)
        fast = sims["T"].between(0, horizon)
        if i is not None:
            fast &= sims["stayed"]
        successes = int(fast.sum())
        sandwich = int((sims["final_length"] >= n).sum())
        lo, hi = wilson_interval(successes, replicas, z)
        row = {
            "n": n, "horizon": horizon, "cone": 0 if i is None else int(i), "replicas": int(replicas),
            "successes": successes, "p_hat": successes / replicas, "p_lo": lo, "p_hi": hi,
            "rate": -math.log(successes / replicas) / n if successes else float("nan"),
            "rate_lo": -math.log(hi) / n if hi > 0 else float("inf"),
            "rate_hi": -math.log(lo) / n if lo > 0 else float("inf"),
            "lower_bound_only": successes == 0,
            "sandwich_successes": sandwich,
        }
        if eps is not None:
            lower = n / (a + eps)
            window = fast & (sims["T"] > lower)
            w = int(window.sum())
            row["window_successes"] = w
            row["window_rate"] = -math.log(w / replicas) / n if w else float("nan")
        if successes == 0:
            log.warning("exit-rate cell n=%d a=%.4f cone=%s: no successes in %d replicas", n, a, i, replicas)
        rows.append(row)
    return pd.DataFrame(rows)
