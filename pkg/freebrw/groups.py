"""
Free products G = G_1 * ... * G_r of finite groups.

Elements are reduced words: tuples of Letter(factor, element) with element != 0
and no two neighbouring letters from the same factor. The empty tuple is e.
Word length is the Cayley-graph distance for S = S_1 ∪ ... ∪ S_r, which for a
free product is the sum of the within-factor distances of the letters.
"""

from __future__ import annotations

import logging
import string
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from freebrw.errors import CapExceededError, GroupAxiomError, MalformedWordError

log = logging.getLogger(__name__)


class Letter(NamedTuple):
    factor: int
    element: int


Word = Tuple[Letter, ...]
IDENTITY: Word = ()


# ---------------- factor groups ----------------

@dataclass(frozen=True)
class FactorGroup:
    index: int
    labels: Tuple[str, ...]
    mul_table: Tuple[Tuple[int, ...], ...]
    generators: FrozenSet[int]
    dist_from_identity: Tuple[int, ...]
    inverses: Tuple[int, ...]
    symmetrized: bool = False

    @property
    def order(self) -> int:
        return len(self.labels)

    @property
    def diameter(self) -> int:
        return max(self.dist_from_identity)

    def mul(self, g: int, h: int) -> int:
        return self.mul_table[g][h]

    def inverse(self, g: int) -> int:
        return self.inverses[g]

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise MalformedWordError(f"factor {self.index} has no element {label!r}")

    @classmethod
    def from_table(
        cls,
        index: int,
        labels: Sequence[str],
        table: Sequence[Sequence[int]],
        generators: Sequence[int],
    ) -> "FactorGroup":
        """
        Validate a multiplication table (position 0 is the identity) and build
        the factor. Non-symmetric generating sets are closed under inverses and
        the factor is marked `symmetrized`.
        """
        labels = tuple(str(x) for x in labels)
        n = len(labels)
        if n < 2:
            raise GroupAxiomError("order >= 2", labels, factor=index)
        if len(set(labels)) != n:
            dup = next(x for x in labels if labels.count(x) > 1)
            raise GroupAxiomError("distinct labels", dup, factor=index)

        t = np.asarray(table, dtype=np.int64)
        if t.shape != (n, n):
            raise GroupAxiomError("table shape order x order", t.shape, factor=index)
        if t.min() < 0 or t.max() >= n:
            bad = tuple(int(v) for v in np.argwhere((t < 0) | (t >= n))[0])
            raise GroupAxiomError("table entries in range", bad, factor=index)

        ar = np.arange(n)
        if not (np.array_equal(t[0], ar) and np.array_equal(t[:, 0], ar)):
            g = int(np.flatnonzero((t[0] != ar) | (t[:, 0] != ar))[0])
            raise GroupAxiomError("identity (row/column 0)", (labels[0], labels[g]), factor=index)

        lhs = t[t]                         # (ab)c
        rhs = t[ar[:, None, None], t[None, :, :]]   # a(bc)
        if not np.array_equal(lhs, rhs):
            a, b, c = (int(v) for v in np.argwhere(lhs != rhs)[0])
            raise GroupAxiomError("associativity", (labels[a], labels[b], labels[c]), factor=index)

        inverses: List[int] = []
        for g in range(n):
            hs = np.flatnonzero((t[g] == 0) & (t[:, g] == 0))
            if hs.size == 0:
                raise GroupAxiomError("inverse", labels[g], factor=index)
            inverses.append(int(hs[0]))

        gens = {int(g) for g in generators}
        if 0 in gens:
            raise GroupAxiomError("generators are non-identity", labels[0], factor=index)
        if any(g < 0 or g >= n for g in gens):
            raise GroupAxiomError("generators in range", sorted(gens), factor=index)
        closed = gens | {inverses[g] for g in gens}
        symmetrized = closed != gens
        if symmetrized:
            log.warning("factor %d: generating set symmetrised (%s -> %s)",
                        index, sorted(labels[g] for g in gens), sorted(labels[g] for g in closed))

        dist = [-1] * n
        dist[0] = 0
        queue = deque([0])
        while queue:
            g = queue.popleft()
            for s in sorted(closed):
                h = int(t[g, s])
                if dist[h] < 0:
                    dist[h] = dist[g] + 1
                    queue.append(h)
        if min(dist) < 0:
            raise GroupAxiomError("generators generate", labels[dist.index(-1)], factor=index)

        return cls(
            index=index,
            labels=labels,
            mul_table=tuple(tuple(int(v) for v in row) for row in t),
            generators=frozenset(closed),
            dist_from_identity=tuple(dist),
            inverses=tuple(inverses),
            symmetrized=symmetrized,
        )

    @classmethod
    def cyclic(cls, index: int, m: int, name: Optional[str] = None) -> "FactorGroup":
        """Z/mZ with S = {1, m-1}; labels e, g, g2, ..., g{m-1}."""
        if m < 2:
            raise GroupAxiomError("order >= 2", m, factor=index)
        name = name or _default_letter_name(index)
        labels = ["e", name] + [f"{name}{k}" for k in range(2, m)]
        table = [[(a + b) % m for b in range(m)] for a in range(m)]
        return cls.from_table(index, labels, table, sorted({1, m - 1}))


def _default_letter_name(index: int) -> str:
    return string.ascii_lowercase[(index - 1) % 26]


# ---------------- letter codes for array-based simulation ----------------

@dataclass(frozen=True)
class LetterCodes:
    """
    Dense integer codes 0..L-1 for the alphabet L (non-identity letters in
    (factor, element) order). `merge[c, d]` is the code of the product of two
    same-factor letters, -1 if they cancel, -2 if the factors differ.
    """
    factor: np.ndarray
    element: np.ndarray
    length: np.ndarray
    merge: np.ndarray
    index: Dict[Letter, int] = field(default_factory=dict)

    def code(self, letter: Letter) -> int:
        return self.index[letter]

    def letter(self, code: int) -> Letter:
        return Letter(int(self.factor[code]), int(self.element[code]))


# ---------------- free product ----------------

@dataclass(frozen=True)
class FreeProduct:
    factors: Tuple[FactorGroup, ...]

    def __post_init__(self):
        if len(self.factors) < 2:
            raise GroupAxiomError("free product needs r >= 2 factors", len(self.factors))
        for k, f in enumerate(self.factors, start=1):
            if f.index != k:
                raise GroupAxiomError("factor indices 1..r in order", (k, f.index))

    @classmethod
    def of(cls, *factors: FactorGroup) -> "FreeProduct":
        return cls(tuple(factors))

    @classmethod
    def cyclic(cls, *orders: int) -> "FreeProduct":
        return cls(tuple(FactorGroup.cyclic(k, m) for k, m in enumerate(orders, start=1)))

    @property
    def r(self) -> int:
        return len(self.factors)

    @property
    def max_letter_length(self) -> int:
        return max(f.diameter for f in self.factors)

    @property
    def symmetrized(self) -> List[int]:
        return [f.index for f in self.factors if f.symmetrized]

    def factor(self, k: int) -> FactorGroup:
        if not 1 <= k <= self.r:
            raise MalformedWordError(f"factor index {k} outside 1..{self.r}")
        return self.factors[k - 1]

    # ---------------- validation and formatting ----------------

    def check_letter(self, letter: Letter) -> None:
        f = self.factor(letter.factor)
        if not 1 <= letter.element < f.order:
            raise MalformedWordError(f"element {letter.element} is not a non-identity element of factor {letter.factor}")

    def validate(self, x: Sequence[Letter]) -> Word:
        """Return x as a Word, raising MalformedWordError if it is not reduced."""
        w = tuple(Letter(int(a), int(b)) for a, b in x)
        for j, letter in enumerate(w):
            self.check_letter(letter)
            if j and w[j - 1].factor == letter.factor:
                raise MalformedWordError(f"letters {j - 1},{j} share factor {letter.factor}")
        return w

    def parse(self, text: str) -> Word:
        """
        Parse a word written with element labels, e.g. 'ab2ab' or 'a b2 a b';
        'e' or '' is the identity. Labels are matched longest-first.
        """
        text = text.replace(" ", "").replace("·", "")
        if text in ("", "e"):
            return IDENTITY
        table = sorted(
            ((lab, Letter(f.index, g)) for f in self.factors for g, lab in enumerate(f.labels) if g),
            key=lambda kv: -len(kv[0]),
        )
        letters: List[Letter] = []
        pos = 0
        while pos < len(text):
            for lab, letter in table:
                if text.startswith(lab, pos):
                    letters.append(letter)
                    pos += len(lab)
                    break
            else:
                raise MalformedWordError(f"cannot parse {text!r} at position {pos}")
        out: Word = IDENTITY
        for letter in letters:
            out = self.multiply(out, (letter,))
        return out

    def format(self, x: Word) -> str:
        if not x:
            return "e"
        return "".join(self.factors[l.factor - 1].labels[l.element] for l in x)

    @staticmethod
    def token(x: Word) -> str:
        """CSV form: dash-separated factor:element tokens; 'e' for the identity."""
        return "-".join(f"{l.factor}:{l.element}" for l in x) if x else "e"

    def from_token(self, text: str) -> Word:
        if text in ("", "e"):
            return IDENTITY
        return self.validate(tuple(tuple(int(v) for v in tok.split(":")) for tok in text.split("-")))

    # ---------------- group operations ----------------

    def multiply(self, x: Word, y: Word) -> Word:
        for letter in x:
            self.check_letter(letter)
        stack = list(x)
        for letter in y:
            self.check_letter(letter)
            push_letter(self, stack, letter)
        return tuple(stack)

    def inverse(self, x: Word) -> Word:
        return tuple(Letter(l.factor, self.factors[l.factor - 1].inverses[l.element]) for l in reversed(x))

    def word_length(self, x: Word) -> int:
        return sum(self.factors[l.factor - 1].dist_from_identity[l.element] for l in x)

    def letter_length(self, letter: Letter) -> int:
        return self.factors[letter.factor - 1].dist_from_identity[letter.element]

    def distance(self, x: Word, y: Word) -> int:
        return self.word_length(self.multiply(self.inverse(x), y))

    @staticmethod
    def suffix_type(x: Word) -> Optional[int]:
        return x[-1].factor if x else None

    @staticmethod
    def in_cone(y: Word, i: int, strict: bool = False) -> bool:
        """y ∈ C(i): first letter not in G_i. e is admitted unless strict."""
        if not y:
            return not strict
        return y[0].factor != i

    def ball_enumerate(self, n: int, cap: int = 10**6) -> List[Word]:
        """All words with |x| < n, sorted by (length, letters)."""
        if n <= 0:
            return []
        alphabet = [(Letter(f.index, g), f.dist_from_identity[g]) for f in self.factors for g in range(1, f.order)]
        out: List[Tuple[int, Word]] = [(0, IDENTITY)]
        frontier: List[Tuple[int, Word]] = [(0, IDENTITY)]
        while frontier:
            nxt: List[Tuple[int, Word]] = []
            for length, w in frontier:
                last = w[-1].factor if w else 0
                for letter, d in alphabet:
                    if letter.factor == last or length + d >= n:
                        continue
                    item = (length + d, w + (letter,))
                    nxt.append(item)
                    if len(out) + len(nxt) > cap:
                        raise CapExceededError("ball", len(out) + len(nxt), cap)
            out.extend(nxt)
            frontier = nxt
        out.sort()
        return [w for _, w in out]

    @cached_property
    def codes(self) -> LetterCodes:
        letters = [Letter(f.index, g) for f in self.factors for g in range(1, f.order)]
        index = {l: c for c, l in enumerate(letters)}
        size = len(letters)
        merge = np.full((size, size), -2, dtype=np.int64)
        for c, a in enumerate(letters):
            f = self.factors[a.factor - 1]
            for d, b in enumerate(letters):
                if a.factor == b.factor:
                    h = f.mul_table[a.element][b.element]
                    merge[c, d] = index[Letter(a.factor, h)] if h else -1
        return LetterCodes(
            factor=np.array([l.factor for l in letters], dtype=np.int64),
            element=np.array([l.element for l in letters], dtype=np.int64),
            length=np.array([self.letter_length(l) for l in letters], dtype=np.int64),
            merge=merge,
            index=index,
        )


def push_letter(G: FreeProduct, stack: List[Letter], letter: Letter) -> int:
    """
    Right-multiply the word held in `stack` by one letter, in place.
    Returns the change in word length.
    """
    if letter.element == 0:
        return 0
    f = G.factors[letter.factor - 1]
    if stack and stack[-1].factor == letter.factor:
        top = stack[-1]
        h = f.mul_table[top.element][letter.element]
        if h == 0:
            stack.pop()
            return -f.dist_from_identity[top.element]
        stack[-1] = Letter(letter.factor, h)
        return f.dist_from_identity[h] - f.dist_from_identity[top.element]
    stack.append(letter)
    return f.dist_from_identity[letter.element]


def multiply(G: FreeProduct, x: Word, y: Word) -> Word:
    return G.multiply(x, y)


def inverse(G: FreeProduct, x: Word) -> Word:
    return G.inverse(x)


def word_length(G: FreeProduct, x: Word) -> int:
    return G.word_length(x)


def distance(G: FreeProduct, x: Word, y: Word) -> int:
    return G.distance(x, y)


def suffix_type(G: FreeProduct, x: Word) -> Optional[int]:
    return G.suffix_type(x)


def in_cone(G: FreeProduct, y: Word, i: int, strict: bool = False) -> bool:
    if not 1 <= i <= G.r:
        raise MalformedWordError(f"cone index {i} outside 1..{G.r}")
    return G.in_cone(y, i, strict)


def ball_enumerate(G: FreeProduct, n: int, cap: int = 10**6) -> List[Word]:
    return G.ball_enumerate(n, cap)
