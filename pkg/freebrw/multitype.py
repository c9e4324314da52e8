"""
Multitype branching process of fast, cone-confined particles.

A particle of type i spawns, as offspring, the descendants u that first leave
the ball B_n within |u| <= n/a generations while staying in the cone C(i);
each offspring is typed by the suffix type of its relative position. The
mean offspring matrix M(a, n) is estimated by simulation and its Perron
eigenvalue decides (super)criticality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from freebrw.brw import OffspringLaw, grow
from freebrw.errors import CapExceededError
from freebrw.groups import FreeProduct, Word
from freebrw.stats import wilson_interval
from freebrw.streams import as_rng, make_rng
from freebrw.walks import StepLaw, WordStacks

log = logging.getLogger(__name__)


# ---------------- cone-exit census ----------------

@dataclass
class ConeExitCensus:
    root_type: int
    n: int
    a: float
    counts: np.ndarray               # index j-1 holds #Z_ij
    records: pd.DataFrame            # generation, suffix_type, length (+ word)
    truncated: bool = False
    words: Optional[List[Word]] = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _census_forest(G: FreeProduct, law: StepLaw, pi: OffspringLaw, roots: np.ndarray, a: float, n: int,
                   rng: np.random.Generator, pop_cap: int, strict_cone: bool = False,
                   keep_words: bool = False) -> Tuple[pd.DataFrame, List[Word], bool]:
    """
    One census per root, all roots grown together. `roots[k]` is the cone
    type of tree k. Lineages leaving their cone, or too far from the sphere
    of radius n to reach it by generation floor(n/a), are killed; the others
    are frozen at first exit from B_n.
    """
    H = int(math.floor(n / a))
    K = law.K
    frontier = WordStacks(G, roots.size)
    owner = np.arange(roots.size)
    frames: List[pd.DataFrame] = []
    words: List[Word] = []
    truncated = False
    for g in range(1, H + 1):
        if frontier.size == 0:
            break
        try:
            frontier, parent = grow(frontier, pi, law, rng, pop_cap)
        except CapExceededError as err:
            log.warning("census stopped at generation %d: %s", g, err)
            truncated = True
            break
        owner = owner[parent]
        alive = frontier.in_cone(roots[owner], strict_cone)
        out = alive & (frontier.length >= n)
        if out.any():
            rows = np.flatnonzero(out)
            frames.append(pd.DataFrame({
                "owner": owner[rows], "generation": g,
                "suffix_type": frontier.suffix_type()[rows], "length": frontier.length[rows],
            }))
            if keep_words:
                words.extend(frontier.word(int(k)) for k in rows)
        keep = np.flatnonzero(alive & ~out & (frontier.length + K * (H - g) >= n))
        frontier, owner = frontier.take(keep), owner[keep]
    cols = ["owner", "generation", "suffix_type", "length"]
    records = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)
    return records.astype({c: np.int64 for c in cols}), words, truncated


def sample_cone_exit_census(G: FreeProduct, law: StepLaw, pi: OffspringLaw, i: int, a: float, n: int,
                            pop_cap: int = 10**7, rng_state=None, strict_cone: bool = False,
                            keep_words: bool = False) -> ConeExitCensus:
    if a <= 0:
        raise ValueError("speed a must be > 0")
    if not 1 <= i <= G.r:
        raise ValueError(f"root type {i} out of range 1..{G.r}")
    rng = as_rng(rng_state)
    records, words, truncated = _census_forest(G, law, pi, np.array([i]), a, n, rng, pop_cap,
                                               strict_cone, keep_words)
    counts = np.bincount(records["suffix_type"].to_numpy(), minlength=G.r + 1)[1:]
    return ConeExitCensus(int(i), int(n), float(a), counts, records.drop(columns="owner"), truncated,
                          words if keep_words else None)


def window_counts(census: ConeExitCensus, eps: float, r: Optional[int] = None) -> np.ndarray:
    """Per type, census particles with n/(a+eps) < |u|, the fast window."""
    r = r or census.counts.size
    rec = census.records
    keep = rec["generation"].to_numpy() > census.n / (census.a + eps)
    return np.bincount(rec["suffix_type"].to_numpy()[keep], minlength=r + 1)[1:]


# ---------------- mean matrix ----------------

@dataclass
class MeanMatrix:
    a: float
    n: int
    mean: np.ndarray
    se: np.ndarray
    replicas: int
    partial_excluded: int = 0
    row_totals: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        return {"a": self.a, "n": self.n, "matrix": self.mean.tolist(), "se": self.se.tolist(),
                "replicas": self.replicas, "partial_excluded": self.partial_excluded}


def census_counts(G: FreeProduct, law: StepLaw, pi: OffspringLaw, i: int, a: float, n: int, replicas: int,
                  rng: np.random.Generator, pop_cap: int = 10**7, chunk: int = 256) -> Tuple[np.ndarray, int]:
    """
    Count vectors (replicas × r) of independent censuses rooted at type i.
    A chunk that hits pop_cap is dropped and counted as partial.
    """
    rows: List[np.ndarray] = []
    partial = 0
    done = 0
    while done < replicas:
        b = min(chunk, int(replicas) - done)
        records, _, truncated = _census_forest(G, law, pi, np.full(b, i), a, n, rng, pop_cap)
        done += b
        if truncated:
            partial += b
            continue
        flat = records["owner"].to_numpy() * (G.r + 1) + records["suffix_type"].to_numpy()
        counts = np.bincount(flat, minlength=b * (G.r + 1)).reshape(b, G.r + 1)[:, 1:]
        rows.append(counts)
    mat = np.concatenate(rows) if rows else np.zeros((0, G.r), dtype=np.int64)
    return mat, partial


def estimate_mean_matrix(G: FreeProduct, law: StepLaw, pi: OffspringLaw, a: float, n: int, replicas: int,
                         rng_state=None, pop_cap: int = 10**7) -> MeanMatrix:
    if replicas < 100:
        raise ValueError("mean matrix needs at least 10^2 replicas")
    rng = as_rng(rng_state)
    r = G.r
    mean = np.zeros((r, r))
    se = np.zeros((r, r))
    totals = np.zeros(r)
    partial = 0
    for i in range(1, r + 1):
        counts, lost = census_counts(G, law, pi, i, a, n, replicas, rng, pop_cap)
        partial += lost
        if counts.shape[0] == 0:
            mean[i - 1] = np.nan
            se[i - 1] = np.nan
            totals[i - 1] = np.nan
            continue
        mean[i - 1] = counts.mean(axis=0)
        if counts.shape[0] > 1:
            se[i - 1] = counts.std(axis=0, ddof=1) / math.sqrt(counts.shape[0])
        totals[i - 1] = counts.sum(axis=1).mean()
    if partial:
        log.warning("mean matrix a=%.4g n=%d: %d partial censuses excluded", a, n, partial)
    return MeanMatrix(float(a), int(n), mean, se, int(replicas), partial, totals)


# ---------------- Perron-Frobenius ----------------

@dataclass
class PerronCertificate:
    eigenvalue: float
    eigenvector: np.ndarray
    residual: float
    iterations: int
    converged: bool
    reducible: bool
    verdict: str = "inconclusive"
    lower: Optional[float] = None
    upper: Optional[float] = None

    def as_dict(self) -> dict:
        return {"eigenvalue": self.eigenvalue, "eigenvector": self.eigenvector.tolist(),
                "residual": self.residual, "iterations": self.iterations, "converged": self.converged,
                "reducible": self.reducible, "verdict": self.verdict, "lower": self.lower, "upper": self.upper}


def is_irreducible(M: np.ndarray) -> bool:
    r = M.shape[0]
    reach = (np.eye(r) + (M > 0)).astype(float)
    return bool(np.all(np.linalg.matrix_power(reach, max(r - 1, 1)) > 0))


def _power_iteration(M: np.ndarray, eps: float, tol: float, max_iter: int):
    r = M.shape[0]
    # shift by the largest row sum: a periodic M has eigenvalues of equal
    # modulus, the shifted matrix does not
    shift = max(eps, float(M.sum(axis=1).max()))
    A = M + shift * np.eye(r)
    v = np.full(r, 1.0 / r)
    lam, residual = 0.0, float("inf")
    for k in range(1, max_iter + 1):
        w = v @ A
        s = w.sum()
        if s <= 0:
            return 0.0, v, 0.0, k, True
        lam = float(s)
        w = w / s
        residual = float(np.abs(w @ A - lam * w).sum())
        v = w
        if residual <= tol:
            return lam - shift, v, residual, k, True
    return lam - shift, v, residual, max_iter, False


def perron_eigenvalue(M, se=None, eps: float = 1e-12, tol: float = 1e-10, max_iter: int = 10_000,
                      sigmas: float = 3.0) -> PerronCertificate:
    """
    Left Perron vector by power iteration on M + sI, s the largest row sum of
    M (at least ε), so periodic matrices converge too. With entrywise standard
    errors, the verdict is supercritical when ν(max(M − 3SE, 0)) > 1 and
    subcritical when ν(M + 3SE) < 1.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.shape[0] > 16:
        raise ValueError("matrix larger than 16 x 16")
    if not np.all(np.isfinite(M)) or np.any(M < 0):
        raise ValueError("matrix entries must be finite and >= 0")
    lam, vec, residual, iters, ok = _power_iteration(M, eps, tol, max_iter)
    reducible = not is_irreducible(M)
    cert = PerronCertificate(lam, vec, residual, iters, ok, reducible)
    if not ok:
        log.warning("power iteration did not converge (residual %.3g)", residual)
        return cert
    S = np.zeros_like(M) if se is None else np.nan_to_num(np.asarray(se, dtype=float))
    lo = _power_iteration(np.maximum(M - sigmas * S, 0.0), eps, tol, max_iter)[0]
    hi = _power_iteration(M + sigmas * S, eps, tol, max_iter)[0]
    cert.lower, cert.upper = lo, hi
    if hi < 1:
        cert.verdict = "subcritical"
    elif lo > 1 and not reducible:
        cert.verdict = "supercritical"
    if reducible:
        log.warning("mean matrix is reducible; supercritical verdict withheld")
    return cert


# ---------------- iterated multitype process ----------------

def extinction_probabilities(offspring: Dict[int, np.ndarray], m: int) -> np.ndarray:
    """
    q^{(k)}, k = 0..m, from q^{(0)} = 0 and q^{(k)}_i = f_i(q^{(k-1)}) where f_i
    is the empirical generating function of the type-i offspring count vectors.
    """
    types = sorted(offspring)
    r = max(types)
    q = np.zeros(r)
    out = [q.copy()]
    for _ in range(int(m)):
        nxt = np.ones(r)
        for i in types:
            Z = np.asarray(offspring[i], dtype=float)
            if Z.size == 0:
                continue
            nxt[i - 1] = float(np.mean(np.prod(np.power(q[None, :], Z), axis=1)))
        q = nxt
        out.append(q.copy())
    return np.vstack(out)


@dataclass
class SurvivalResult:
    a: float
    n: int
    m: int
    replicas: int
    alive: int
    truncated: int
    violations: int
    type_counts: pd.DataFrame         # replica, generation, type, count
    offspring: Dict[int, np.ndarray] = field(default_factory=dict)
    predicted_survival: Optional[float] = None

    @property
    def survival_frequency(self) -> float:
        return (self.alive + self.truncated) / self.replicas

    def band(self, z: float = 1.96) -> Tuple[float, float]:
        return wilson_interval(self.alive + self.truncated, self.replicas, z)

    def as_dict(self) -> dict:
        lo, hi = self.band()
        return {"a": self.a, "n": self.n, "m": self.m, "replicas": self.replicas, "alive": self.alive,
                "truncated": self.truncated, "violations": self.violations,
                "survival_frequency": self.survival_frequency, "band": [lo, hi],
                "predicted_survival": self.predicted_survival}


def simulate_multitype_survival(G: FreeProduct, law: StepLaw, pi: OffspringLaw, a: float, n: int, m: int,
                                replicas: int, rng_state=None, root_type: int = 1, pop_cap: int = 10**7,
                                particle_cap: int = 10**4) -> SurvivalResult:
    """
    Iterate the process for m generations. Each generation runs fresh census
    simulations from every particle; positions compose as X_u = X_v·w.
    Every retained particle must satisfy nm <= |X| and |u| <= nm/a + 1.
    """
    rng = as_rng(rng_state)
    base = int(rng.integers(0, 2**63 - 1))
    rows = []
    offspring: Dict[int, List[np.ndarray]] = {j: [] for j in range(1, G.r + 1)}
    alive = truncated = violations = 0
    for rep in range(int(replicas)):
        types = np.array([root_type])
        positions: List[Word] = [()]
        depths = np.zeros(1, dtype=np.int64)
        status = "alive"
        for k in range(1, int(m) + 1):
            sub = make_rng(base, "multitype", rep, k)
            records, words, cut = _census_forest(G, law, pi, types, a, n, sub, pop_cap, keep_words=True)
            if cut:
                status = "truncated"
                break
            owners = records["owner"].to_numpy()
            counts = np.bincount(owners * (G.r + 1) + records["suffix_type"].to_numpy(),
                                 minlength=types.size * (G.r + 1)).reshape(types.size, G.r + 1)[:, 1:]
            for t, c in zip(types, counts):
                offspring[int(t)].append(c)
            positions = [G.multiply(positions[o], w) for o, w in zip(owners, words)]
            depths = depths[owners] + records["generation"].to_numpy()
            types = records["suffix_type"].to_numpy()
            lengths = np.asarray([G.word_length(p) for p in positions], dtype=np.int64)
            bad = int(np.sum(lengths < n * k) + np.sum(depths > n * k / a + 1))
            if bad:
                log.error("multitype generation %d: %d particles break the distance/time bounds", k, bad)
                violations += bad
            for j in range(1, G.r + 1):
                rows.append({"replica": rep, "generation": k, "type": j, "count": int(np.sum(types == j))})
            if types.size == 0:
                status = "extinct"
                break
            if types.size > particle_cap:
                status = "truncated"
                break
        if status == "alive":
            alive += 1
        elif status == "truncated":
            truncated += 1
    stacked = {j: np.vstack(v) if v else np.zeros((0, G.r)) for j, v in offspring.items()}
    predicted = None
    if all(v.shape[0] for v in stacked.values()):
        predicted = float(1.0 - extinction_probabilities(stacked, m)[-1][root_type - 1])
    return SurvivalResult(float(a), int(n), int(m), int(replicas), alive, truncated, violations,
                          pd.DataFrame(rows, columns=["replica", "generation", "type", "count"]),
                          stacked, predicted)


def simulate_slow_blocks(G: FreeProduct, law: StepLaw, pi: OffspringLaw, a: float, n: int, m: int,
                         replicas: int, rng_state=None, pop_cap: int = 10**7,
                         particle_cap: int = 10**5) -> pd.DataFrame:
    """
    Single-type process whose offspring are the generation-n descendants
    within distance n·a of their block ancestor. Per block generation: mean
    offspring and fraction of replicas still alive.
    """
    rng = as_rng(rng_state)
    alive = np.ones(int(replicas), dtype=bool)
    sizes = np.ones(int(replicas), dtype=np.int64)
    rows = []
    offspring_seen: List[np.ndarray] = []
    for k in range(1, int(m) + 1):
        live = np.flatnonzero(alive & (sizes <= particle_cap))
        total = int(sizes[live].sum())
        if total == 0:
            rows.append({"block": k, "alive_fraction": float(alive.mean()), "mean_offspring": float("nan")})
            continue
        frontier = WordStacks(G, total)
        owner = np.arange(total)
        for _ in range(int(n)):
            frontier, parent = grow(frontier, pi, law, rng, pop_cap)
            owner = owner[parent]
        per_particle = np.bincount(owner, weights=(frontier.length <= n * a), minlength=total).astype(np.int64)
        offspring_seen.append(per_particle)
        per_replica = np.add.reduceat(per_particle, np.concatenate([[0], np.cumsum(sizes[live])[:-1]]))
        sizes[live] = per_replica
        alive[live] = per_replica > 0
        rows.append({"block": k, "alive_fraction": float(alive.mean()),
                     "mean_offspring": float(np.concatenate(offspring_seen).mean())})
    return pd.DataFrame(rows)


# ---------------- certification grid ----------------

@dataclass
class CertificateGrid:
    frame: pd.DataFrame
    certificates: List[dict]
    n0: Dict[float, Optional[int]]


def certify_supercritical(G: FreeProduct, law: StepLaw, pi: OffspringLaw, a_grid: Sequence[float],
                          n_grid: Sequence[int], replicas: int, rng_state=None,
                          pop_cap: int = 10**7) -> CertificateGrid:
    """
    Mean matrix and Perron certificate for every (a, n). n0(a) is the smallest
    n from which every tested n is supercritical.
    """
    rng = as_rng(rng_state)
    base = int(rng.integers(0, 2**63 - 1))
    rows, certs = [], []
    n0: Dict[float, Optional[int]] = {}
    ns = sorted(int(n) for n in n_grid)
    for ai, a in enumerate(a_grid):
        verdicts = []
        for n in ns:
            M = estimate_mean_matrix(G, law, pi, a, n, replicas, make_rng(base, "certify", ai, n), pop_cap)
            if np.isnan(M.mean).any():
                cert = None
                verdict = "inconclusive"
            else:
                cert = perron_eigenvalue(M.mean, M.se)
                verdict = cert.verdict
            verdicts.append(verdict)
            rows.append({
                "a": float(a), "n": n, "eigenvalue": cert.eigenvalue if cert else float("nan"),
                "lower": cert.lower if cert else float("nan"), "upper": cert.upper if cert else float("nan"),
                "verdict": verdict, "reducible": cert.reducible if cert else True,
                "min_row_sum": float(np.nanmin(M.mean.sum(axis=1))), "partial_excluded": M.partial_excluded,
            })
            certs.append({**M.as_dict(), **(cert.as_dict() if cert else {"verdict": verdict})})
        first = None
        for k in range(len(ns)):
            if all(v == "supercritical" for v in verdicts[k:]):
                first = ns[k]
                break
        n0[float(a)] = first
        for c in certs[-len(ns):]:
            c["n0_estimate"] = first
    return CertificateGrid(pd.DataFrame(rows), certs, n0)
