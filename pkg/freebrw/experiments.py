"""
Experiment orchestration: one function per experiment kind, a result writer
that records every file it produces, and the run manifest.

Randomness for each unit of work comes from make_rng(master_seed, tag, ...)
keyed by what the unit is, and units are combined in index order, so results
depend on (config, master_seed) only and never on the worker count.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from freebrw import __version__
from freebrw.brw import (TestFunction, coupled_start_shift, many_to_one_check, markov_bounds,
                         rate_markov_bound, simulate_brw)
from freebrw.config import ExperimentConfig, resolve_speed
from freebrw.errors import CapExceededError, FreeBrwError
from freebrw.groups import Letter
from freebrw.ldp import (LengthLaw, RateFunction, SpeedSolution, biconjugate_gap, check_rate_properties,
                         extend_t_grid, lambda_grid, lambda_limit, legendre_transform, solve_speeds)
from freebrw.multitype import (certify_supercritical, sample_cone_exit_census, simulate_multitype_survival,
                               simulate_slow_blocks, window_counts)
from freebrw.stats import mean_and_se, multinomial_band_violations, sigma_for_simultaneous
from freebrw.streams import SEED_SCHEME, make_rng, parallel_map
from freebrw.walks import (DriftEstimate, SpectralRadiusEstimate, WordStacks, default_step_cap,
                           estimate_spectral_radius, exact_distributions, exit_rate_curve, final_lengths,
                           lower_tail_distribution)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BLOCK = 2000

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3


# ---------------- result files ----------------

class ResultWriter:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files: Dict[str, str] = {}

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _record(self, name: str) -> None:
        with open(self._path(name), "rb") as fh:
            self.files[name] = hashlib.sha256(fh.read()).hexdigest()

    def json(self, name: str, payload: Dict[str, Any]) -> None:
        body = {"schema_version": SCHEMA_VERSION, **payload}
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(_plain(body), fh, sort_keys=True, indent=2, allow_nan=True)
            fh.write("\n")
        self._record(name)

    def csv(self, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self._path(name), index=False, float_format="%.17g")
        self._record(name)


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def plot_spec(title: str, data: str, x: str, series: List[str], reference: Optional[Dict[str, float]] = None,
              y_label: str = "") -> Dict[str, Any]:
    return {"title": title, "data": data, "x": x, "series": series, "y_label": y_label,
            "reference_lines": reference or {}}


@dataclass
class RunOutcome:
    out_dir: str
    files: Dict[str, str]
    caps_hit: Dict[str, int] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.caps_hit or self.errors else EXIT_OK


@dataclass
class RunContext:
    cfg: ExperimentConfig
    writer: ResultWriter
    threads: int
    caps_hit: Dict[str, int] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)

    def cap_hit(self, what: str) -> None:
        self.caps_hit[what] = self.caps_hit.get(what, 0) + 1

    def cell_error(self, cell: str, err: Exception) -> None:
        msg = f"{cell}: {type(err).__name__}: {err}"
        log.error(msg)
        self.errors.append(msg)
        if isinstance(err, CapExceededError):
            self.cap_hit(err.what)


# ---------------- worker tasks (module level for the process pool) ----------------

def _lengths_task(task: Tuple) -> np.ndarray:
    G, law, n, count, seed, tag, block = task
    return final_lengths(G, law, n, count, make_rng(seed, tag, n, block))


def _blocks(total: int, size: int = BLOCK) -> List[int]:
    return [min(size, total - k) for k in range(0, int(total), size)]


def sampled_lengths(ctx: RunContext, n: int, replicas: int, tag: str) -> np.ndarray:
    cfg = ctx.cfg
    tasks = [(cfg.group, cfg.law, n, b, cfg.master_seed, tag, k) for k, b in enumerate(_blocks(replicas))]
    return np.concatenate(parallel_map(_lengths_task, tasks, ctx.threads))


def _words_task(task: Tuple) -> List[str]:
    G, law, n, count, seed, block = task
    rng = make_rng(seed, "yn-law", n, block)
    stacks = WordStacks(G, count, depth=n + 1)
    for _ in range(n):
        stacks.step(law, rng)
    return [G.token(w) for w in stacks.words()]


def _brw_task(task: Tuple) -> Tuple[pd.DataFrame, bool]:
    G, law, pi, n, pop_cap, seed, rep = task
    run = simulate_brw(G, law, pi, n, pop_cap, make_rng(seed, "brw", rep))
    return run.to_frame(rep), run.truncated


def _exit_task(task: Tuple) -> pd.DataFrame:
    G, law, a, cone, n, replicas, eps, strict, seed, cell = task
    frame = exit_rate_curve(G, law, a, cone, [n], replicas, make_rng(seed, "exit", *cell), eps=eps,
                            strict_cone=strict)
    frame.insert(0, "a", a)
    frame.insert(1, "variant", "all" if cone is None else "cone")
    return frame


def _certify_task(task: Tuple):
    G, law, pi, a, ns, replicas, pop_cap, seed, ai = task
    return certify_supercritical(G, law, pi, [a], ns, replicas, make_rng(seed, "certify", ai), pop_cap)


# ---------------- shared pieces ----------------

def drift(ctx: RunContext, write: bool = True) -> DriftEstimate:
    cfg = ctx.cfg
    n, replicas = cfg.integer("ldp", "drift_n"), cfg.integer("ldp", "drift_replicas")
    lengths = sampled_lengths(ctx, n, replicas, "drift")
    mean, se = mean_and_se(lengths / float(n))
    exact = {}
    for d in exact_distributions(cfg.group, cfg.law, cfg.integer("ldp", "m_max"),
                                 cfg.integer("caps", "support_cap"))[1:]:
        pmf = d.length_pmf()
        exact[d.n] = float(np.dot(np.arange(pmf.size), pmf) / d.n)
    est = DriftEstimate(mean, se, n, replicas, exact)
    if write:
        ctx.writer.json("drift.json", est.as_dict())
    log.info("drift estimate %.6f ± %.2g", mean, se)
    return est


def spectral_radius(ctx: RunContext, write: bool = True) -> SpectralRadiusEstimate:
    cfg = ctx.cfg
    est = estimate_spectral_radius(cfg.group, cfg.law, cfg.integer("ldp", "r_n_max"),
                                   cfg.integer("caps", "support_cap"))
    if write:
        ctx.writer.json("spectral_radius.json", {k: v for k, v in est.as_dict().items() if k != "sequence"})
        ctx.writer.csv("return_probabilities.csv", est.table)
    log.info("spectral radius estimate %.6f in [%.6f, %.6f]", est.estimate, *est.interval)
    return est


@dataclass
class RatePipeline:
    drift: DriftEstimate
    radius: SpectralRadiusEstimate
    rate: RateFunction
    speeds: SpeedSolution
    lambda_hat: pd.DataFrame


def rate_pipeline(ctx: RunContext) -> RatePipeline:
    """Drift, spectral radius, Λ grid, Λ̂, I, property report and speeds, all written out."""
    cfg = ctx.cfg
    G, law = cfg.group, cfg.law
    ell = drift(ctx)
    radius = spectral_radius(ctx)

    laws: List[LengthLaw] = []
    mc_ns = set(cfg.integers("ldp", "mc_n"))
    if cfg.get("ldp", "exact_n"):
        ns = cfg.integers("ldp", "exact_n")
        try:
            dists = exact_distributions(G, law, max(ns), cfg.integer("caps", "support_cap"))
            laws += [LengthLaw.exact(n, dists[n].length_pmf()) for n in sorted(set(ns))]
        except CapExceededError as err:
            log.warning("exact laws stopped at the support cap (%s); sampling n=%s instead", err, ns)
            ctx.cap_hit(err.what)
            mc_ns.update(ns)
    for n in sorted(set(cfg.integers("ldp", "tail_n"))):
        j_max = cfg.integer("ldp", "tail_j_max")
        try:
            pmf = lower_tail_distribution(G, law, n, j_max, cfg.integer("caps", "support_cap")).length_pmf()
        except CapExceededError as err:
            log.warning("lower tail at n=%d stopped at the support cap (%s)", n, err)
            ctx.cap_hit(err.what)
            continue
        laws.append(LengthLaw.lower_tail(n, pmf, j_max))
    for n in sorted(mc_ns):
        laws.append(LengthLaw.from_lengths(n, sampled_lengths(ctx, n, cfg.integer("ldp", "mc_replicas"), "ldp-mc")))

    rel_tol = cfg.number("ldp", "mgf_rel_tol")
    step = cfg.number("ldp", "t_step")
    count = int(round((cfg.number("ldp", "t_max") - cfg.number("ldp", "t_min")) / step)) + 1
    t0 = np.linspace(cfg.number("ldp", "t_min"), cfg.number("ldp", "t_max"), count)

    def evaluate(t):
        return lambda_limit(lambda_grid(laws, t), rel_tol=rel_tol)["value"].to_numpy()

    t, _ = extend_t_grid(evaluate, t0, law.K, cfg.number("ldp", "t_limit"))
    grid = lambda_grid(laws, t)
    hat = lambda_limit(grid, rel_tol=rel_tol)
    r_lo, r_hi = radius.interval
    neg_log_r = -math.log(radius.estimate)
    rate = legendre_transform(t, hat["value"].to_numpy(), K=law.K, ell=ell.mean, neg_log_r=neg_log_r,
                              lambda_uncertainty=hat["uncertainty"].to_numpy(),
                              neg_log_r_uncertainty=abs(math.log(r_hi) - math.log(max(r_lo, 1e-300))) / 2,
                              n_x=cfg.integer("ldp", "x_points"))
    report = check_rate_properties(rate, ell.mean, radius.estimate)
    speeds = solve_speeds(rate, cfg.offspring.rho, radius.estimate)

    w = ctx.writer
    w.csv("lambda_n.csv", grid.values)
    w.csv("lambda_hat.csv", hat)
    w.csv("rate_function.csv", rate.to_frame())
    w.csv("properties.csv", report.to_frame())
    w.csv("biconjugate.csv", biconjugate_gap(rate, t, hat["value"].to_numpy()))
    w.json("rate_summary.json", {
        "ell": ell.mean, "ell_se": ell.se, "beta_hat": rate.beta, "K": rate.K,
        "neg_log_r": rate.neg_log_r, "neg_log_r_uncertainty": rate.neg_log_r_uncertainty,
        "raw_I0": rate.raw_I0, "slope_range": list(rate.slope_range),
        "t_range": [float(t[0]), float(t[-1])], "notes": grid.notes + rate.notes,
        "properties_passed": report.passed,
    })
    w.json("speeds.json", {**speeds.as_dict(), "rho": cfg.offspring.rho})
    w.json("plot_rate.json", plot_spec("rate function", "rate_function.csv", "x", ["I"],
                                       {"log_rho": speeds.log_rho, "ell": ell.mean, "v_max": speeds.v_max,
                                        "v_min": speeds.v_min}, "I(x)"))
    return RatePipeline(ell, radius, rate, speeds, hat)


# ---------------- kinds ----------------

def run_validate(ctx: RunContext) -> None:
    cfg = ctx.cfg
    G, law = cfg.group, cfg.law
    ctx.writer.json("validation.json", {
        "r": G.r,
        "factors": [{"index": f.index, "order": f.order, "labels": list(f.labels),
                     "generators": sorted(f.labels[g] for g in f.generators), "diameter": f.diameter,
                     "symmetrized": f.symmetrized} for f in G.factors],
        "alphas": list(law.alphas), "K": law.K,
        "offspring": {str(k): p for k, p in cfg.offspring.pmf.items()}, "rho": cfg.offspring.rho,
        "notices": cfg.notices,
    })


def run_rw_sim(ctx: RunContext) -> None:
    cfg = ctx.cfg
    drift(ctx)
    replicas = cfg.replicas()
    rows = []
    for n in cfg.integers("experiment", "n_grid"):
        dist = exact_distributions(cfg.group, cfg.law, n, cfg.integer("caps", "support_cap"))[-1]
        tasks = [(cfg.group, cfg.law, n, b, cfg.master_seed, k) for k, b in enumerate(_blocks(replicas))]
        tokens = pd.Series([t for part in parallel_map(_words_task, tasks, ctx.threads) for t in part])
        counts = tokens.value_counts()
        table = dist.to_frame(cfg.group)
        table["count"] = table["word"].map(counts).fillna(0).astype(int)
        extra = int(counts[~counts.index.isin(table["word"])].sum())
        sigmas = sigma_for_simultaneous(len(table))
        bad = multinomial_band_violations(table["count"].to_numpy(), table["probability"].to_numpy(), sigmas)
        table["in_band"] = True
        table.loc[table.index[bad], "in_band"] = False
        ctx.writer.csv(f"yn_law_n{n}.csv", table)
        rows.append({"n": n, "replicas": replicas, "cells": len(table), "sigmas": sigmas,
                     "violations": int(bad.size), "outside_support": extra})
    ctx.writer.csv("yn_agreement.csv", pd.DataFrame(rows))


def run_rw_exact(ctx: RunContext) -> None:
    cfg = ctx.cfg
    dists = exact_distributions(cfg.group, cfg.law, max(cfg.integers("experiment", "n_grid")),
                                cfg.integer("caps", "support_cap"))
    rows = []
    for n in cfg.integers("experiment", "n_grid"):
        ctx.writer.csv(f"exact_n{n}.csv", dists[n].to_frame(cfg.group))
        pmf = dists[n].length_pmf()
        rows.append({"n": n, "support": len(dists[n].support), "total": dists[n].total(),
                     "mean_length": float(np.dot(np.arange(pmf.size), pmf))})
    ctx.writer.csv("exact_summary.csv", pd.DataFrame(rows))
    spectral_radius(ctx)


def run_ldp_curve(ctx: RunContext) -> None:
    rate_pipeline(ctx)


def run_speed_experiment(ctx: RunContext) -> None:
    cfg = ctx.cfg
    G, law, pi = cfg.group, cfg.law, cfg.offspring
    pipe = rate_pipeline(ctx)
    n = cfg.integer("experiment", "generations")
    pop_cap = cfg.integer("caps", "pop_cap")
    tasks = [(G, law, pi, n, pop_cap, cfg.master_seed, rep) for rep in range(cfg.replicas())]
    results = parallel_map(_brw_task, tasks, ctx.threads)
    gens = pd.concat([frame for frame, _ in results], ignore_index=True)
    truncated = sum(1 for _, cut in results if cut)
    if truncated:
        ctx.caps_hit["population"] = truncated
    ctx.writer.csv("generations.csv", gens)

    v_max, v_min, log_rho = pipe.speeds.v_max, pipe.speeds.v_min, pipe.speeds.log_rho
    beyond = v_max + 0.1
    rows = []
    for g in cfg.integers("experiment", "generations_grid"):
        part = gens[gens["n"] == g]
        if part.empty:
            continue
        rows.append({
            "n": g, "replicas": len(part),
            "median_max_ratio": float((part["max"] / g).median()),
            "q10_max_ratio": float((part["max"] / g).quantile(0.1)),
            "q90_max_ratio": float((part["max"] / g).quantile(0.9)),
            "median_min_ratio": float((part["min"] / g).median()),
            "v_max": v_max, "v_min": v_min, "v_max_case": pipe.speeds.v_max_case,
            "v_min_case": pipe.speeds.v_min_case,
            "fraction_beyond": float((part["max"] >= beyond * g).mean()),
            "markov_bound": rate_markov_bound(log_rho, pipe.rate.inf_above(beyond), g),
        })
    ctx.writer.csv("speed_summary.csv", pd.DataFrame(rows))
    per_n = gens.assign(max_ratio=gens["max"] / gens["n"].clip(lower=1), min_ratio=gens["min"] / gens["n"].clip(lower=1))
    curve = per_n.groupby("n", as_index=False)[["max_ratio", "min_ratio"]].median()
    ctx.writer.csv("speed_curve.csv", curve)
    ctx.writer.json("plot_speed.json", plot_spec("displacement speeds", "speed_curve.csv", "n",
                                                 ["max_ratio", "min_ratio"],
                                                 {"v_max": v_max, "v_min": v_min}, "|X|/n"))

    m = cfg.integer("experiment", "many_to_one_n")
    fs = [TestFunction("one"), TestFunction("word"),
          TestFunction("length_at_least", threshold=cfg.integer("experiment", "many_to_one_threshold"))]
    try:
        reports = many_to_one_check(G, law, pi, m, fs, max(cfg.replicas(), 1000),
                                    make_rng(cfg.master_seed, "many-to-one"), pop_cap)
        ctx.writer.csv("many_to_one.csv", pd.DataFrame([r.as_dict() for r in reports]))
        bounds = [markov_bounds(G, law, pi, k, beyond) for k in range(1, m + 1)]
        ctx.writer.csv("markov_bounds.csv", pd.DataFrame(bounds))
    except FreeBrwError as err:
        ctx.cell_error("many-to-one", err)

    slow_n = cfg.integer("experiment", "slow_n")
    slow = []
    for ai, tok in enumerate(t for t in cfg.get("experiment", "slow_a_grid").split(",") if t.strip()):
        a = resolve_speed(tok, pipe.drift.mean, v_max)
        try:
            blocks = simulate_slow_blocks(G, law, pi, a, slow_n, cfg.integer("experiment", "survival_m"),
                                          cfg.integer("experiment", "survival_replicas"),
                                          make_rng(cfg.master_seed, "slow-blocks", ai), pop_cap,
                                          cfg.integer("caps", "particle_cap"))
        except FreeBrwError as err:
            ctx.cell_error(f"slow blocks a={a:.4g}", err)
            continue
        blocks.insert(0, "a", a)
        blocks.insert(1, "n", slow_n)
        blocks["predicted_mean"] = markov_bounds(G, law, pi, slow_n, a)["lower_tail"]
        slow.append(blocks)
    if slow:
        ctx.writer.csv("slow_blocks.csv", pd.concat(slow, ignore_index=True))

    shift = (Letter(1, min(G.factors[0].generators)),)
    checks = [coupled_start_shift(G, law, pi, min(n, 15), shift, make_rng(cfg.master_seed, "coupling", rep), pop_cap)
              for rep in range(min(cfg.replicas(), 20))]
    ctx.writer.csv("coupling.csv", pd.DataFrame([{"replica": k, "holds": c.holds, "truncated": c.truncated,
                                                  "max_gap": int(c.table["max_gap"].max())}
                                                 for k, c in enumerate(checks)]))


def run_multitype_certify(ctx: RunContext) -> None:
    cfg = ctx.cfg
    G, law, pi = cfg.group, cfg.law, cfg.offspring
    pipe = rate_pipeline(ctx)
    a_grid = [resolve_speed(tok, pipe.drift.mean, pipe.speeds.v_max)
              for tok in cfg.get("experiment", "a_grid").split(",") if tok.strip()]
    ns = cfg.integers("experiment", "n_grid")
    pop_cap = cfg.integer("caps", "pop_cap")
    tasks = [(G, law, pi, a, ns, cfg.replicas(), pop_cap, cfg.master_seed, ai) for ai, a in enumerate(a_grid)]
    grids = parallel_map(_certify_task, tasks, ctx.threads)
    frame = pd.concat([g.frame for g in grids], ignore_index=True)
    if (frame["partial_excluded"] > 0).any():
        ctx.caps_hit["census_population"] = int(frame["partial_excluded"].sum())
    ctx.writer.csv("certificates.csv", frame)
    n0 = {f"{a:.6g}": g.n0[float(a)] for a, g in zip(a_grid, grids)}
    ctx.writer.json("certificates.json", {"cells": [c for g in grids for c in g.certificates], "n0": n0,
                                          "ell": pipe.drift.mean, "v_max": pipe.speeds.v_max})

    eps = cfg.number("experiment", "eps")
    n_top = max(ns)
    windows = []
    for ai, a in enumerate(a_grid):
        for i in range(1, G.r + 1):
            full = np.zeros(G.r)
            fast = np.zeros(G.r)
            reps = cfg.integer("experiment", "survival_replicas")
            for k in range(reps):
                census = sample_cone_exit_census(G, law, pi, i, a, n_top, pop_cap,
                                                 make_rng(cfg.master_seed, "window", ai, i, k), cfg.strict_cone)
                if census.truncated:
                    ctx.cap_hit("census_population")
                full += census.counts
                fast += window_counts(census, eps, G.r)
            for j in range(1, G.r + 1):
                windows.append({"a": a, "n": n_top, "eps": eps, "root_type": i, "type": j, "replicas": reps,
                                "mean_count": full[j - 1] / reps, "mean_window": fast[j - 1] / reps})
    ctx.writer.csv("window_counts.csv", pd.DataFrame(windows))

    survival = []
    m = cfg.integer("experiment", "survival_m")
    for ai, a in enumerate(a_grid):
        try:
            res = simulate_multitype_survival(G, law, pi, a, max(ns), m, cfg.integer("experiment", "survival_replicas"),
                                              make_rng(cfg.master_seed, "survival", ai), pop_cap=pop_cap,
                                              particle_cap=cfg.integer("caps", "particle_cap"))
            if res.truncated:
                ctx.caps_hit["particles"] = ctx.caps_hit.get("particles", 0) + res.truncated
            survival.append(res.as_dict())
        except FreeBrwError as err:
            ctx.cell_error(f"survival a={a:.4g}", err)
    ctx.writer.json("survival.json", {"cells": survival})


def run_exit_rate(ctx: RunContext) -> None:
    cfg = ctx.cfg
    G, law = cfg.group, cfg.law
    pipe = rate_pipeline(ctx)
    a_grid = [resolve_speed(tok, pipe.drift.mean, pipe.speeds.v_max)
              for tok in cfg.get("experiment", "a_grid").split(",") if tok.strip()]
    cone = cfg.integer("experiment", "cone")
    eps = cfg.number("experiment", "eps")
    tasks = []
    for ai, a in enumerate(a_grid):
        for vi, variant in enumerate((None, cone)):
            for n in cfg.integers("experiment", "n_grid"):
                tasks.append((G, law, a, variant, n, cfg.replicas(), eps, cfg.strict_cone, cfg.master_seed,
                              (ai, vi, n)))
    frame = pd.concat(parallel_map(_exit_task, tasks, ctx.threads), ignore_index=True)
    frame["reference"] = [pipe.rate.value_at(a) / a for a in frame["a"]]
    frame["step_cap_default"] = [default_step_cap(n, pipe.drift.mean, cfg.number("caps", "step_cap_factor"))
                                 for n in frame["n"]]
    ctx.writer.csv("exit_rate.csv", frame)

    gap_rows = []
    for a, part in frame.groupby("a"):
        both = part.pivot(index="n", columns="variant", values="successes")
        for n, row in both.iterrows():
            if row.get("all", 0) > 0 and row.get("cone", 0) > 0:
                gap_rows.append({"a": a, "n": n, "log_gap": math.log(row["all"] / row["cone"])})
    gaps = pd.DataFrame(gap_rows, columns=["a", "n", "log_gap"])
    slopes = {}
    for a, part in gaps.groupby("a"):
        slopes[a] = float(np.polyfit(part["n"], part["log_gap"], 1)[0]) if len(part) >= 2 else float("nan")
    gaps["gap_slope"] = gaps["a"].map(slopes)
    ctx.writer.csv("exit_gap.csv", gaps)
    ctx.writer.json("plot_exit.json", plot_spec("exit decay rates", "exit_rate.csv", "n", ["rate"],
                                                {"I(a)/a": float(frame["reference"].iloc[0])}, "-(1/n) log P"))


KINDS = {
    "validate": run_validate,
    "rw-sim": run_rw_sim,
    "rw-exact": run_rw_exact,
    "ldp-curve": run_ldp_curve,
    "speed-experiment": run_speed_experiment,
    "multitype-certify": run_multitype_certify,
    "exit-rate": run_exit_rate,
}


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None) -> RunOutcome:
    """Run the configured experiment and write results plus manifest.json into out_dir."""
    out_dir = out_dir or cfg.output_dir
    threads = threads or cfg.threads
    ctx = RunContext(cfg, ResultWriter(out_dir), threads)
    started = dt.datetime.now(dt.timezone.utc)
    clock = time.perf_counter()
    log.info("run %s into %s with %d worker(s)", cfg.kind, out_dir, threads)
    try:
        KINDS[cfg.kind](ctx)
    except FreeBrwError as err:
        ctx.cell_error(cfg.kind, err)
    elapsed = time.perf_counter() - clock

    manifest = {
        "kind": cfg.kind,
        "config_digest": cfg.digest,
        "config": cfg.effective,
        "version": __version__,
        "seed_scheme": SEED_SCHEME,
        "master_seed": cfg.master_seed,
        "started_at": started.isoformat(),
        "wall_clock_seconds": elapsed,
        "caps_hit": ctx.caps_hit,
        "errors": ctx.errors,
        "files": dict(sorted(ctx.writer.files.items())),
    }
    ctx.writer.json("manifest.json", manifest)
    log.info("run %s finished in %.1fs (%d files)", cfg.kind, elapsed, len(ctx.writer.files))
    return RunOutcome(out_dir, ctx.writer.files, ctx.caps_hit, ctx.errors)
