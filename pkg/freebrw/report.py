"""
Human-readable summary of a result directory.

Every number shown is read from a result file; nothing is recomputed here.
Files listed in the manifest but missing or altered are reported and the
rest of the summary is still produced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd
from tabulate import tabulate

log = logging.getLogger(__name__)

REPORT_NAME = "report.md"


@dataclass
class Report:
    text: str
    problems: List[str] = field(default_factory=list)


class _Reader:
    def __init__(self, result_dir: str, manifest: Dict[str, Any]):
        self.dir = result_dir
        self.files: Dict[str, str] = manifest.get("files", {})
        self.problems: List[str] = []
        for name, digest in sorted(self.files.items()):
            path = os.path.join(result_dir, name)
            if not os.path.exists(path):
                self.problems.append(f"missing: {name}")
                continue
            with open(path, "rb") as fh:
                if hashlib.sha256(fh.read()).hexdigest() != digest:
                    self.problems.append(f"digest mismatch: {name}")

    def has(self, name: str) -> bool:
        return name in self.files and os.path.exists(os.path.join(self.dir, name))

    def csv(self, name: str) -> Optional[pd.DataFrame]:
        if not self.has(name):
            return None
        try:
            return pd.read_csv(os.path.join(self.dir, name))
        except (OSError, ValueError) as err:
            self.problems.append(f"corrupt: {name} ({err})")
            return None

    def json(self, name: str) -> Optional[Dict[str, Any]]:
        if not self.has(name):
            return None
        try:
            with open(os.path.join(self.dir, name), encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, ValueError) as err:
            self.problems.append(f"corrupt: {name} ({err})")
            return None


def _table(frame: pd.DataFrame, columns: List[str]) -> str:
    cols = [c for c in columns if c in frame.columns]
    return tabulate(frame[cols].values.tolist(), headers=cols, tablefmt="github", floatfmt=".6g")


def load_manifest(result_dir: str) -> Dict[str, Any]:
    path = os.path.join(result_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json in {result_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_report(result_dir: str, write: bool = True) -> Report:
    manifest = load_manifest(result_dir)
    rd = _Reader(result_dir, manifest)
    out: List[str] = [f"# Run report: {manifest.get('kind', '?')}", ""]
    out.append(tabulate([
        ["config digest", manifest.get("config_digest")],
        ["version", manifest.get("version")],
        ["seed scheme", manifest.get("seed_scheme")],
        ["master seed", manifest.get("master_seed")],
        ["caps hit", json.dumps(manifest.get("caps_hit", {}), sort_keys=True)],
        ["cell errors", len(manifest.get("errors", []))],
    ], tablefmt="github"))

    validation = rd.json("validation.json")
    if validation:
        out += ["", "## Configuration", ""]
        out.append(_table(pd.DataFrame(validation["factors"]), ["index", "order", "diameter", "symmetrized"]))
        out.append(f"\nK = {validation['K']}, rho = {validation['rho']:.6g}")

    drift = rd.json("drift.json")
    radius = rd.json("spectral_radius.json")
    if drift or radius:
        out += ["", "## Drift and spectral radius", ""]
        rows = []
        if drift:
            rows.append(["drift", drift["mean"], drift["se"], ""])
        if radius:
            lo, hi = radius["interval"]
            rows.append(["spectral radius", radius["estimate"], "", f"[{lo:.6g}, {hi:.6g}]"])
        out.append(tabulate(rows, headers=["quantity", "estimate", "se", "interval"], tablefmt="github",
                            floatfmt=".6g"))

    agreement = rd.csv("yn_agreement.csv")
    if agreement is not None:
        out += ["", "## Exact against simulated law of Y_n", ""]
        out.append(_table(agreement, ["n", "replicas", "cells", "sigmas", "violations", "outside_support"]))

    exact = rd.csv("exact_summary.csv")
    if exact is not None:
        out += ["", "## Exact distributions", ""]
        out.append(_table(exact, ["n", "support", "total", "mean_length"]))

    props = rd.csv("properties.csv")
    if props is not None:
        out += ["", "## Rate function properties", ""]
        out.append(_table(props.fillna(""), ["property", "passed", "witness"]))
        summary = rd.json("rate_summary.json")
        if summary:
            out.append(f"\nβ̂ (achieved) = {summary['beta_hat']:.6g}, K (hard bound) = {summary['K']}")
            for note in summary.get("notes", []):
                out.append(f"- {note}")

    speeds = rd.json("speeds.json")
    if speeds:
        out += ["", "## Speeds", ""]
        out.append(tabulate([
            ["v_max", speeds["v_max"], speeds["v_max_case"], *speeds["v_max_band"]],
            ["v_min", speeds["v_min"], speeds["v_min_case"], *speeds["v_min_band"]],
        ], headers=["speed", "value", "case", "band low", "band high"], tablefmt="github", floatfmt=".6g"))
        out.append(f"\nlog rho = {speeds['log_rho']:.6g}")

    speed = rd.csv("speed_summary.csv")
    if speed is not None:
        out += ["", "## Measured displacement against predicted speeds", ""]
        out.append(_table(speed, ["n", "replicas", "median_max_ratio", "v_max", "median_min_ratio", "v_min",
                                  "fraction_beyond", "markov_bound"]))

    m2o = rd.csv("many_to_one.csv")
    if m2o is not None:
        out += ["", "## Many-to-one", ""]
        out.append(_table(m2o, ["function", "n", "replicas", "estimate", "se", "exact", "z"]))

    coupling = rd.csv("coupling.csv")
    if coupling is not None:
        out.append(f"\nstart-shift bound held in {int(coupling['holds'].sum())} of {len(coupling)} coupled runs")

    exit_rate = rd.csv("exit_rate.csv")
    if exit_rate is not None:
        out += ["", "## Exit decay rates", ""]
        out.append(_table(exit_rate, ["a", "variant", "n", "successes", "rate", "rate_lo", "rate_hi",
                                      "lower_bound_only", "reference"]))
    gaps = rd.csv("exit_gap.csv")
    if gaps is not None and len(gaps):
        out += ["", "## Cone log-gap", ""]
        out.append(_table(gaps, ["a", "n", "log_gap", "gap_slope"]))

    certs = rd.csv("certificates.csv")
    if certs is not None:
        out += ["", "## Multitype certificates", ""]
        out.append(_table(certs, ["a", "n", "eigenvalue", "lower", "upper", "verdict", "reducible",
                                  "min_row_sum"]))
        meta = rd.json("certificates.json")
        if meta:
            for a, n0 in sorted(meta["n0"].items()):
                out.append(f"- n0(a={a}) = {n0 if n0 is not None else 'not reached'}")
    survival = rd.json("survival.json")
    if survival and survival["cells"]:
        out += ["", "## Multitype survival", ""]
        out.append(_table(pd.DataFrame(survival["cells"]),
                          ["a", "n", "m", "replicas", "survival_frequency", "predicted_survival", "violations",
                           "truncated"]))

    if manifest.get("errors"):
        out += ["", "## Cell errors", ""] + [f"- {e}" for e in manifest["errors"]]
    if rd.problems:
        out += ["", "## Problems", ""] + [f"- {p}" for p in rd.problems]
        log.warning("report: %d problem(s) with result files", len(rd.problems))

    text = "\n".join(out) + "\n"
    if write:
        with open(os.path.join(result_dir, REPORT_NAME), "w", encoding="utf-8") as fh:
            fh.write(text)
    return Report(text, rd.problems)
