"""
Experiment configuration.

An experiment is one INI file read with RawConfigParser. Every key has a
default; the loader returns the effective configuration (defaults filled in)
so that the run manifest can record exactly what ran.

    [group]
    factors = cyclic:2, table, cyclic:2
    strict_cone = false

    [factor.2]
    labels = e, b, b2
    table = e b b2; b b2 e; b2 e b
    generators = b, b2

    [step_law]
    alphas = 1/3, 1/3, 1/3
    mu.2 = b:1/2, b2:1/2

    [offspring]
    pmf = 1:1/2, 2:1/2
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from configparser import Error as ConfigParserError
from configparser import RawConfigParser
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from freebrw.brw import OffspringLaw
from freebrw.errors import ConfigError, GroupAxiomError
from freebrw.groups import FactorGroup, FreeProduct
from freebrw.walks import StepLaw

log = logging.getLogger(__name__)

KINDS = ("validate", "rw-sim", "rw-exact", "ldp-curve", "speed-experiment", "multitype-certify", "exit-rate")

DEFAULTS: Dict[str, Dict[str, str]] = {
    "group": {"factors": "cyclic:2, cyclic:2, cyclic:2", "strict_cone": "false"},
    "step_law": {},
    "offspring": {"pmf": "1:1/2, 2:1/2"},
    "experiment": {
        "kind": "validate",
        "master_seed": "20240601",
        "threads": "1",
        "replicas": "1000",
        "n": "2000",
        "n_grid": "6, 10",
        "a_grid": "ell+0.05, mid",
        "generations": "35",
        "generations_grid": "15, 25, 35",
        "cone": "1",
        "eps": "0.05",
        "survival_m": "5",
        "survival_replicas": "50",
        "slow_a_grid": "ell*0.5",
        "slow_n": "6",
        "many_to_one_n": "6",
        "many_to_one_threshold": "4",
    },
    "caps": {
        "support_cap": "10000000",
        "pop_cap": "10000000",
        "particle_cap": "10000",
        "step_cap_factor": "4",
    },
    "ldp": {
        "t_min": "-30",
        "t_max": "30",
        "t_step": "0.01",
        "t_limit": "240",
        "x_points": "512",
        "exact_n": "8, 10, 12, 14",
        "mc_n": "50, 100, 200",
        "tail_n": "16, 18, 20",
        "tail_j_max": "10",
        "mc_replicas": "10000",
        "mgf_rel_tol": "0.05",
        "r_n_max": "20",
        "drift_n": "2000",
        "drift_replicas": "10000",
        "m_max": "10",
    },
    "output": {"dir": "results"},
}


# ---------------- small parsers ----------------

def parse_number(text: str) -> float:
    return float(Fraction(text.strip()))


def parse_list(text: str) -> List[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def parse_numbers(text: str) -> List[float]:
    return [parse_number(p) for p in parse_list(text)]


def parse_ints(text: str) -> List[int]:
    return [int(p) for p in parse_list(text)]


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_pmf(text: str) -> Dict[str, Fraction]:
    """`key:prob, key:prob` with fractional probabilities allowed."""
    out: Dict[str, Fraction] = {}
    for item in parse_list(text):
        if ":" not in item:
            raise ValueError(f"expected key:probability, got {item!r}")
        key, prob = item.rsplit(":", 1)
        out[key.strip()] = out.get(key.strip(), Fraction(0)) + Fraction(prob.strip())
    return out


# ---------------- config ----------------

@dataclass
class ExperimentConfig:
    path: str
    effective: Dict[str, Dict[str, str]]
    group: FreeProduct
    law: StepLaw
    offspring: OffspringLaw
    kind: str
    master_seed: int
    threads: int
    notices: List[str] = field(default_factory=list)

    def get(self, section: str, key: str) -> str:
        return self.effective[section][key]

    def number(self, section: str, key: str) -> float:
        return parse_number(self.get(section, key))

    def integer(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def numbers(self, section: str, key: str) -> List[float]:
        return parse_numbers(self.get(section, key))

    def integers(self, section: str, key: str) -> List[int]:
        return parse_ints(self.get(section, key))

    @property
    def strict_cone(self) -> bool:
        return parse_bool(self.get("group", "strict_cone"))

    @property
    def output_dir(self) -> str:
        return self.get("output", "dir")

    @property
    def digest(self) -> str:
        return config_digest(self.effective)

    def replicas(self) -> int:
        return self.integer("experiment", "replicas")


def config_digest(effective: Mapping[str, Mapping[str, str]]) -> str:
    """SHA-256 of the canonical JSON form; independent of key order in the file."""
    canon = json.dumps({s: dict(v) for s, v in effective.items()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _read(path: str) -> RawConfigParser:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    parser = RawConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=path)
    except ConfigParserError as err:
        raise ConfigError([f"parse error: {err}"]) from err
    return parser


def _effective(parser: RawConfigParser, overrides: Mapping[str, str]) -> Dict[str, Dict[str, str]]:
    eff: Dict[str, Dict[str, str]] = {s: dict(v) for s, v in DEFAULTS.items()}
    for section in parser.sections():
        eff.setdefault(section, {}).update({k: v.strip() for k, v in parser.items(section)})
    for dotted, value in overrides.items():
        section, _, key = dotted.rpartition(".")
        if not section:
            raise ConfigError([f"override {dotted!r} must be section.key"])
        eff.setdefault(section, {})[key] = str(value)
    return eff


def _build_factor(k: int, token: str, eff: Dict[str, Dict[str, str]]) -> FactorGroup:
    parts = [p.strip() for p in token.split(":")]
    if parts[0] == "cyclic":
        if len(parts) not in (2, 3):
            raise ConfigError([f"group: factor {k}: expected cyclic:m[:name], got {token!r}"])
        return FactorGroup.cyclic(k, int(parts[1]), parts[2] if len(parts) == 3 else None)
    if parts[0] == "table":
        sec = eff.get(f"factor.{k}")
        if not sec or "table" not in sec or "labels" not in sec:
            raise ConfigError([f"group: factor {k} is `table` but [factor.{k}] lacks labels/table"])
        labels = parse_list(sec["labels"])
        pos = {lab: j for j, lab in enumerate(labels)}
        rows = [r.split() for r in sec["table"].split(";") if r.strip()]
        try:
            table = [[pos[x] for x in row] for row in rows]
        except KeyError as err:
            raise ConfigError([f"factor {k}: unknown label {err.args[0]!r} in table"]) from err
        gens_txt = sec.get("generators", ", ".join(labels[1:]))
        try:
            gens = [pos[g] for g in parse_list(gens_txt)]
        except KeyError as err:
            raise ConfigError([f"factor {k}: unknown generator {err.args[0]!r}"]) from err
        return FactorGroup.from_table(k, labels, table, gens)
    raise ConfigError([f"group: factor {k}: unknown factor spec {token!r}"])


def _build_law(G: FreeProduct, sec: Mapping[str, str]) -> StepLaw:
    alphas: Sequence = parse_list(sec["alphas"]) if "alphas" in sec else [Fraction(1, G.r)] * G.r
    alphas = [Fraction(a) if isinstance(a, str) else a for a in alphas]
    laws = []
    for k, f in enumerate(G.factors, start=1):
        key = f"mu.{k}"
        if key in sec:
            laws.append({lab: float(p) for lab, p in parse_pmf(sec[key]).items()})
        else:
            vec = [0.0] * f.order
            for g in f.generators:
                vec[g] = 1.0 / len(f.generators)
            laws.append(vec)
    return StepLaw.build(G, alphas, laws)


def load_and_validate(path: str, overrides: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Parse, fill defaults, apply `section.key` overrides and validate. All
    violations found are raised together in one ConfigError.
    """
    parser = _read(path)
    eff = _effective(parser, overrides or {})
    violations: List[str] = []
    notices: List[str] = []

    G = law = pi = None
    try:
        tokens = parse_list(eff["group"]["factors"])
        G = FreeProduct(tuple(_build_factor(k, t, eff) for k, t in enumerate(tokens, start=1)))
        notices += [f"factor {k}: generating set symmetrised" for k in G.symmetrized]
    except GroupAxiomError as err:
        violations.append(f"group axiom: {err}")
    except ConfigError as err:
        violations.extend(err.violations)
    except ValueError as err:
        violations.append(f"group: {err}")

    if G is not None:
        try:
            law = _build_law(G, eff.get("step_law", {}))
        except ConfigError as err:
            violations.extend(err.violations)
        except (ValueError, ZeroDivisionError) as err:
            violations.append(f"step law: {err}")

    try:
        pi = OffspringLaw.build({int(k): float(p) for k, p in parse_pmf(eff["offspring"]["pmf"]).items()})
    except ConfigError as err:
        violations.extend(err.violations)
    except (ValueError, ZeroDivisionError) as err:
        violations.append(f"offspring: {err}")

    kind = eff["experiment"]["kind"]
    if kind not in KINDS:
        violations.append(f"experiment: kind {kind!r} not one of {', '.join(KINDS)}")
    master_seed = threads = 0
    try:
        master_seed = int(eff["experiment"]["master_seed"])
        if not 0 <= master_seed < 2**64:
            violations.append("experiment: master_seed must be a 64-bit unsigned integer")
        threads = int(eff["experiment"]["threads"])
        if threads < 1:
            violations.append("experiment: threads must be >= 1")
        if int(eff["experiment"]["replicas"]) < 1:
            violations.append("experiment: replicas must be >= 1")
        parse_bool(eff["group"]["strict_cone"])
        for token in parse_list(eff["experiment"]["a_grid"]):
            parse_speed_token(token)
        for section in ("caps",):
            for key, value in eff[section].items():
                if int(value) < 1:
                    violations.append(f"{section}: {key} must be >= 1")
    except (ValueError, ZeroDivisionError) as err:
        violations.append(f"experiment: {err}")

    if violations:
        raise ConfigError(violations)
    for note in notices:
        log.warning(note)
    return ExperimentConfig(path, eff, G, law, pi, kind, master_seed, threads, notices)


_SPEED_TOKEN = re.compile(r"^(ell|vmax|mid)?\s*(?:\*\s*([0-9./]+))?\s*([+-]\s*[0-9./]+)?$")


def parse_speed_token(token: str) -> Tuple[Optional[str], float, float]:
    """
    a-grid entries: a number, or `ell`, `vmax`, `mid` with an optional factor
    and offset, as in `ell*1.2` or `mid+0.05`. Returns (anchor, factor, offset).
    """
    token = token.strip()
    m = _SPEED_TOKEN.match(token)
    if not m or not m.group(1):
        return None, 1.0, parse_number(token)
    factor = parse_number(m.group(2)) if m.group(2) else 1.0
    offset = parse_number(m.group(3).replace(" ", "")) if m.group(3) else 0.0
    return m.group(1), factor, offset


def resolve_speed(token: str, ell: float, vmax: float) -> float:
    anchor, factor, offset = parse_speed_token(token)
    base = {"ell": ell, "vmax": vmax, "mid": (ell + vmax) / 2, None: 0.0}[anchor]
    return base * factor + offset
