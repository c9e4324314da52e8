from __future__ import annotations

import pytest

from freebrw.config import (config_digest, load_and_validate, parse_pmf, parse_speed_token, resolve_speed)
from freebrw.errors import ConfigError

TREE3 = """
[group]
factors = cyclic:2, cyclic:2, cyclic:2

[experiment]
kind = validate
"""


def test_defaults_fill_a_minimal_file(write_config):
    cfg = load_and_validate(write_config(TREE3))
    assert cfg.kind == "validate"
    assert cfg.group.r == 3
    assert cfg.law.K == 1
    assert cfg.offspring.rho == pytest.approx(1.5)
    assert cfg.integer("caps", "pop_cap") == 10_000_000
    assert cfg.integers("ldp", "exact_n") == [8, 10, 12, 14]
    assert not cfg.strict_cone
    assert cfg.notices == []


def test_table_factor_is_symmetrised(write_config):
    cfg = load_and_validate(write_config("""
        [group]
        factors = cyclic:2, table

        [factor.2]
        labels = e, b, b2
        table = e b b2; b b2 e; b2 e b
        generators = b

        [step_law]
        alphas = 1/2, 1/2
        mu.2 = b:1/2, b2:1/2
    """))
    assert cfg.group.factor(2).generators == frozenset({1, 2})
    assert cfg.notices == ["factor 2: generating set symmetrised"]
    assert cfg.law.alphas == (0.5, 0.5)


def test_childless_offspring_is_rejected(write_config):
    with pytest.raises(ConfigError) as err:
        load_and_validate(write_config(TREE3 + "\n[offspring]\npmf = 0:1/4, 2:3/4\n"))
    assert any(v.startswith("A2 violated") for v in err.value.violations)


def test_missing_factor_weight_is_rejected(write_config):
    with pytest.raises(ConfigError) as err:
        load_and_validate(write_config(TREE3 + "\n[step_law]\nalphas = 1, 0, 0\n"))
    assert any(v.startswith("A3 violated") for v in err.value.violations)


def test_all_violations_are_reported_together(write_config):
    body = """
        [group]
        factors = cyclic:2, cyclic:2

        [step_law]
        alphas = 1, 0

        [offspring]
        pmf = 1:1

        [experiment]
        kind = nonsense
        threads = 0
    """
    with pytest.raises(ConfigError) as err:
        load_and_validate(write_config(body))
    text = " | ".join(err.value.violations)
    assert "A3 violated" in text
    assert "A1 violated" in text
    assert "kind 'nonsense'" in text
    assert "threads must be >= 1" in text


def test_broken_group_table(write_config):
    body = """
        [group]
        factors = cyclic:2, table

        [factor.2]
        labels = e, x, y
        table = e x y; x e e; y e e
    """
    with pytest.raises(ConfigError) as err:
        load_and_validate(write_config(body))
    assert any("associativity" in v for v in err.value.violations)


def test_overrides_take_section_dot_key(write_config):
    cfg = load_and_validate(write_config(TREE3), {"caps.pop_cap": "5", "experiment.master_seed": "9"})
    assert cfg.integer("caps", "pop_cap") == 5
    assert cfg.master_seed == 9
    with pytest.raises(ConfigError):
        load_and_validate(write_config(TREE3), {"pop_cap": "5"})


def test_digest_ignores_key_order(write_config):
    one = load_and_validate(write_config("[experiment]\nkind = validate\nreplicas = 7\n", "a.ini"))
    two = load_and_validate(write_config("[experiment]\nreplicas = 7\nkind = validate\n", "b.ini"))
    assert one.digest == two.digest
    three = load_and_validate(write_config("[experiment]\nkind = validate\nreplicas = 8\n", "c.ini"))
    assert three.digest != one.digest
    assert config_digest(one.effective) == one.digest


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_and_validate("/nonexistent/experiment.ini")


def test_unparsable_file(write_config):
    with pytest.raises(ConfigError):
        load_and_validate(write_config("factors = cyclic:2\n"))


def test_parse_pmf_accepts_fractions():
    pmf = parse_pmf("1:1/3, 2:2/3")
    assert pmf == {"1": pytest.approx(1 / 3), "2": pytest.approx(2 / 3)}
    with pytest.raises(ValueError):
        parse_pmf("1=0.5")


def test_speed_tokens():
    assert parse_speed_token("0.4") == (None, 1.0, 0.4)
    assert parse_speed_token("ell*1.2") == ("ell", 1.2, 0.0)
    assert parse_speed_token("mid+0.05") == ("mid", 1.0, 0.05)
    assert parse_speed_token("vmax - 0.1") == ("vmax", 1.0, -0.1)
    assert resolve_speed("mid", 0.3, 0.9) == pytest.approx(0.6)
    assert resolve_speed("ell*2", 0.3, 0.9) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        parse_speed_token("fast")


def test_bad_speed_token_is_a_violation(write_config):
    with pytest.raises(ConfigError):
        load_and_validate(write_config(TREE3 + "a_grid = ell, fast\n"))


def test_shipped_z2_z4_config(z2z4_config):
    cfg = z2z4_config
    assert cfg.kind == "ldp-curve"
    assert cfg.group.r == 2
    assert [f.order for f in cfg.group.factors] == [2, 4]
    assert cfg.group.factor(2).dist_from_identity == (0, 1, 2, 1)
    assert cfg.law.K == 2
    assert cfg.offspring.rho == pytest.approx(1.5)
