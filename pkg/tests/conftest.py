from __future__ import annotations

import os
import textwrap

import pytest

from freebrw.brw import OffspringLaw
from freebrw.config import load_and_validate
from freebrw.groups import FreeProduct
from freebrw.walks import StepLaw

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture
def tree3() -> FreeProduct:
    """Z2 * Z2 * Z2: the Cayley graph is the 3-regular tree."""
    return FreeProduct.cyclic(2, 2, 2)


@pytest.fixture
def srw(tree3) -> StepLaw:
    return StepLaw.uniform_generators(tree3)


@pytest.fixture
def z2z3() -> FreeProduct:
    return FreeProduct.cyclic(2, 3)


@pytest.fixture
def binary() -> OffspringLaw:
    """1 or 2 children with equal probability, rho = 3/2."""
    return OffspringLaw.build({1: 0.5, 2: 0.5})


@pytest.fixture
def write_config(tmp_path):
    def _write(body: str, name: str = "exp.ini") -> str:
        path = tmp_path / name
        path.write_text(textwrap.dedent(body), encoding="utf-8")
        return str(path)
    return _write


@pytest.fixture
def z2z4_config():
    """Z/2Z * Z/4Z with mass on b2, which sits at distance 2, so K = 2."""
    return load_and_validate(os.path.join(CONFIGS, "z2_z4.ini"))
