from __future__ import annotations

import pytest

from ratchetsens.constitutive import MaterialParams, ModelKind, NewRule, Voce
from ratchetsens.program import make_experiment_program

NEW_RULE = NewRule(8094.2, 3.7978)


def af_params(n: int = 2, **kw) -> MaterialParams:
    c = (2000.0, 40000.0, 9000.0, 120000.0)[:n]
    kappa = (0.005, 0.02, 0.01, 0.05)[:n]
    return MaterialParams(ModelKind("AF", n), kw.pop("hardening", NEW_RULE), kw.pop("K", 400.0), c, kappa=kappa, **kw)


def ow1_params(n: int = 3, **kw) -> MaterialParams:
    c = (40000.0, 5000.0, 20000.0)[: n - 1] + (1000.0,)
    r = (60.0, 150.0, 90.0)[: n - 1]
    return MaterialParams(ModelKind("OW1", n), NEW_RULE, 400.0, c, r=r, elastic_branch=n - 1, **kw)


def ow2_params(n: int = 2, **kw) -> MaterialParams:
    c = (40000.0, 5000.0, 20000.0, 1000.0)[:n]
    r = (60.0, 150.0, 90.0, 200.0)[:n]
    return MaterialParams(ModelKind("OW2", n), NEW_RULE, 400.0, c, r=r, m=kw.pop("m", 5.0), **kw)


def voce_params(n: int = 2) -> MaterialParams:
    return af_params(n, hardening=Voce(400.0, 20.0))


@pytest.fixture
def af2() -> MaterialParams:
    return af_params(2)


@pytest.fixture
def ow1() -> MaterialParams:
    return ow1_params(3)


@pytest.fixture
def ow2() -> MaterialParams:
    return ow2_params(2)


@pytest.fixture
def short_program():
    return make_experiment_program(420.0, 470.0, 10)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.VERDICTS):
        terminalreporter.write_line(line)
