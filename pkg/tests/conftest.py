from __future__ import annotations

import time

import numpy as np
import pytest

from brickmanual.catalog import Component, default_catalog
from brickmanual.mangen import GenConfig, generate_suite

ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Remember one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def prim(catalog):
    """Primitive components by type id."""
    return {k: Component.primitive(g) for k, g in catalog.items()}


SUITE_CFG = GenConfig(seed=1)
SUITE_SETS = 50


SUITE_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def suite():
    """The seeded 50-set acceptance suite, generated once per session."""
    t0 = time.perf_counter()
    sets = generate_suite(SUITE_CFG, SUITE_SETS)
    SUITE_SECONDS["generate"] = time.perf_counter() - t0
    return sets


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
