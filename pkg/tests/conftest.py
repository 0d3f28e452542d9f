"""Shared fixtures: shipped-case access and memoized scenario runs."""

from __future__ import annotations

from importlib import resources

import pytest

from cfsim import load_case, run_case


def case_path(name: str) -> str:
    return str(resources.files("cfsim") / "cases" / f"{name}.case")


def fresh_case(name: str):
    return load_case(case_path(name))


@pytest.fixture(scope="session")
def scenario():
    """Memoized scenario runner: scenario("wscc9", tend=3.0) simulates once
    per distinct (name, overrides) and reuses the result everywhere."""
    cache = {}

    def run(name: str, **overrides):
        key = (name, tuple(sorted(overrides.items())))
        if key not in cache:
            cache[key] = run_case(fresh_case(name), **overrides)
        return cache[key]

    return run


@pytest.fixture(scope="session")
def equilibrium_run(scenario):
    """WSCC base case with the scenario events stripped."""
    case = fresh_case("wscc9")
    case.scenario.events = []
    return run_case(case, tend=2.0)
