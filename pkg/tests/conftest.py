import numpy as np
import pytest

from quantldp import config, engine, topology
from quantldp.problems import DATA_DIR, ProblemSpec

FIVE_NODE = DATA_DIR / "five_node.toml"
FIVE_NODE_QUADRATIC = DATA_DIR / "five_node_quadratic.toml"


@pytest.fixture(scope="session")
def five_node():
    return config.load(FIVE_NODE)


@pytest.fixture(scope="session")
def five_node_quadratic():
    return config.load(FIVE_NODE_QUADRATIC)


def small_run(T=20, seed=0, kind="quadratic", quantization=True, W=None, **kw):
    """A three-agent run config with the reference schedules."""
    W = W or topology.three_node()
    m = W.m
    problem = kw.pop("problem", None) or ProblemSpec(kind=kind, dim=3, batch=2)
    return engine.RunConfig(
        W=W, lambda0=0.5, nu=0.71,
        d0=[2.0 + 0.01 * (i + 1) for i in range(m)],
        varsigma=[0.6 + 0.01 * (i + 1) for i in range(m)],
        T=T, seed=seed, problem=problem, quantization=quantization, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per criterion; echoed again in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
