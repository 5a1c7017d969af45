from __future__ import annotations

import numpy as np
import pytest

from regret_dissect.asymptotics import analyze
from regret_dissect.config import Instance
from regret_dissect.core_model import ParamFamily, TrueDistribution
from regret_dissect.decision_oracle import CostModel

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def wellspec_instance() -> Instance:
    fam = ParamFamily.gaussian_location([[1.0]])
    return Instance("wellspec", fam, TrueDistribution.gaussian([0.0], [[1.0]]), CostModel.newsvendor([1.0], [1.0]))


def misspec_instance() -> Instance:
    fam = ParamFamily.gaussian_location([[1.0]])
    truth = TrueDistribution.gaussian_mixture([0.5, 0.5], [[-2.0], [2.0]], [[1.0]])
    return Instance("misspec", fam, truth, CostModel.newsvendor([1.0], [3.0]))


def portfolio_wellspec() -> Instance:
    fam = ParamFamily.gaussian_location([[1.0]])
    return Instance("portfolio-ws", fam, TrueDistribution.gaussian([1.0], [[1.0]]), CostModel.portfolio(0.5))


def portfolio_misspec() -> Instance:
    fam = ParamFamily.gaussian_location([[1.0]])
    truth = TrueDistribution.gaussian_mixture([0.3, 0.7], [[-1.0], [1.5]], [[0.5]])
    return Instance("portfolio-ms", fam, truth, CostModel.portfolio(0.5))


def newsvendor_2d() -> Instance:
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    fam = ParamFamily.gaussian_location(cov)
    truth = TrueDistribution.in_family(fam, np.array([0.5, -0.5]))
    return Instance("newsvendor-2d", fam, truth, CostModel.newsvendor([1.0, 2.0], [3.0, 1.0]))


WELL_SPECIFIED = (wellspec_instance, portfolio_wellspec, newsvendor_2d)
ALL_FIXTURES = (wellspec_instance, misspec_instance, portfolio_wellspec, portfolio_misspec, newsvendor_2d)


@pytest.fixture(scope="session")
def wellspec():
    return wellspec_instance()


@pytest.fixture(scope="session")
def misspec():
    return misspec_instance()


@pytest.fixture(scope="session")
def summaries():
    """Asymptotic summaries of every named fixture, computed once."""
    out = {}
    for make in ALL_FIXTURES:
        inst = make()
        out[inst.name] = analyze(inst.truth, inst.family, inst.model)
    return out
