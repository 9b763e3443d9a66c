import itertools
import pathlib

import numpy as np
import pytest

from detfuse.copulas import CopulaFamily, CopulaModel
from detfuse.design import (
    CostCoefficients,
    FusionRule,
    bayes_cost,
    optimal_fusion_rule,
)
from detfuse.models import HypothesisParams, ParamVector, Scenario
from detfuse.quantizers import QuantizerBank, SensorGrid, quantized_pmf

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"

# Dependence truths matching rank correlations 0.3 / 0.5 / 0.7.
THETA_BY_RHO = {0.3: 0.5109, 0.5: 1.0759, 0.7: 2.1316}


def make_scenario(theta=1.0759, p0=0.8, free=("p0", "h1_dep")) -> Scenario:
    """The reference two-sensor scenario with a chosen H1 dependence."""
    pv = ParamVector(
        p0,
        HypothesisParams(None, ((3.0, 4.0), (5.0, 4.0))),
        HypothesisParams(theta, ((5.0, 4.0), (7.0, 4.0))),
        free=tuple(free),
    )
    return Scenario(
        CopulaModel(CopulaFamily.INDEPENDENCE),
        CopulaModel(CopulaFamily.CLAYTON),
        pv,
    )


def one_sensor_toy(rng):
    """A random single-sensor, 4-cell design instance for exhaustive checks."""
    grid = SensorGrid(0.0, 8.0, 2.0)
    ind1 = CopulaModel(CopulaFamily.INDEPENDENCE, dim=1)
    sh0 = rng.uniform(1.0, 3.0)
    sc = rng.uniform(0.8, 2.0)
    pv = ParamVector(
        float(rng.uniform(0.3, 0.9)),
        HypothesisParams(None, ((sh0, sc),)),
        HypothesisParams(None, ((sh0 + rng.uniform(0.5, 2.0), sc),)),
        free=(),
    )
    costs = CostCoefficients(
        0.0, float(rng.uniform(0.5, 2.0)), float(rng.uniform(1.0, 3.0)), 0.0
    )
    return grid, Scenario(ind1, ind1, pv), costs


def exhaustive_toy_minimum(grid, scen, costs):
    """Global Bayes-cost minimum over all 16 bit labelings of the toy."""
    best = np.inf
    for bits in itertools.product([0, 1], repeat=4):
        bank = QuantizerBank([grid], [np.array([bits])])
        f0 = quantized_pmf(scen.hypothesis(0), bank).probabilities
        f1 = quantized_pmf(scen.hypothesis(1), bank).probabilities
        rule = optimal_fusion_rule(f0, f1, scen.params.p0, costs)
        best = min(best, bayes_cost(rule, f0, f1, scen.params.p0, costs))
    return best


@pytest.fixture
def ref_grid() -> SensorGrid:
    return SensorGrid(0.0, 60.0, 0.5)


@pytest.fixture
def ref_scenario() -> Scenario:
    return make_scenario()


@pytest.fixture
def init_bank(ref_grid) -> QuantizerBank:
    return QuantizerBank.from_indicators(
        [ref_grid, ref_grid], [[(3.0, -60.0)], [(-3.0, 60.0)]]
    )


@pytest.fixture
def init_rule(init_bank) -> FusionRule:
    return FusionRule.or_rule(init_bank.n_outcomes)


@pytest.fixture
def ref_costs() -> CostCoefficients:
    return CostCoefficients(0.0, 1.0, 2.0, 0.0)


@pytest.fixture
def quick_config_path() -> pathlib.Path:
    return CONFIG_DIR / "quick.toml"


@pytest.fixture
def reference_config_path() -> pathlib.Path:
    return CONFIG_DIR / "reference.toml"


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Recorder for per-criterion verdict lines, echoed after the run."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = []
        request.config._acceptance_lines = lines

    def record(line: str):
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
