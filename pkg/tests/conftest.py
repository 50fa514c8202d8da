"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

# Add paths for imports - do this before other imports
repo_root = Path(__file__).parent.parent
sys.path.insert(0, str(repo_root / "scripts"))
sys.path.insert(0, str(Path(__file__).parent))

import pytest

from model import ModelParams, SwitchCosts, SwitchCostSpec


SCENARIO1 = dict(beta=0.04, gamma=0.02, rho=0.002, nu=0.05, kappa=0.03,
                 sigma=0.2, delta=0.2, c_I=0.01, c_V=0.05)
SCENARIO2 = dict(SCENARIO1, kappa=0.02, c_V=0.04)


@pytest.fixture
def scenario1_params() -> ModelParams:
    return ModelParams(**SCENARIO1)


@pytest.fixture
def scenario2_params() -> ModelParams:
    return ModelParams(**SCENARIO2)


@pytest.fixture
def sir_params() -> ModelParams:
    """Scenario 1 with rho = 0, where the s = 0 datum is exact."""
    return ModelParams(**dict(SCENARIO1, rho=0.0))


@pytest.fixture
def constant_costs() -> SwitchCosts:
    return SwitchCosts.constant(0.002)


@pytest.fixture
def scenario1_costs() -> SwitchCosts:
    return SwitchCosts(
        g01=SwitchCostSpec.proportional(0.001, ref_p=0),
        g10=SwitchCostSpec.proportional(0.001, ref_p=1),
    )


@pytest.fixture
def run_dir(tmp_path) -> Path:
    out = tmp_path / "run"
    out.mkdir()
    return out


SCENARIO1_CFG = """\
# scenario 1, constant costs
beta = 0.04
gamma = 0.02
rho = 0.002
nu = 0.05
kappa = 0.03
sigma = 0.2
delta = 0.2
c_i = 0.01
c_v = 0.05
g01 = 0.002
g10 = 0.002
"""


@pytest.fixture
def scenario1_cfg(tmp_path) -> Path:
    path = tmp_path / "scenario1.cfg"
    path.write_text(SCENARIO1_CFG)
    return path
