import os
import sys
from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv

# Load test overrides before the settings singleton is built
env_file = Path(__file__).parent.parent / ".env.test"
load_dotenv(env_file)
os.environ.setdefault("DISTCOMP_LOG", "WARNING")

sys.path.append(str(Path(__file__).parent.parent))

from distcomp.games.costfun import CostModel
from distcomp.games.functions import build_function
from distcomp.games.gridmeasure import Grid
from distcomp.models.schemas import FunctionSpec, SolverConfig


@pytest.fixture(scope="session")
def grid_small():
    return Grid.uniform(41)


@pytest.fixture(scope="session")
def grid_medium():
    return Grid.uniform(101)


@pytest.fixture(scope="session")
def grid_201():
    return Grid.uniform(201)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fast_solver():
    """Loose certificates for solver runs on small grids."""
    return SolverConfig(kkt_tol=5e-3, max_iter=3000, seed=0)


@pytest.fixture
def linear_cost():
    """Separable cost with gamma(x) = 2x and beta = 0, the textbook all-pay contest."""
    return CostModel.separable(
        build_function(FunctionSpec(form="power", a=2.0, p=1.0)),
        build_function(FunctionSpec(form="affine", a=0.0, b=0.0)),
        label="gamma=2x",
    )


@pytest.fixture
def tmp_out(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    return out
