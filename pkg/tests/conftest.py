import numpy as np
import pytest

from adgrid.features import FeatureSet, fit_pca, fit_permutation, project_set
from adgrid.quantizer import LopqConfig, fit_lopq

from _support import ACCEPTANCE_LINES, mixture



def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model_128():
    """LOPQ model at the production geometry (d=128, M=16) with a small coarse vocabulary."""
    rng = np.random.default_rng(7)
    raw = FeatureSet.from_array(mixture(rng, 3000, 128))
    pca = fit_pca(raw, 128)
    plan = fit_permutation(pca.variances, 16)
    train = project_set(raw, pca, plan)
    return fit_lopq(train, LopqConfig(bits=5, M=16, seed=3), pca, plan), train


@pytest.fixture(scope="session")
def model_small():
    rng = np.random.default_rng(11)
    X = mixture(rng, 1500, 16)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return fit_lopq(X, LopqConfig(bits=3, M=4, seed=1)), X
