import numpy as np
import pytest

from kdegraph import reference as R
from kdegraph.kde import build_multilevel
from kdegraph.kernels import KernelSpec
from kdegraph.sampling import approx_degrees, make_rng


def measured_spec(data, family="gaussian", sigma=1.0, beta=1.0):
    """Spec whose declared tau is the dataset's true minimum pair weight."""
    tau = R.measured_tau(data, KernelSpec(family, sigma, 0.5, beta))
    return KernelSpec(family, sigma, min(max(tau, 1e-300), 1 - 1e-12), beta)


def exact_setup(data, spec, seed=0):
    """Exact-backend tree, its degree table, and the dense oracles."""
    tree = build_multilevel(data, spec)
    table = approx_degrees(tree, rng=make_rng(seed))
    K = R.dense_matrix(data, spec)
    return tree, table, K, R.exact_distributions(K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
