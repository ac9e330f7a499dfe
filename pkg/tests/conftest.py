"""Shared finite chains for the oracle, estimator and weight tests."""

import numpy as np
import pytest

from models import IsingSweep, IsingUpdate, build_finite_gibbs, build_finite_ising


def random_joint(rng, n1=3, n2=3):
    joint = rng.uniform(0.1, 1.0, size=(n1, n2))
    return joint / joint.sum()


def da_chain(seed, n1=3, n2=3):
    """Two-block Gibbs chain whose integrand depends on the second coordinate only."""
    rng = np.random.default_rng(seed)
    joint = random_joint(rng, n1, n2)
    column = rng.normal(size=n2)
    g = np.tile(column, (n1, 1))
    return build_finite_gibbs(joint, g, name=f"da-{seed}")


def vector_chain(seed):
    """Two-block Gibbs chain with d = 2 and a separate p = 3 control basis."""
    rng = np.random.default_rng(seed)
    joint = random_joint(rng, 3, 4)
    g = rng.normal(size=(3, 4, 2))
    f = rng.normal(size=(3, 4, 3))
    return build_finite_gibbs(joint, g, f, name=f"vector-{seed}")


@pytest.fixture(scope="session")
def da_chains():
    return [da_chain(seed) for seed in (11, 12, 13)]


@pytest.fixture(scope="session")
def ising_chains():
    return [
        build_finite_ising(2, 0.3, IsingSweep.CHECKERBOARD, IsingUpdate.GIBBS),
        build_finite_ising(2, 0.3, IsingSweep.RASTER, IsingUpdate.GIBBS),
    ]


@pytest.fixture(scope="session")
def gibbs_chains(da_chains, ising_chains):
    """Every finite Gibbs chain the identities are checked on."""
    return list(da_chains) + list(ising_chains) + [vector_chain(21)]


@pytest.fixture(scope="session")
def two_block_chains(da_chains, ising_chains):
    """K = 2 Gibbs chains for the random-sweep comparison."""
    return list(da_chains) + [ising_chains[0], vector_chain(22)]


@pytest.fixture(scope="session")
def make_da_chain():
    return da_chain
