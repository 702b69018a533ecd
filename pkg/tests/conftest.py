import numpy as np
import pytest

from pldp_shuffle.accountant import AmplificationInput
from pldp_shuffle.clone_count import poisson_binomial


def make_input(weights, w, delta1=0.0):
    from pldp_shuffle.clone_count import CloneCountDistribution

    counts = CloneCountDistribution(np.asarray(weights, dtype=float))
    return AmplificationInput(len(counts), w, delta1, counts)


@pytest.fixture
def two_user_input():
    """The hand-worked n = 2 case: weights [0.6, 0.4], w = 0.1."""
    return make_input([0.6, 0.4], 0.1)


@pytest.fixture(scope="session")
def homogeneous_inputs():
    """p held at 0.2 per rest user for a few population sizes."""
    return {n: AmplificationInput(n, 0.2, 0.0, poisson_binomial(np.full(n - 1, 0.4)))
            for n in (100, 1000, 10_000)}
