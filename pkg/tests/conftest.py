import numpy as np
import pytest

import gmrfcov as gc


def dense_inverse(Q: gc.SparseSymMatrix) -> np.ndarray:
    return np.linalg.inv(Q.to_dense())


def factor(Q: gc.SparseSymMatrix, constraint=None) -> gc.CholFactor:
    """Order (optionally constrained), analyze and factorize in one step."""
    if constraint is None:
        perm = gc.amd_order(Q)
    else:
        perm = gc.camd_order(Q, constraint)
    return gc.factorize(Q, gc.symbolic_cholesky(Q, perm))


@pytest.fixture(scope="session")
def rw1_6x6():
    lam = gc.random_lambda(36, 17)
    Q, G, H = gc.rw1_posterior_precision([6, 6], lam)
    return Q, G, H


@pytest.fixture(scope="session")
def rw1_10x10():
    lam = gc.random_lambda(100, 23)
    Q, G, H = gc.rw1_posterior_precision([10, 10], lam)
    return Q, G, H
