"""Pure-numpy reference versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def rls_rank1_update(P, B, W, phi, y):
    """Absorb one observation into a shared-covariance RLS state, in place.

    ``P`` is the (d, d) inverse Gram matrix, ``B`` and ``W`` are (d, k)
    right-hand sides and weights for ``k`` simultaneous targets ``y``.
    Returns the denominator ``1 + phi' P phi``.
    """
    u = P @ phi
    denom = 1.0 + float(phi @ u)
    err = y - phi @ W
    B += np.outer(phi, y)
    W += np.outer(u / denom, err)
    # outer(v, v) is bitwise symmetric, so P stays exactly symmetric
    v = u * (1.0 / np.sqrt(denom))
    P -= np.outer(v, v)
    return denom


def eval_products(V, kernels, out=None):
    """Row-wise products ``out[n, p] = prod_j V[n, kernels[p, j]]``."""
    V = np.asarray(V, dtype=np.float64)
    if out is None:
        out = np.empty((V.shape[0], kernels.shape[0]), dtype=np.float64)
    if kernels.shape[0] == 0:
        return out
    np.copyto(out, V[:, kernels[:, 0]])
    for j in range(1, kernels.shape[1]):
        out *= V[:, kernels[:, j]]
    return out
