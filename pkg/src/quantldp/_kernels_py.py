"""NumPy fallback for the compiled kernels; same signatures, same summation order."""

import numpy as np


def quantize_into(y, d, uniforms, out):
    y = np.asarray(y, dtype=float)
    level = np.ceil(y / d) - 1.0
    z = y - level * d
    low = z <= 0.0
    high = z > d
    level = np.where(low, level - 1.0, np.where(high, level + 1.0, level))
    z = np.where(low, z + d, np.where(high, z - d, z))
    out[:] = np.where(np.asarray(uniforms) < z / d, (level + 1.0) * d, level * d)


def _neg_sigmoid(margin):
    e = np.exp(-np.abs(margin))
    return np.where(margin >= 0, e / (1.0 + e), 1.0 / (1.0 + e))


def _accumulate(G, rounds):
    # G: (rounds, batch, dim) per-point gradients; batch first, then rounds in order
    batch = G.shape[1]
    g = G[:, 0].copy()
    for s in range(1, batch):
        g += G[:, s]
    g /= batch
    # cumsum accumulates strictly in ascending round order
    return np.cumsum(g, axis=0)[-1] / rounds


def logistic_online_grad(A, b, theta, rounds):
    A = A[:rounds]
    b = b[:rounds]
    margin = np.einsum("ksj,j->ks", A, theta) * b
    w = -b * _neg_sigmoid(margin)
    return _accumulate(w[..., None] * A, rounds)


def quadratic_online_grad(targets, theta, rounds):
    return _accumulate(theta - targets[:rounds], rounds)


def logistic_losses(A, b, theta):
    return np.logaddexp(0.0, -b * (A @ theta))
