"""Compiled forward/backward pass and SGD loop on padded layer arrays.

Layout: ``widths = [K, n_1, ..., n_{d-1}, 1]``; ``W[l, :widths[l+1], :widths[l]]``
and ``B[l, :widths[l+1]]`` hold layer ``l``'s parameters, the output layer last.
``mask[l, :widths[l]]`` keeps (1) or drops (0) the nodes feeding layer ``l``.
"""

import numpy as np
from numba import njit

DIVERGENCE_LIMIT = 1e12


@njit(cache=True, nogil=True)
def loss_and_grad(W, B, widths, x, y, mask, inv_p, act, pre, dz, gW, gB):
    """Square loss of one example and its gradient, written into ``gW`` and ``gB``."""
    L = W.shape[0]
    for j in range(widths[0]):
        act[0, j] = x[j] * mask[0, j] * inv_p
    for l in range(L):
        n_in = widths[l]
        n_out = widths[l + 1]
        for i in range(n_out):
            s = B[l, i]
            for j in range(n_in):
                s += W[l, i, j] * act[l, j]
            pre[l, i] = s
            if l < L - 1:
                h = s if s > 0.0 else 0.0
                act[l + 1, i] = h * mask[l + 1, i] * inv_p
    out = pre[L - 1, 0]
    resid = out - y
    dz[L - 1, 0] = 2.0 * resid
    for l in range(L - 1, -1, -1):
        n_in = widths[l]
        n_out = widths[l + 1]
        for i in range(n_out):
            gB[l, i] = dz[l, i]
            for j in range(n_in):
                gW[l, i, j] = dz[l, i] * act[l, j]
        if l > 0:
            for j in range(n_in):
                if pre[l - 1, j] > 0.0:
                    s = 0.0
                    for i in range(n_out):
                        s += W[l, i, j] * dz[l, i]
                    dz[l - 1, j] = s * mask[l, j] * inv_p
                else:
                    dz[l - 1, j] = 0.0
    return resid * resid


@njit(cache=True, nogil=True)
def sgd_loop(W, B, widths, X, Y, order, masks, inv_p, lrs, momentum, weight_decay):
    """Run ``len(order)`` SGD steps in place; return the failing step or -1.

    ``masks`` has one ``(L, maxw)`` slice per step, or a single slice reused
    for every step when training without dropout.
    """
    L, maxw = W.shape[0], W.shape[1]
    act = np.zeros((L, maxw))
    pre = np.zeros((L, maxw))
    dz = np.zeros((L, maxw))
    gW = np.zeros_like(W)
    gB = np.zeros_like(B)
    vW = np.zeros_like(W)
    vB = np.zeros_like(B)
    fixed_mask = masks.shape[0] == 1
    for t in range(order.shape[0]):
        m = masks[0] if fixed_mask else masks[t]
        e = order[t]
        loss = loss_and_grad(W, B, widths, X[e], Y[e], m, inv_p, act, pre, dz, gW, gB)
        if not (loss <= DIVERGENCE_LIMIT):
            return t
        lr = lrs[t]
        for l in range(L):
            for i in range(widths[l + 1]):
                vB[l, i] = momentum * vB[l, i] - lr * gB[l, i]
                B[l, i] += vB[l, i]
                for j in range(widths[l]):
                    g = gW[l, i, j] + weight_decay * W[l, i, j]
                    vW[l, i, j] = momentum * vW[l, i, j] - lr * g
                    W[l, i, j] += vW[l, i, j]
    return -1
