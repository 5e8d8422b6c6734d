"""Compiled inner loops for forward passes and online backpropagation.

Networks are flattened into topological order with incoming edges stored
CSR-style by target: edges ``start[j]:start[j+1]`` feed node ``j``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True, nogil=True)
def forward_one(x, n_in, bias, start, src, w, a):
    for j in range(n_in):
        a[j] = x[j]
    for j in range(n_in, a.shape[0]):
        net = bias[j]
        for e in range(start[j], start[j + 1]):
            net += w[e] * a[src[e]]
        a[j] = _sigmoid(net)


@njit(cache=True, nogil=True)
def forward_batch(X, n_in, bias, start, src, w):
    m = X.shape[0]
    n = bias.shape[0]
    A = np.empty((m, n))
    for r in range(m):
        forward_one(X[r], n_in, bias, start, src, w, A[r])
    return A


@njit(cache=True, nogil=True)
def _backward(a, t, n_in, start, src, w, out_pos, xent, err, delta):
    """Fill ``delta`` with dE/dnet for E = 1/2 sum (a - t)^2 (or cross-entropy)."""
    n = a.shape[0]
    for j in range(n):
        err[j] = 0.0
    direct = np.zeros(n)
    for k in range(out_pos.shape[0]):
        o = out_pos[k]
        if xent:
            direct[o] = a[o] - t[k]
        else:
            err[o] += a[o] - t[k]
    for j in range(n - 1, n_in - 1, -1):
        d = err[j] * a[j] * (1.0 - a[j]) + direct[j]
        delta[j] = d
        for e in range(start[j], start[j + 1]):
            err[src[e]] += w[e] * d


@njit(cache=True, nogil=True)
def example_gradient(x, t, n_in, bias, start, src, w, out_pos, xent):
    n = bias.shape[0]
    a = np.empty(n)
    err = np.empty(n)
    delta = np.zeros(n)
    forward_one(x, n_in, bias, start, src, w, a)
    _backward(a, t, n_in, start, src, w, out_pos, xent, err, delta)
    gw = np.zeros(w.shape[0])
    for j in range(n_in, n):
        for e in range(start[j], start[j + 1]):
            gw[e] = delta[j] * a[src[e]]
    return gw, delta


@njit(cache=True, nogil=True)
def train_online(X, T, orders, n_in, bias, start, src, w, out_pos, lr, momentum, xent):
    """Per-example gradient steps with momentum; ``bias`` and ``w`` are updated in place."""
    n = bias.shape[0]
    a = np.empty(n)
    err = np.empty(n)
    delta = np.zeros(n)
    vw = np.zeros(w.shape[0])
    vb = np.zeros(n)
    for ep in range(orders.shape[0]):
        for r in range(orders.shape[1]):
            i = orders[ep, r]
            forward_one(X[i], n_in, bias, start, src, w, a)
            _backward(a, T[i], n_in, start, src, w, out_pos, xent, err, delta)
            for j in range(n_in, n):
                d = delta[j]
                for e in range(start[j], start[j + 1]):
                    vw[e] = momentum * vw[e] - lr * d * a[src[e]]
                    w[e] += vw[e]
                vb[j] = momentum * vb[j] - lr * d
                bias[j] += vb[j]
