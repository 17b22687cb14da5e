"""Compiled inner loops.

All recursions share one update order, ``X <- Phi @ (X + Psit @ u + S)``, so
that the gain operator, the stochastic convolution and the forward
integrator agree bitwise whenever their inputs do.
"""

import math

import numpy as np
from numba import njit

HALF_PI = 0.5 * math.pi


@njit(cache=True, nogil=True)
def h_eval(code, W, c0, c1, c2, x, out):
    d = x.shape[0]
    for i in range(d):
        y = 0.0
        for j in range(d):
            if W[i, j] != 0.0:
                y += W[i, j] * x[j]
        if code == 0:
            out[i] = c0[i]
        elif code == 1:
            v = c0[i] + c1[i] * y
            if v < 0.0:
                v = 0.0
            elif v > c2[i]:
                v = c2[i]
            out[i] = v
        else:
            if code == 2:
                g = HALF_PI - math.atan(y)
            elif code == 3:
                g = 1.0 + math.tanh(y)
            else:
                g = HALF_PI + math.atan(y)
            out[i] = 1.0 / (c0[i] + c1[i] * g)


@njit(cache=True, nogil=True)
def _step(Phi, Psit, x, u, s, tmp, out):
    d = x.shape[0]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += Psit[i, j] * u[j]
        tmp[i] = x[i] + acc + s[i]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += Phi[i, j] * tmp[j]
        out[i] = acc


@njit(cache=True, nogil=True)
def linear_recursion(Phi, Psit, U, S, x0):
    """``X[k+1] = Phi (X[k] + Psit U[k] + S[k])`` for ``k < len(S)``."""
    n = S.shape[0]
    d = x0.shape[0]
    X = np.empty((n + 1, d))
    X[0] = x0
    tmp = np.empty(d)
    for k in range(n):
        _step(Phi, Psit, X[k], U[k], S[k], tmp, X[k + 1])
    return X


@njit(cache=True, nogil=True)
def expeuler(Phi, Psit, S, x0, code, W, c0, c1, c2, guard):
    """Exponential Euler with ``u = h(X)``; returns ``(X, k_fail)``, ``k_fail=-1`` if finite."""
    n = S.shape[0]
    d = x0.shape[0]
    X = np.empty((n + 1, d))
    X[0] = x0
    tmp = np.empty(d)
    hx = np.empty(d)
    for k in range(n):
        h_eval(code, W, c0, c1, c2, X[k], hx)
        _step(Phi, Psit, X[k], hx, S[k], tmp, X[k + 1])
        for i in range(d):
            v = X[k + 1, i]
            if not (abs(v) <= guard):
                return X, k + 1
    return X, -1


@njit(cache=True, nogil=True)
def euler_maruyama(A, dt, S, x0, code, W, c0, c1, c2, guard):
    """Plain ``X[k+1] = X[k] + (A X[k] + h(X[k])) dt + S[k]``."""
    n = S.shape[0]
    d = x0.shape[0]
    X = np.empty((n + 1, d))
    X[0] = x0
    hx = np.empty(d)
    for k in range(n):
        h_eval(code, W, c0, c1, c2, X[k], hx)
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += A[i, j] * X[k, j]
            v = X[k, i] + (acc + hx[i]) * dt + S[k, i]
            X[k + 1, i] = v
            if not (abs(v) <= guard):
                return X, k + 1
    return X, -1


@njit(cache=True, nogil=True)
def expeuler_sampled(Phi, Psit, S, x0, code, W, c0, c1, c2, guard, start, stride, n_out):
    """Run the exponential Euler scheme without storing the path.

    Records the state at steps ``start, start + stride, ...`` (``n_out`` of
    them).  Used for long ergodic runs where the full path does not fit in
    memory; ``S`` holds one chunk and the call is repeated per chunk.
    """
    n = S.shape[0]
    d = x0.shape[0]
    out = np.empty((n_out, d))
    x = x0.copy()
    nxt = np.empty(d)
    tmp = np.empty(d)
    hx = np.empty(d)
    j = 0
    for k in range(n + 1):
        if k >= start and (k - start) % stride == 0 and j < n_out:
            out[j] = x
            j += 1
        if k == n:
            break
        h_eval(code, W, c0, c1, c2, x, hx)
        _step(Phi, Psit, x, hx, S[k], tmp, nxt)
        for i in range(d):
            x[i] = nxt[i]
            if not (abs(x[i]) <= guard):
                return out, x, j, k + 1
    return out, x, j, -1


@njit(cache=True, nogil=True)
def envelope_sweep(Phi, Psit, S, x, k_first, k_last, n_tau, n_h, stride,
                   code, W, c0, c1, c2, under_h):
    """Tail envelopes of pullback trajectories at grid indices ``k_first..k_last``.

    A trajectory is started from ``x`` at every grid index ``s >= 0`` with
    ``s % stride == 0``; at grid index ``k`` the componentwise min/max is
    taken over trajectories of age ``k - s`` in ``[n_tau, n_h]`` (of
    ``h(state)`` when ``under_h``).  ``S[k]`` is the noise of step ``k``.
    """
    d = x.shape[0]
    size = n_h // stride + 2
    states = np.empty((size, d))
    starts = np.full(size, -1)
    m = k_last - k_first + 1
    lower = np.full((m, d), np.inf)
    upper = np.full((m, d), -np.inf)
    tmp = np.empty(d)
    hx = np.empty(d)
    y = np.empty(d)
    for k in range(0, k_last + 1):
        if k % stride == 0:
            slot = (k // stride) % size
            starts[slot] = k
            for i in range(d):
                states[slot, i] = x[i]
        record = k >= k_first
        r = k - k_first
        last = k == k_last
        for slot in range(size):
            s0 = starts[slot]
            if s0 < 0:
                continue
            a = k - s0
            if a > n_h:
                starts[slot] = -1
                continue
            for i in range(d):
                y[i] = states[slot, i]
            h_eval(code, W, c0, c1, c2, y, hx)
            if record and a >= n_tau:
                for i in range(d):
                    v = hx[i] if under_h else y[i]
                    if v < lower[r, i]:
                        lower[r, i] = v
                    if v > upper[r, i]:
                        upper[r, i] = v
            if last or a == n_h:
                continue
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += Psit[i, j] * hx[j]
                tmp[i] = y[i] + acc + S[k, i]
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += Phi[i, j] * tmp[j]
                states[slot, i] = acc
    return lower, upper
