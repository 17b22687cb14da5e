"""Two-sided discretized Wiener paths, the shift operator and the OU convolution.

Increments are keyed by ``(seed, component, absolute step index)`` through
numpy's counter-based Philox generator, so any window of a path can be
regenerated on its own and two paths with the same seed agree on the steps
they share regardless of their horizons.  Step ``k`` is the interval
``[k dt, (k + 1) dt]``; negative ``k`` lie in the past.
"""

from __future__ import annotations

import csv
import math

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import GridError, PathRangeError, ValidationError
from .model import fundamental_matrix, propagators, spectral_abscissa
from . import _kernels

_U64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def grid_steps(value, dt, name):
    """Number of ``dt`` steps in ``value``; rejects values off the grid."""
    if not dt > 0:
        raise GridError("dt must be positive", field="dt")
    if value < 0:
        raise GridError(f"{name} must be nonnegative, got {value}", field=name)
    q = value / dt
    n = round(q)
    if abs(q - n) > 1e-9 * max(1.0, abs(q)):
        raise GridError(f"{name}={value!r} is not a multiple of dt={dt!r}", field=name)
    return int(n)


def default_horizon(lam, dt, factor=18.5):
    """``factor / |lam|`` rounded up to a multiple of ``dt``."""
    return math.ceil(factor / abs(lam) / dt - 1e-9) * dt


def standard_normals(seed, component, k0, k1):
    """Standard normals for absolute steps ``k0 <= k < k1`` of one component."""
    if seed < 0 or seed > _U64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    out = np.empty(max(k1 - k0, 0))
    # forward steps and past steps come from two independent streams
    for direction, lo, hi in ((0, max(k0, 0), k1), (1, k0, min(k1, 0))):
        if hi <= lo:
            continue
        if direction == 0:
            p0, p1 = lo, hi
        else:
            p0, p1 = -hi, -lo  # stream position of step k is -k-1
        block = p0 // 4
        bg = Philox(key=np.array([seed, 2 * component + direction], dtype=np.uint64),
                    counter=np.array([block, 0, 0, 0], dtype=np.uint64))
        skip = p0 - 4 * block
        raw = bg.random_raw(skip + (p1 - p0))[skip:]
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        z = ndtri(u)
        if direction == 0:
            out[lo - k0:hi - k0] = z
        else:
            # position p corresponds to step -p-1, so reverse into step order
            out[lo - k0:hi - k0] = z[::-1]
    return out


def brownian_increments(seed, dt, k0, k1, m):
    """Wiener increments for steps ``k0 <= k < k1``, shape ``(k1 - k0, m)``."""
    z = np.column_stack([standard_normals(seed, c, k0, k1) for c in range(m)])
    return math.sqrt(dt) * z.reshape(k1 - k0, m)


class _PathAccess:
    """Shared time-indexing for paths and their shifted views.

    Subclasses provide ``base`` (a :class:`NoisePath`) and ``offset_steps``.
    View time ``r`` corresponds to base time ``r + offset``.
    """

    @property
    def offset(self):
        return self.offset_steps * self.base.dt

    @property
    def t_min(self):
        return -self.base.n_past * self.dt - self.offset

    @property
    def t_max(self):
        return self.base.n_fwd * self.dt - self.offset

    def step_index(self, t):
        """Signed step count of view time ``t`` (0 at view time 0)."""
        sign = -1 if t < 0 else 1
        return sign * grid_steps(abs(t), self.dt, "t")

    def _base_row(self, t):
        k = self.step_index(t) + self.offset_steps
        if not -self.base.n_past <= k <= self.base.n_fwd:
            raise PathRangeError(
                f"time {t} is outside the path window [{self.t_min}, {self.t_max}]",
                required_t_past=max(0.0, -(k * self.dt)),
                required_t_fwd=max(0.0, k * self.dt))
        return k + self.base.n_past

    def value(self, t):
        """``W(offset + t) - W(offset)`` on the base path."""
        b = self.base.values
        return b[self._base_row(t)] - b[self._base_row(0.0)]

    def values_between(self, t0, t1):
        b = self.base.values
        r0, r1 = self._base_row(t0), self._base_row(t1)
        return b[r0:r1 + 1] - b[self._base_row(0.0)]

    def increments(self, t0, t1):
        """Increments of the steps covering ``[t0, t1)``; shape ``(n, m)``."""
        r0, r1 = self._base_row(t0), self._base_row(t1)
        if r1 < r0:
            raise ValidationError(f"t1={t1} precedes t0={t0}")
        return self.base.dW[r0:r1]

    def times(self, t0=None, t1=None):
        t0 = self.t_min if t0 is None else t0
        t1 = self.t_max if t1 is None else t1
        k0, k1 = self.step_index(t0), self.step_index(t1)
        return np.arange(k0, k1 + 1) * self.dt


class NoisePath(_PathAccess):
    """Discretized two-sided Wiener path on ``[-t_past, t_fwd]`` with ``W(0) = 0``."""

    def __init__(self, dt, t_past, t_fwd, m, seed, dW, values=None):
        self.base = self
        self.offset_steps = 0
        self.dt = float(dt)
        self.t_past = float(t_past)
        self.t_fwd = float(t_fwd)
        self.m = int(m)
        self.seed = seed
        self.n_past = grid_steps(t_past, dt, "t_past")
        self.n_fwd = grid_steps(t_fwd, dt, "t_fwd")
        dW = np.asarray(dW, dtype=float).reshape(self.n_past + self.n_fwd, self.m)
        dW.setflags(write=False)
        self.dW = dW
        if values is None:
            values = np.zeros((self.n_past + self.n_fwd + 1, self.m))
            values[self.n_past + 1:] = np.cumsum(dW[self.n_past:], axis=0)
            values[:self.n_past] = -np.cumsum(dW[:self.n_past][::-1], axis=0)[::-1]
        values = np.asarray(values, dtype=float)
        values.setflags(write=False)
        self.values = values

    def __repr__(self):
        return (f"NoisePath(seed={self.seed}, dt={self.dt}, t_past={self.t_past}, "
                f"t_fwd={self.t_fwd}, m={self.m})")

    def coarsen(self, factor=2):
        """Path on the grid ``factor * dt`` with increments summed pairwise."""
        if self.n_past % factor or self.n_fwd % factor:
            raise GridError(f"horizons are not divisible into steps of {factor} * dt")
        dW = self.dW.reshape(-1, factor, self.m).sum(axis=1)
        return NoisePath(self.dt * factor, self.t_past, self.t_fwd, self.m, self.seed, dW)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"W_{i + 1}" for i in range(self.m)])
            for t, row in zip(self.times(), self.values):
                w.writerow([format_float(t)] + [format_float(v) for v in row])

    @classmethod
    def from_csv(cls, path, seed=None):
        """Load a path dumped by :meth:`to_csv`.

        Increments are recovered as differences of the stored values.  Paths not
        produced by this package are taken at face value; no temperedness or
        distributional check is made.
        """
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, W = data[:, 0], data[:, 1:]
        dt = float(t[1] - t[0])
        n_past = int(np.argmin(np.abs(t)))
        if t[n_past] != 0.0 or np.any(W[n_past] != 0.0):
            raise GridError("loaded path must contain t = 0 with W(0) = 0")
        return cls(dt, n_past * dt, (len(t) - 1 - n_past) * dt, W.shape[1], seed,
                   np.diff(W, axis=0), values=W)


def format_float(x):
    return format(float(x), ".17g")


class PathView(_PathAccess):
    """The shifted path ``theta_s omega`` as a read-only view of a base path."""

    def __init__(self, base, offset_steps):
        self.base = base
        self.offset_steps = int(offset_steps)

    @property
    def dt(self):
        return self.base.dt

    @property
    def m(self):
        return self.base.m

    def __repr__(self):
        return f"PathView({self.base!r}, offset={self.offset})"


def sample_path(seed, dt, t_past, t_fwd, m):
    """Reproducible two-sided Wiener path on ``[-t_past, t_fwd]``."""
    n_past = grid_steps(t_past, dt, "t_past")
    n_fwd = grid_steps(t_fwd, dt, "t_fwd")
    if m < 1:
        raise ValidationError("m must be >= 1")
    dW = brownian_increments(int(seed), float(dt), -n_past, n_fwd, int(m))
    return NoisePath(dt, t_past, t_fwd, m, int(seed), dW)


def shift(path, s):
    """``theta_s`` applied to a path or view."""
    base = path.base
    k = path.step_index(s)
    total = path.offset_steps + k
    if not -base.n_past <= total <= base.n_fwd:
        t = total * base.dt
        raise PathRangeError(
            f"shift by {s} leaves the path window [-{base.t_past}, {base.t_fwd}]",
            required_t_past=max(0.0, -t), required_t_fwd=max(0.0, t))
    return PathView(base, total)


# ---------------------------------------------------------------------------
# stochastic convolution


def convolution_process(A, sigma, path):
    """``N(t) = int_{t_min}^t Phi(t - s) sigma dW(s)`` on every grid time of ``path``.

    Returns ``(times, N)``; ``N`` starts at 0 at the left end of the window.
    """
    A = np.asarray(A, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    Phi, _, Psit = propagators(A, path.dt)
    dW = path.increments(path.t_min, path.t_max)
    S = dW @ sigma.T
    U = np.zeros_like(S)
    N = _kernels.linear_recursion(Phi, Psit, U, S, np.zeros(A.shape[0]))
    return path.times(), N


def stochastic_convolution(A, sigma, path, t):
    """``N(t)`` truncated at the left end of ``path``."""
    if not path.t_min <= t <= path.t_max:
        raise PathRangeError(f"t={t} is outside [{path.t_min}, {path.t_max}]")
    A = np.asarray(A, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    Phi, _, Psit = propagators(A, path.dt)
    S = path.increments(path.t_min, t) @ sigma.T
    N = _kernels.linear_recursion(Phi, Psit, np.zeros_like(S), S, np.zeros(A.shape[0]))
    return N[-1]


def truncation_bound(A, sigma, path, t):
    """``exp(lam (t - t_min)) * ||sigma||``: size of the neglected far past at ``t``."""
    lam = spectral_abscissa(A)
    return math.exp(lam * (t - path.t_min)) * float(np.abs(np.asarray(sigma)).max())


def convolution_riemann_sum(A, sigma, path, t0, reverse=False):
    """``sum_k Phi(-s_k) sigma dW_k`` over left endpoints of ``[t0, 0)``, in either order.

    Deterministic integrands make forward and backward Ito sums coincide; this
    evaluates the sum directly (no recursion) as an independent check.
    """
    A = np.asarray(A, dtype=float)
    dW = path.increments(t0, 0.0)
    n = len(dW)
    terms = np.array([fundamental_matrix(A, (n - k) * path.dt) @ (sigma @ dW[k])
                      for k in range(n)])
    order = range(n - 1, -1, -1) if reverse else range(n)
    total = np.zeros(A.shape[0])
    for k in order:
        total = total + terms[k]
    return total
