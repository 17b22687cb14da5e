"""Forward and pullback integration of ``dX = [A X + h(X)] dt + sigma dW``.

The default scheme is exponential Euler,

    X[k+1] = Phi(dt) (X[k] + Psit(dt) h(X[k]) + sigma dW[k]),

with ``Psit = Phi(dt)^{-1} int_0^dt Phi(s) ds``; the linear flow is exact and
only the quadrature of ``h`` carries discretization error.  Plain
Euler-Maruyama is available as ``scheme="euler"`` for cross-checks.  The
integrator always runs on the noise grid: there is no interpolation of
Brownian increments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .errors import DivergenceError, PathRangeError, ValidationError
from .model import propagators
from .noise import format_float, shift

DIVERGENCE_GUARD = 1e8
SCHEMES = ("expeuler", "euler")


def kernel_h_args(spec):
    code, c0, c1, c2 = spec.h.coefficient_arrays()
    return code, spec.h.wiring_matrix, c0, c1, c2


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else None

    def index(self, t):
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not 0 <= k < len(self.times) or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise PathRangeError(f"t={t} is not a grid time of this trajectory")
        return k

    def at(self, t):
        return self.states[self.index(t)]

    def window(self, t0, t1):
        i0, i1 = self.index(t0), self.index(t1)
        return Trajectory(self.times[i0:i1 + 1], self.states[i0:i1 + 1], dict(self.meta))

    def to_csv(self, path, sidecar=True):
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for t, row in zip(self.times, self.states):
                w.writerow([format_float(t)] + [format_float(v) for v in row])
        if sidecar:
            from .io import dumps

            with open(str(path).rsplit(".", 1)[0] + ".json", "w") as fh:
                fh.write(dumps(self.meta))


@dataclass(frozen=True)
class TailEnvelope:
    tau: float
    horizon: float
    lower: np.ndarray
    upper: np.ndarray
    under_h: bool


def _path_meta(path, **extra):
    meta = {"seed": path.base.seed, "dt": path.dt, "offset": path.offset}
    meta.update(extra)
    return meta


def integrate_forward(spec, path, x0, t0, t1, scheme="expeuler", guard=DIVERGENCE_GUARD):
    """Solve from ``x0`` at time ``t0`` to ``t1`` on the grid of ``path`` (a path or view)."""
    if not t0 < t1:
        raise ValidationError(f"need t0 < t1, got t0={t0}, t1={t1}")
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    x0 = np.asarray(x0, dtype=float).reshape(spec.d)
    S = path.increments(t0, t1) @ spec.sigma.T
    if scheme == "expeuler":
        Phi, _, Psit = propagators(spec.A, path.dt)
        X, k_fail = _kernels.expeuler(Phi, Psit, S, x0, *kernel_h_args(spec), guard)
    else:
        X, k_fail = _kernels.euler_maruyama(spec.A, path.dt, S, x0, *kernel_h_args(spec), guard)
    times = path.times(t0, t1)
    if k_fail >= 0:
        raise DivergenceError(
            f"state norm exceeded {guard:g} at t={times[k_fail]:.6g}; "
            "the small-gain hypotheses are probably violated",
            t=float(times[k_fail]))
    return Trajectory(times, X, _path_meta(path, x0=x0.tolist(), t0=t0, scheme=scheme))


def pullback(spec, path, x, t, scheme="expeuler"):
    """``phi(t, theta_{-t} omega) x``: the state at time 0 of the solution started at ``-t``."""
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    if t == 0:
        return x.copy()
    if -t < path.t_min - 1e-12:
        raise PathRangeError(
            f"pullback time {t} exceeds the available past {-path.t_min}",
            required_t_past=t + path.offset)
    view = shift(path, -t)
    return integrate_forward(spec, view, x, 0.0, t, scheme=scheme).final


def pullback_curve(spec, path, x, t_max, stride=1):
    """``(ts, states)`` with ``states[j] = pullback(x, ts[j])`` for ``ts`` on a strided grid."""
    n = path.step_index(t_max)
    ks = np.arange(0, n + 1, int(stride))
    ts = ks * path.dt
    return ts, np.array([pullback(spec, path, x, t) for t in ts])


def _trapezoid_weights(A, dt):
    """``(W0, W1)`` with ``int_0^dt Phi(dt - r) [(1 - r/dt) a + (r/dt) b] dr = W0 a + W1 b``."""
    d = A.shape[0]
    M = np.zeros((3 * d, 3 * d))
    M[:d, :d] = A
    M[:d, d:2 * d] = np.eye(d)
    M[d:2 * d, 2 * d:] = np.eye(d)
    E = expm(M * dt)
    Psi = E[:d, d:2 * d]
    W1 = E[:d, 2 * d:] / dt
    return Psi - W1, W1


def voc_residual(spec, path, x0, t1):
    """Largest gap between the scheme and the variation-of-constants formula on ``[0, t1]``.

    The formula's drift integral is evaluated independently of the scheme, by
    integrating ``Phi`` exactly against the piecewise-linear interpolant of
    ``h(X)``.  The scheme freezes ``h`` over each step, so the gap is the
    first-order quadrature error of ``h`` and vanishes for constant ``h``.
    """
    traj = integrate_forward(spec, path, x0, 0.0, t1)
    X = traj.states
    dt = path.dt
    A = spec.A
    Phi, _, Psit = propagators(A, dt)
    W0, W1 = _trapezoid_weights(A, dt)
    H = spec.h(X)
    n = len(X) - 1
    d = spec.d
    lin = np.empty_like(X)
    drift = np.zeros_like(X)
    lin[0] = X[0]
    for k in range(n):
        lin[k + 1] = Phi @ lin[k]
        drift[k + 1] = Phi @ drift[k] + W0 @ H[k] + W1 @ H[k + 1]
    S = path.increments(0.0, t1) @ spec.sigma.T
    noise = _kernels.linear_recursion(Phi, Psit, np.zeros((n, d)), S, np.zeros(d))
    return float(np.abs(X - (lin + drift + noise)).max())


def tail_envelopes(spec, path, x, tau, horizon, under_h=False, stride=1):
    """Componentwise inf/sup of ``pullback(x, t)`` (or of its ``h``) for grid ``t`` in ``[tau, horizon)``.

    ``stride > 1`` samples every ``stride``-th tail time only; the cost is
    quadratic in ``horizon / (dt * stride)``.
    """
    lower, upper = sweep_envelopes(spec, path, x, tau, horizon, 0.0, 0.0, under_h, stride)
    return TailEnvelope(tau, horizon, lower[0], upper[0], under_h)


def sweep_envelopes(spec, path, x, tau, horizon, t_from, t_to, under_h=True, stride=1):
    """Tail envelopes at every grid time in ``[t_from, t_to]`` of one path.

    Row ``k`` holds the inf/sup over ``t`` in ``[tau, horizon)`` of the pullback
    trajectory ending at grid time ``t_from + k dt``, i.e. the envelope
    evaluated at the shifted noise ``theta_s omega``.  All trajectories share
    the increments of ``path``, as the cocycle requires.
    """
    if not 0 <= tau < horizon:
        raise ValidationError(f"need 0 <= tau < horizon, got tau={tau}, horizon={horizon}")
    x = np.asarray(x, dtype=float).reshape(spec.d)
    n_tau = path.step_index(tau)
    n_h = path.step_index(horizon) - 1
    if n_h < n_tau:
        raise ValidationError("horizon must exceed tau by at least one step")
    stride = int(stride)
    # align the first start so that the tail at t_to always contains age n_tau
    k_to = path.step_index(t_to)
    k_from = path.step_index(t_from)
    k_start = k_from - n_h
    k_start += (k_to - n_tau - k_start) % stride
    if k_start * path.dt < path.t_min - 1e-12 or t_to > path.t_max + 1e-12:
        raise PathRangeError(
            f"envelopes on [{t_from}, {t_to}] with horizon {horizon} need the path "
            f"to cover [{k_start * path.dt}, {t_to}]",
            required_t_past=-(k_start * path.dt) + path.offset)
    S = path.increments(k_start * path.dt, t_to) @ spec.sigma.T
    Phi, _, Psit = propagators(spec.A, path.dt)
    return _kernels.envelope_sweep(
        Phi, Psit, S, x, k_from - k_start, k_to - k_start, n_tau, n_h, stride,
        *kernel_h_args(spec), under_h)


__all__ = [
    "Trajectory",
    "TailEnvelope",
    "integrate_forward",
    "pullback",
    "pullback_curve",
    "voc_residual",
    "tail_envelopes",
    "sweep_envelopes",
]
