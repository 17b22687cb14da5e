"""The input-to-state operator ``K``, the gain operator ``h o K`` and its fixed point.

A random input ``u`` is represented along one noise orbit by the grid
function ``v(t_k) = u(theta_{t_k} omega)``.  ``K`` then becomes the causal
recursion

    X[k+1] = Phi(dt) (X[k] + Psit(dt) v[k] + sigma dW[k]),   X[0] = 0,

started at the left end of the path; the first ``warmup`` time units are
discarded as truncation burn-in.  This is the same update the forward
integrator uses, so the fixed point and the integrator agree bitwise along
the equilibrium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import Trajectory, integrate_forward, pullback, sweep_envelopes
from .errors import ConvergenceError, SmallGainError, ValidationError
from .io import write_json, write_table
from .model import propagators, small_gain_report, spectral_abscissa
from .noise import default_horizon, grid_steps


@dataclass(frozen=True, eq=False)
class InputProcess:
    """Grid function ``t_k -> u(theta_{t_k} omega)`` with values in ``[0, bound]``."""

    times: np.ndarray
    values: np.ndarray
    bound: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or len(v) != len(self.times):
            raise ValidationError(
                f"values must have shape (len(times), d); got {v.shape} for {len(self.times)} times")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bound", np.asarray(self.bound, dtype=float).reshape(v.shape[1]))

    @property
    def d(self):
        return self.values.shape[1]

    def in_range(self, tol=0.0):
        return bool(np.all(self.values >= -tol) and np.all(self.values <= self.bound + tol))

    def at(self, t):
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        return self.values[k]

    @classmethod
    def constant(cls, path, c, bound):
        times = path.times()
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(bound),))
        return cls(times, np.tile(c, (len(times), 1)), bound)

    def to_csv(self, path):
        write_table(path, ["t"] + [f"u_{i + 1}" for i in range(self.d)],
                    ([t, *row] for t, row in zip(self.times, self.values)))


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    u_star: InputProcess
    iterations: int
    residuals: list
    rate_estimate: float
    equilibrium: Trajectory
    warmup: float
    gain: float
    meta: dict = field(default_factory=dict)

    def report(self):
        return {
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "rate_estimate": self.rate_estimate,
            "gain": self.gain,
            "warmup": self.warmup,
            "meta": self.meta,
        }

    def export(self, out_dir):
        """Write ``u_star.csv``, ``equilibrium.csv`` and ``fixed_point.json`` into ``out_dir``."""
        self.u_star.to_csv(f"{out_dir}/u_star.csv")
        self.equilibrium.to_csv(f"{out_dir}/equilibrium.csv", sidecar=False)
        write_json(f"{out_dir}/fixed_point.json", self.report())


def default_warmup(spec, dt):
    return default_horizon(spectral_abscissa(spec.A), dt)


def _warmup_steps(spec, path, warmup):
    if warmup is None:
        warmup = default_warmup(spec, path.dt)
    n = grid_steps(warmup, path.dt, "warmup")
    total = len(path.times()) - 1
    if n > total:
        raise ValidationError(
            f"warmup {warmup} exceeds the path window of length {total * path.dt}; "
            "lengthen t_past or t_fwd", required_length=warmup)
    return n, warmup


def _check_grid(path, u):
    n = len(path.times())
    if u.values.shape[0] != n:
        raise ValidationError(
            f"input has {u.values.shape[0]} grid points but the path has {n}")


def _K_full(spec, path, u):
    _check_grid(path, u)
    Phi, _, Psit = propagators(spec.A, path.dt)
    S = path.increments(path.t_min, path.t_max) @ spec.sigma.T
    return _kernels.linear_recursion(Phi, Psit, u.values[:-1], S, np.zeros(spec.d))


def apply_K(spec, path, u, warmup=None):
    """``X(t) = [K(u)](theta_t omega)`` on the post-warmup grid."""
    n_w, warmup = _warmup_steps(spec, path, warmup)
    X = _K_full(spec, path, u)
    times = path.times()
    return Trajectory(times[n_w:], X[n_w:], {"warmup": warmup})


def apply_gain(spec, path, u):
    """``h(K(u))`` on the full grid, as a new input process."""
    X = _K_full(spec, path, u)
    return InputProcess(u.times, spec.h(X), spec.N)


def _sup(a, b, start=0):
    return float(np.abs(a.values[start:] - b.values[start:]).max())


def contraction_ratio(spec, path, u1, u2, warmup=None):
    """``rho(h K u1, h K u2) / rho(u1, u2)``.

    The numerator is the sup distance on the post-warmup grid.  The
    denominator is taken over the whole grid: inputs before the warmup still
    drive the state inside the window, so only the full-grid sup bounds it.
    """
    n_w, _ = _warmup_steps(spec, path, warmup)
    den = _sup(u1, u2)
    if den == 0.0:
        raise ValidationError("contraction ratio is undefined for identical inputs")
    num = _sup(apply_gain(spec, path, u1), apply_gain(spec, path, u2), n_w)
    return num / den


def iteration_bound(gain, tol, rho0):
    """``ceil(log(tol / rho0) / log(gain)) + 2``: iterations a contraction needs."""
    if rho0 <= tol or gain <= 0.0:
        return 2
    return math.ceil(math.log(tol / rho0) / math.log(gain)) + 2


def iterate_fixed_point(spec, path, u0=None, tol=1e-10, max_iter=500, warmup=None, report=None):
    """Banach iteration ``u <- h(K(u))`` until successive iterates are within ``tol``.

    The stopping distance is the sup over the post-warmup grid.  Refuses to run
    when the small-gain inequality fails.
    """
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if report is None:
        report = small_gain_report(spec)
    if not report.smallGainOk:
        raise SmallGainError(
            f"small-gain condition fails ({report.reason}); run `check` and inspect the report",
            gain=report.gain, reason=report.reason)
    n_w, warmup = _warmup_steps(spec, path, warmup)
    if u0 is None:
        c = np.clip(spec.h(np.zeros(spec.d)), 0.0, spec.N)
        u0 = InputProcess.constant(path, c, spec.N)
    _check_grid(path, u0)
    u = u0
    residuals = []
    for _ in range(max_iter):
        new = apply_gain(spec, path, u)
        r = _sup(new, u, n_w)
        residuals.append(r)
        u = new
        if r <= tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence within {max_iter} iterations (last residual {residuals[-1]:.3g})",
            residuals=residuals)
    positive = [r for r in residuals if r > 0]
    if len(positive) >= 2:
        rate = (positive[-1] / positive[0]) ** (1.0 / (len(positive) - 1))
    else:
        rate = 0.0
    equilibrium = apply_K(spec, path, u, warmup)
    meta = {"tol": tol, "dt": path.dt, "seed": path.base.seed,
            "iteration_bound": iteration_bound(report.gain, tol, residuals[0])}
    return FixedPointResult(u, len(residuals), residuals, rate, equilibrium, warmup,
                            report.gain, meta)


def default_initial_conditions(d, scale=5.0):
    """``0, +-scale * 1`` and ``+-scale`` along the first and last axes."""
    one = np.ones(d)
    e1 = np.eye(d)[0]
    ed = np.eye(d)[-1]
    return [np.zeros(d), scale * one, -scale * one, scale * e1, -scale * ed]


def verify_equilibrium(spec, path, result, t0, t1, scheme="euler",
                       initial_conditions=None, pullback_time=None):
    """``(maxDeviation, pullbackGap)`` for a computed equilibrium.

    ``maxDeviation`` restarts the integrator from ``X*(t0)`` and compares with
    ``X*`` on ``[t0, t1]``.  The default scheme is Euler-Maruyama: the
    exponential Euler scheme reproduces ``X*`` up to the iteration tolerance,
    so only a different scheme measures discretization error.
    ``pullbackGap`` is the largest distance between ``X*(0)`` and pullbacks of
    the given initial conditions over ``pullback_time`` (default: the path's
    past minus the warmup).
    """
    eq = result.equilibrium
    traj = integrate_forward(spec, path, eq.at(t0), t0, t1, scheme=scheme)
    ref = eq.window(t0, t1).states
    max_dev = float(np.abs(traj.states - ref).max())
    if pullback_time is None:
        pullback_time = -path.t_min - result.warmup
    if pullback_time <= 0:
        raise ValidationError("the path's past is shorter than the warmup; no pullback time left")
    if initial_conditions is None:
        initial_conditions = default_initial_conditions(spec.d)
    x_star = eq.at(0.0)
    gap = max(float(np.abs(pullback(spec, path, x, pullback_time) - x_star).max())
              for x in initial_conditions)
    return max_dev, gap


# ---------------------------------------------------------------------------
# envelopes as inputs, and the sandwich checks


def envelope_inputs(spec, path, x, tau, horizon, t_from=None, stride=1):
    """Lower/upper tail envelopes of ``h`` along the orbit, as input processes.

    Envelopes are computed on ``[t_from, t_max]`` (default: as early as the
    path allows); earlier grid times get the trivial bounds ``0`` and ``N``,
    which are valid by the range of ``h``.
    """
    times = path.times()
    earliest = path.t_min + horizon + stride * path.dt
    if t_from is None:
        t_from = earliest
    t_from = times[np.searchsorted(times, t_from - 1e-9 * path.dt)]
    lo, hi = sweep_envelopes(spec, path, x, tau, horizon, t_from, path.t_max,
                             under_h=True, stride=stride)
    n = len(times)
    k0 = n - len(lo)
    a = np.zeros((n, spec.d))
    b = np.tile(spec.N, (n, 1))
    a[k0:] = lo
    b[k0:] = hi
    return InputProcess(times, a, spec.N), InputProcess(times, b, spec.N)


def even_iterates(spec, path, u, k_max):
    """``[(h K)^{2k} u for k = 1..k_max]``."""
    out = []
    for _ in range(k_max):
        u = apply_gain(spec, path, apply_gain(spec, path, u))
        out.append(u)
    return out


def sandwich(spec, path, x, tau, T, horizon=None, t_from=None, stride=1):
    """``(K(a)(0), pullback(x, T), K(b)(0))`` with ``a, b`` the tail envelopes of ``h``.

    For cooperative ``A`` and order-preserving ``h`` the middle value lies
    between the outer two, up to terms of order ``exp(lam (T - tau))``.
    ``horizon`` must exceed ``T`` so that the envelope tails contain the
    trajectory started at ``-T``.
    """
    if horizon is None:
        horizon = T + tau
    if horizon <= T:
        raise ValidationError(f"horizon {horizon} must exceed T={T}")
    a, b = envelope_inputs(spec, path, x, tau, horizon, t_from, stride)
    ka = _K_full(spec, path, a)
    kb = _K_full(spec, path, b)
    k0 = path.step_index(0.0) - path.step_index(path.t_min)
    return ka[k0], pullback(spec, path, x, T), kb[k0]


__all__ = [
    "InputProcess",
    "FixedPointResult",
    "apply_K",
    "apply_gain",
    "contraction_ratio",
    "iterate_fixed_point",
    "iteration_bound",
    "verify_equilibrium",
    "envelope_inputs",
    "even_iterates",
    "sandwich",
]
