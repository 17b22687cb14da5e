"""Stationary law: Monte Carlo estimates and closed-form references.

Two Monte Carlo modes are provided and meant to be cross-checked:
``ensemble-pullback`` draws one pullback state per seed, while
``ergodic-time-average`` thins a single long forward run.  Burn-in and
thinning default to multiples of ``1/|lam|``, the relaxation time of the
linear part.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import _kernels
from .dynamics import DIVERGENCE_GUARD, kernel_h_args, pullback
from .errors import (ConvergenceError, DivergenceError, EigenvalueError,
                     ValidationError)
from .io import write_json, write_table
from .model import (deterministic_equilibrium, eigenvalues, propagators,
                    small_gain_report, spectral_abscissa)
from .noise import brownian_increments, grid_steps, sample_path

ENSEMBLE = "ensemble-pullback"
ERGODIC = "ergodic-time-average"
MODES = (ENSEMBLE, ERGODIC)


@dataclass(frozen=True, eq=False)
class StationaryEstimate:
    samples: int
    mean: np.ndarray
    covariance: np.ndarray
    histograms: list
    mode: str
    mean_se: np.ndarray
    data: np.ndarray = field(repr=False, default=None)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mode": self.mode,
            "samples": self.samples,
            "mean": self.mean,
            "mean_se": self.mean_se,
            "covariance": self.covariance,
            "meta": self.meta,
        }

    def export(self, out_dir):
        """``stationary.json`` plus one ``histogram_<i>.csv`` per coordinate."""
        write_json(f"{out_dir}/stationary.json", self.to_dict())
        for i, (edges, counts) in enumerate(self.histograms):
            rows = zip(edges[:-1], edges[1:], counts)
            write_table(f"{out_dir}/histogram_{i + 1}.csv", ["lo", "hi", "count"],
                        ((float(a), float(b), int(c)) for a, b, c in rows))


@dataclass(frozen=True, eq=False)
class DensityGrid:
    xs: np.ndarray
    density: np.ndarray
    normalization: float

    def to_csv(self, path):
        write_table(path, ["x", "p"], zip(map(float, self.xs), map(float, self.density)))


# ---------------------------------------------------------------------------
# closed forms


def lyapunov_covariance(A, sigma):
    """Solve ``A S + S A^T + sigma sigma^T = 0`` by the Kronecker (vectorized) system."""
    A = np.asarray(A, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ev = eigenvalues(A)
    worst = ev[np.argmax(ev.real)]
    if worst.real >= 0:
        raise EigenvalueError(
            f"A is not stable: eigenvalue {worst:.6g} has nonnegative real part",
            eigenvalue=[float(worst.real), float(worst.imag)])
    d = A.shape[0]
    Q = sigma @ sigma.T
    I = np.eye(d)
    M = np.kron(I, A) + np.kron(A, I)
    S = np.linalg.solve(M, -Q.reshape(-1, order="F")).reshape(d, d, order="F")
    return 0.5 * (S + S.T)


def lyapunov_residual(A, sigma, S):
    A = np.asarray(A, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return float(np.abs(A @ S + S @ A.T + sigma @ sigma.T).max())


EDGE_MASS = 1e-4


def exact_density_1d(a, h, sigma, xs):
    """Stationary density of ``dx = (a x + h(x)) dt + sigma dW`` on the grid ``xs``.

    ``p(x) ~ exp((2 / sigma^2) int_0^x (a y + h(y)) dy)``; the ``a y`` part is
    integrated exactly and ``h`` by cumulative trapezoid.  ``h`` is a 1-D
    :class:`OutputFunctionSpec` or any vectorized callable.
    """
    if not a < 0:
        raise ValidationError(f"need a < 0, got {a}")
    if not sigma > 0:
        raise ValidationError(f"need sigma > 0, got {sigma}")
    xs = np.asarray(xs, dtype=float)
    if hasattr(h, "wiring"):
        hv = np.asarray(h(xs[:, None]))[:, 0]
    else:
        hv = np.asarray(h(xs), dtype=float)
    H = cumulative_trapezoid(hv, xs, initial=0.0)
    H -= np.interp(0.0, xs, H) if xs[0] <= 0.0 <= xs[-1] else 0.0
    logp = (2.0 / sigma**2) * (0.5 * a * xs**2 + H)
    p = np.exp(logp - logp.max())
    p /= np.trapezoid(p, xs)
    span = xs[-1] - xs[0]
    if max(p[0], p[-1]) * span > EDGE_MASS:
        raise ValidationError(
            f"density grid [{xs[0]}, {xs[-1]}] is too narrow: edge mass "
            f"{max(p[0], p[-1]) * span:.3g} exceeds {EDGE_MASS:g}; widen the grid")
    return DensityGrid(xs, p, float(np.trapezoid(p, xs)))


def drift_check(spec, epsilon, R, n_samples=10_000, seed=0):
    """Check ``LV(x) <= -(lam - eps - L) |x|^2 / 2`` on ``R <= |x| <= 10 R``.

    ``V(x) = |x|^2 / 2`` and ``LV = sum(sigma_i^2) / 2 + <x, A x + h(x)>``.
    Returns ``(ok, worst_margin)`` with ``margin = LV + (lam - eps - L)|x|^2 / 2``.
    """
    lam = -spectral_abscissa(spec.A)
    if not lam > spec.L + epsilon:
        raise ValidationError(
            f"drift condition needs lam > L + eps; got lam={lam:.6g}, L={spec.L:.6g}, "
            f"eps={epsilon:.6g}", lam=lam, L=spec.L, epsilon=epsilon)
    sig = spec.sigma
    if sig.shape[0] != sig.shape[1] or np.any(sig - np.diag(np.diag(sig))):
        raise ValidationError("drift_check requires a square diagonal sigma")
    if not R > 0:
        raise ValidationError(f"R must be positive, got {R}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_samples, spec.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = dirs * rng.uniform(R, 10 * R, size=(n_samples, 1))
    noise = 0.5 * float(np.sum(np.diag(sig) ** 2))
    LV = noise + np.einsum("ij,ij->i", X, X @ spec.A.T + spec.h(X))
    margin = LV + 0.5 * (lam - epsilon - spec.L) * np.einsum("ij,ij->i", X, X)
    worst = float(margin.max())
    return worst <= 0.0, worst


# ---------------------------------------------------------------------------
# Monte Carlo


def _default_x0(spec):
    try:
        return deterministic_equilibrium(spec, max_iter=2000)
    except ConvergenceError:
        return np.zeros(spec.d)


def _histograms(data, bins):
    out = []
    for i in range(data.shape[1]):
        counts, edges = np.histogram(data[:, i], bins="fd" if bins is None else bins)
        out.append((edges, counts))
    return out


def _batch_se(data, n_batches=50):
    n = len(data) // n_batches * n_batches
    if n < n_batches * 2:
        return data.std(axis=0, ddof=1) / math.sqrt(len(data))
    means = data[:n].reshape(n_batches, -1, data.shape[1]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def _ensemble_samples(spec, n, burn_in, dt, seed, x0, threads):
    def one(s):
        path = sample_path(s, dt, burn_in, 0.0, spec.m)
        return pullback(spec, path, x0, burn_in)

    seeds = [seed + i for i in range(n)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    return np.array(rows).reshape(n, spec.d)


def _ergodic_samples(spec, n, burn_in, dt, seed, x0, thin, chunk=1 << 20):
    n_burn = grid_steps(burn_in, dt, "burn_in")
    stride = grid_steps(thin, dt, "thin")
    if stride < 1:
        raise ValidationError("thin must be at least one step")
    total = n_burn + (n - 1) * stride + 1
    Phi, _, Psit = propagators(spec.A, dt)
    hargs = kernel_h_args(spec)
    out = np.empty((n, spec.d))
    x = np.asarray(x0, dtype=float).copy()
    got = 0
    k0 = 0
    while k0 < total:
        k1 = min(k0 + chunk, total)
        S = brownian_increments(seed, dt, k0, k1, spec.m) @ spec.sigma.T
        # first recorded step inside this chunk
        if k0 <= n_burn:
            start = n_burn - k0
        else:
            start = (-(k0 - n_burn)) % stride
        last = k1 == total
        n_steps = len(S)
        n_out = 0 if start > n_steps else (n_steps - start) // stride + 1
        if not last:
            # the state at k1 is recorded by the next chunk
            n_out = 0 if start >= n_steps else (n_steps - 1 - start) // stride + 1
        vals, x, j, k_fail = _kernels.expeuler_sampled(
            Phi, Psit, S, x, *hargs, DIVERGENCE_GUARD, start, stride, max(n_out, 0))
        if k_fail >= 0:
            raise DivergenceError(f"ergodic run diverged at step {k0 + k_fail}")
        take = min(j, n - got)
        out[got:got + take] = vals[:take]
        got += take
        k0 = k1
    return out[:got]


def mc_stationary(spec, n_samples, mode=ENSEMBLE, burn_in=None, dt=0.01, seed=0,
                  thin=None, x0=None, threads=1, bins=None, check=True):
    """Monte Carlo estimate of the stationary law.

    ``ensemble-pullback``: ``n_samples`` seeds, one pullback of ``x0`` over
    ``burn_in`` each.  ``ergodic-time-average``: one forward run from ``x0``,
    ``n_samples`` states taken every ``thin`` after ``burn_in``.
    Results do not depend on ``threads``.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if n_samples < 2:
        raise ValidationError("need at least 2 samples")
    lam = spectral_abscissa(spec.A)
    if lam >= 0:
        raise ValidationError(f"A is not stable (spectral abscissa {lam:.6g})")
    if check:
        rep = small_gain_report(spec)
        if not (rep.smallGainOk or spec.L < abs(lam)):
            raise ValidationError(
                f"neither the small-gain condition nor L < |lam| holds ({rep.reason})")
    tau = 1.0 / abs(lam)
    if burn_in is None:
        burn_in = math.ceil(10 * tau / dt - 1e-9) * dt
    if burn_in < 10 * tau - 1e-9:
        raise ValidationError(f"burn_in must be at least 10/|lam| = {10 * tau:.6g}")
    if thin is None:
        thin = max(1, math.ceil(tau / dt - 1e-9)) * dt
    x0 = _default_x0(spec) if x0 is None else np.asarray(x0, dtype=float).reshape(spec.d)
    if mode == ENSEMBLE:
        data = _ensemble_samples(spec, n_samples, burn_in, dt, seed, x0, threads)
        se = data.std(axis=0, ddof=1) / math.sqrt(n_samples)
    else:
        data = _ergodic_samples(spec, n_samples, burn_in, dt, seed, x0, thin)
        se = _batch_se(data)
    cov = np.atleast_2d(np.cov(data, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    meta = {"burn_in": burn_in, "dt": dt, "seed": seed, "thin": thin if mode == ERGODIC else None,
            "x0": x0}
    return StationaryEstimate(len(data), data.mean(axis=0), cov, _histograms(data, bins),
                              mode, se, data, meta)


def small_noise_concentration(spec, sigma_scales, n_samples, mode=ENSEMBLE, **kwargs):
    """``[(scale, distance of mean to x_bar, trace of covariance, max SE)]`` per scale.

    ``x_bar`` solves ``A x + h(x) = 0``; the same seeds are reused at every
    scale.
    """
    report = small_gain_report(spec)
    if not report.smallGainOk:
        raise ValidationError(f"small-gain condition fails: {report.reason}")
    xbar = deterministic_equilibrium(spec)
    kwargs.setdefault("x0", xbar)
    rows = []
    for s in sigma_scales:
        est = mc_stationary(spec.replace(sigma=s * spec.sigma), n_samples, mode, check=False,
                            **kwargs)
        rows.append({
            "scale": float(s),
            "meanDistToDetEq": float(np.abs(est.mean - xbar).max()),
            "covTrace": float(np.trace(est.covariance)),
            "meanSE": float(est.mean_se.max()),
            "mean": est.mean,
        })
    return xbar, rows


__all__ = [
    "StationaryEstimate",
    "DensityGrid",
    "lyapunov_covariance",
    "lyapunov_residual",
    "exact_density_1d",
    "drift_check",
    "mc_stationary",
    "small_noise_concentration",
]
