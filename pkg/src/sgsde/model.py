"""System description, output-function catalog and the structural checks.

The system is ``dX = [A X + h(X)] dt + sigma dW`` with a stable linear part
``A`` and a bounded, monotone output function ``h`` drawn from a small
catalog.  Everything here is a pure function of immutable inputs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConfigurationError,
    EigenvalueError,
    LipschitzError,
    MonotonicityError,
    ValidationError,
)

ORDER_PRESERVING = "order-preserving"
ANTI_ORDER_PRESERVING = "anti-order-preserving"
MONOTONICITIES = (ORDER_PRESERVING, ANTI_ORDER_PRESERVING)

# kind -> (integer code used by the compiled kernels, parameter names)
CATALOG = {
    "constant": (0, ("c",)),
    "affine-clamped": (1, ("c0", "c1", "cap")),
    "reciprocal-offset-arctan": (2, ("c0", "c1")),
    "reciprocal-offset-tanh": (3, ("c0", "c1")),
    "reciprocal-offset-atan-shifted": (4, ("c0", "c1")),
}

# sup of the inner function g over the real line; g ranges over (0, G)
_G_SUP = {
    "reciprocal-offset-arctan": math.pi,
    "reciprocal-offset-tanh": 2.0,
    "reciprocal-offset-atan-shifted": math.pi,
}


def _as_matrix(a, name):
    arr = np.array(a, dtype=float)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix", field=name)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} has non-finite entries", field=name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OutputFunctionSpec:
    """One catalog output function, applied coordinatewise.

    ``h_i(x) = f_i(y_i)`` with ``y_i = sum(x[j] for j in wiring[i])`` and
    ``f_i`` the catalog function with coefficients ``params[name][i]``.
    """

    kind: str
    wiring: tuple
    params: dict
    monotonicity: str

    def __post_init__(self):
        if self.kind not in CATALOG:
            raise ConfigurationError(
                f"unknown output function kind {self.kind!r}; "
                f"expected one of {sorted(CATALOG)}", field="kind")
        if self.monotonicity not in MONOTONICITIES:
            raise ConfigurationError(
                f"monotonicity must be one of {MONOTONICITIES}", field="monotonicity")
        wiring = tuple(tuple(int(j) for j in row) for row in self.wiring)
        d = len(wiring)
        if d == 0:
            raise ConfigurationError("wiring must have one entry per state coordinate",
                                     field="wiring")
        for i, row in enumerate(wiring):
            if not row:
                raise ConfigurationError(f"wiring[{i}] is empty", field=f"wiring/{i}")
            if any(j < 0 or j >= d for j in row) or len(set(row)) != len(row):
                raise ConfigurationError(
                    f"wiring[{i}] must list distinct indices in [0, {d})",
                    field=f"wiring/{i}")
        object.__setattr__(self, "wiring", wiring)

        names = CATALOG[self.kind][1]
        unknown = set(self.params) - set(names)
        if unknown:
            raise ConfigurationError(
                f"unknown parameters {sorted(unknown)} for kind {self.kind!r}",
                field="params")
        params = {}
        for name in names:
            if name not in self.params:
                raise ConfigurationError(f"missing parameter {name!r}",
                                         field=f"params/{name}")
            arr = np.broadcast_to(np.asarray(self.params[name], dtype=float), (d,)).copy()
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"parameter {name!r} is not finite",
                                         field=f"params/{name}")
            arr.setflags(write=False)
            params[name] = arr
        object.__setattr__(self, "params", params)
        self._check_range()

    def _check_range(self):
        p = self.params
        if self.kind == "constant":
            if np.any(p["c"] < 0):
                raise ConfigurationError("constant output must be nonnegative",
                                         field="params/c")
        elif self.kind == "affine-clamped":
            if np.any(p["cap"] <= 0):
                raise ConfigurationError("cap must be positive", field="params/cap")
        else:
            lo = np.minimum(p["c0"], p["c0"] + _G_SUP[self.kind] * p["c1"])
            if np.any(lo <= 0):
                i = int(np.argmin(lo))
                raise ConfigurationError(
                    f"denominator of h_{i} reaches {lo[i]:.6g} <= 0 on the range "
                    "of the inner function", field=f"params/c0/{i}")

    @property
    def d(self):
        return len(self.wiring)

    @property
    def wiring_matrix(self):
        W = np.zeros((self.d, self.d))
        for i, row in enumerate(self.wiring):
            W[i, list(row)] = 1.0
        return W

    @property
    def N(self):
        """Componentwise supremum of the range of h."""
        p = self.params
        if self.kind == "constant":
            return p["c"].copy()
        if self.kind == "affine-clamped":
            return p["cap"].copy()
        lo = np.minimum(p["c0"], p["c0"] + _G_SUP[self.kind] * p["c1"])
        return 1.0 / lo

    def coefficient_arrays(self):
        """``(code, c0, c1, c2)`` in the layout the compiled kernels expect."""
        code = CATALOG[self.kind][0]
        d = self.d
        z = np.zeros(d)
        p = self.params
        if self.kind == "constant":
            return code, p["c"].copy(), z, z.copy()
        if self.kind == "affine-clamped":
            return code, p["c0"].copy(), p["c1"].copy(), p["cap"].copy()
        return code, p["c0"].copy(), p["c1"].copy(), z

    def inner(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.wiring_matrix.T

    def __call__(self, x):
        y = self.inner(x)
        p = self.params
        if self.kind == "constant":
            return np.broadcast_to(p["c"], y.shape).copy()
        if self.kind == "affine-clamped":
            return np.clip(p["c0"] + p["c1"] * y, 0.0, p["cap"])
        if self.kind == "reciprocal-offset-arctan":
            g = 0.5 * math.pi - np.arctan(y)
        elif self.kind == "reciprocal-offset-tanh":
            g = 1.0 + np.tanh(y)
        else:
            g = 0.5 * math.pi + np.arctan(y)
        return 1.0 / (p["c0"] + p["c1"] * g)

    def derivative(self, x):
        """Analytic ``f_i'(y_i)``; the Jacobian is this times the wiring matrix."""
        y = self.inner(x)
        p = self.params
        if self.kind == "constant":
            return np.zeros_like(y)
        if self.kind == "affine-clamped":
            inside = (p["c0"] + p["c1"] * y > 0) & (p["c0"] + p["c1"] * y < p["cap"])
            return np.where(inside, p["c1"], 0.0)
        if self.kind == "reciprocal-offset-arctan":
            g, dg = 0.5 * math.pi - np.arctan(y), -1.0 / (1.0 + y * y)
        elif self.kind == "reciprocal-offset-tanh":
            g, dg = 1.0 + np.tanh(y), 1.0 / np.cosh(y) ** 2
        else:
            g, dg = 0.5 * math.pi + np.arctan(y), 1.0 / (1.0 + y * y)
        den = p["c0"] + p["c1"] * g
        return -p["c1"] * dg / den**2


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """The tuple (d, m, A, sigma, h, L)."""

    A: np.ndarray
    sigma: np.ndarray
    h: OutputFunctionSpec
    L: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        sigma = _as_matrix(self.sigma, "sigma")
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got {A.shape}", field="A")
        if sigma.shape[0] != A.shape[0]:
            raise ConfigurationError(
                f"sigma must have {A.shape[0]} rows, got {sigma.shape[0]}", field="sigma")
        if self.h.d != A.shape[0]:
            raise ConfigurationError(
                f"output function has dimension {self.h.d}, A has {A.shape[0]}",
                field="h/wiring")
        L = float(self.L)
        if not (math.isfinite(L) and L >= 0):
            raise ConfigurationError("L must be a finite nonnegative number", field="L")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "L", L)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.sigma.shape[1]

    @property
    def N(self):
        return self.h.N

    def replace(self, **changes):
        kw = dict(A=self.A, sigma=self.sigma, h=self.h, L=self.L, name=self.name)
        kw.update(changes)
        return SystemSpec(**kw)


# ---------------------------------------------------------------------------
# linear algebra


def eigenvalues(A):
    A = np.asarray(A, dtype=float)
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigenvalueError(f"eigenvalue iteration failed for matrix {A.tolist()}: {exc}",
                              matrix=A.tolist()) from exc
    return ev[np.lexsort((ev.imag, ev.real))]


def spectral_abscissa(A):
    """Largest real part over the eigenvalues of ``A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("A has non-finite entries")
    return float(eigenvalues(A).real.max())


def check_cooperative(A):
    A = np.asarray(A, dtype=float)
    off = A[~np.eye(A.shape[0], dtype=bool)]
    return bool(np.all(off >= 0))


def fundamental_matrix(A, t):
    """``Phi(t) = exp(A t)`` for ``t >= 0``."""
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}")
    A = np.asarray(A, dtype=float)
    return expm(A * t)


def propagators(A, dt):
    """Return ``(Phi(dt), Psi(dt), Psi_tilde(dt))``.

    ``Psi = int_0^dt Phi(s) ds`` and ``Psi_tilde = Phi(dt)^{-1} Psi``, both from
    one augmented exponential so they are consistent to rounding.
    """
    A = np.asarray(A, dtype=float)
    return tuple(m.copy() for m in _propagators(A.tobytes(), A.shape[0], float(dt)))


@functools.lru_cache(maxsize=64)
def _propagators(key, d, dt):
    A = np.frombuffer(key).reshape(d, d)
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = A
    M[:d, d:] = np.eye(d)
    E = expm(M * dt)
    Phi, Psi = E[:d, :d], E[:d, d:]
    M[:d, :d] = -A
    Psit = expm(M * dt)[:d, d:]
    return Phi, Psi, Psit


def check_norm_bound(A, lam, t_max, n_points):
    """Check ``max_ij |Phi_ij(t)| <= exp(lam t)`` on a uniform grid of ``[0, t_max]``.

    Returns ``(ok, max_ratio)`` with ``ok`` meaning ``max_ratio <= 1 + 1e-9``.
    """
    if not lam < 0:
        raise ValidationError(f"lambda must be negative, got {lam}")
    if not t_max > 0 or n_points < 2:
        raise ValidationError("need t_max > 0 and n_points >= 2")
    A = np.asarray(A, dtype=float)
    ts = np.linspace(0.0, t_max, int(n_points))
    # Phi(t) exp(-lam t) = expm((A - lam I) t) stays O(1) where the factors over/underflow
    B = A - lam * np.eye(A.shape[0])
    # stepping by one exponential keeps the cost low; re-anchor to avoid drift
    step = expm(B * (ts[1] - ts[0]))
    E = np.eye(A.shape[0])
    worst = 0.0
    for k, t in enumerate(ts):
        if k % 100 == 0:
            E = expm(B * t)
        worst = max(worst, float(np.abs(E).max()))
        E = step @ E
    return worst <= 1.0 + 1e-9, worst


def row_sum_gain(A, L, t_max, n_points=2000):
    """``L d int_0^t_max max_i sum_j |Phi_ij(s)| ds``: a sharper, informational gain."""
    A = np.asarray(A, dtype=float)
    ts = np.linspace(0.0, t_max, int(n_points))
    rows = np.array([np.abs(expm(A * t)).sum(axis=1).max() for t in ts])
    return float(L * A.shape[0] * np.trapezoid(rows, ts))


# ---------------------------------------------------------------------------
# output function checks


def evaluate_h(spec, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("x must be finite")
    return spec.h(x)


def _sample_box(box, d, n_samples, seed):
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((int(n_samples), d))


def finite_difference_jacobian(h, X, step=1e-5):
    """Central-difference Jacobians of ``h`` at each row of ``X``; shape (n, d, d)."""
    n, d = X.shape
    J = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        J[:, :, j] = (h(X + e) - h(X - e)) / (2 * step)
    return J


def estimate_lipschitz(spec, box=(-10.0, 10.0), n_samples=4096, seed=0, validate=True):
    """Largest sampled ``|dh_i/dx_j|`` over ``box``.

    With ``validate`` the estimate is compared against the declared ``spec.L``
    and a :class:`LipschitzError` names the offending sample.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    X = _sample_box(box, spec.d, n_samples, seed)
    J = np.abs(finite_difference_jacobian(spec.h, X))
    flat = J.reshape(len(X), -1).max(axis=1)
    k = int(np.argmax(flat))
    est = float(flat[k])
    if validate and est > spec.L * (1 + 1e-6) + 1e-12:
        raise LipschitzError(
            f"sampled derivative {est:.6g} exceeds declared L={spec.L:.6g} "
            f"at x={X[k].tolist()}", point=X[k].tolist(), estimate=est, L=spec.L)
    return est


def check_monotonicity(spec, box=(-10.0, 10.0), n_samples=4096, seed=1):
    """Check the declared monotonicity against sampled Jacobian signs."""
    X = _sample_box(box, spec.d, n_samples, seed)
    J = finite_difference_jacobian(spec.h, X)
    tol = 1e-12
    if spec.h.monotonicity == ORDER_PRESERVING:
        bad = np.argwhere(J < -tol)
    else:
        bad = np.argwhere(J > tol)
    if len(bad):
        k, i, j = bad[0]
        raise MonotonicityError(
            f"declared {spec.h.monotonicity} but dh_{i}/dx_{j} = {J[k, i, j]:.3g} "
            f"at x={X[k].tolist()}", point=X[k].tolist())
    return True


# ---------------------------------------------------------------------------
# the report


@dataclass(frozen=True)
class SmallGainReport:
    lam: float
    spectral_abscissa: float
    eigenvalues: tuple
    cooperative: bool
    stable: bool
    normBoundMaxRatio: float
    normBoundOk: bool
    L: float
    d: int
    gain: float
    smallGainOk: bool
    rowSumGain: float
    reason: str = ""

    @property
    def hypotheses_ok(self):
        """Cooperative and stable A, the norm bound holds, and the gain is below 1."""
        return self.cooperative and self.normBoundOk and self.smallGainOk

    def to_dict(self):
        return {
            "lambda": self.lam,
            "spectral_abscissa": self.spectral_abscissa,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "cooperative": self.cooperative,
            "stable": self.stable,
            "normBoundMaxRatio": self.normBoundMaxRatio,
            "normBoundOk": self.normBoundOk,
            "L": self.L,
            "d": self.d,
            "gain": self.gain,
            "smallGainOk": self.smallGainOk,
            "rowSumGain": self.rowSumGain,
            "hypothesesOk": self.hypotheses_ok,
            "reason": self.reason,
        }


RELAXATIONS = (0.0, 0.01, 0.05, 0.1)


def small_gain_report(spec, t_max=None, n_points=2000):
    """Evaluate the structural conditions on A and the small-gain inequality for ``spec``.

    ``lam`` is the spectral abscissa unless the max-entry norm bound fails
    there, in which case it is relaxed to ``lam * (1 - delta)`` for the
    smallest ``delta`` in ``RELAXATIONS`` that passes.
    """
    A = spec.A
    d = spec.d
    ev = eigenvalues(A)
    abscissa = float(ev.real.max())
    cooperative = check_cooperative(A)
    stable = abscissa < 0
    if not stable:
        return SmallGainReport(
            lam=abscissa, spectral_abscissa=abscissa, eigenvalues=tuple(ev),
            cooperative=cooperative, stable=False, normBoundMaxRatio=math.inf,
            normBoundOk=False, L=spec.L, d=d, gain=math.inf, smallGainOk=False,
            rowSumGain=math.inf,
            reason=f"A is not stable: spectral abscissa {abscissa:.6g} >= 0")

    if t_max is None:
        t_max = 20.0 / abs(abscissa)
    lam, ok, ratio = abscissa, False, math.inf
    first_ratio = None
    for delta in RELAXATIONS:
        trial = abscissa * (1.0 - delta)
        ok, ratio = check_norm_bound(A, trial, t_max, n_points)
        if first_ratio is None:
            first_ratio = ratio
        if ok:
            lam = trial
            break
    if not ok:
        lam, ratio = abscissa, first_ratio

    gain = -spec.L * d * d / lam
    small = gain < 1.0
    reasons = []
    if not small:
        reasons.append(f"gain {gain:.6g} >= 1")
    if not cooperative:
        reasons.append("A is not cooperative")
    if not ok:
        reasons.append(f"norm bound fails (max ratio {ratio:.6g})")
    return SmallGainReport(
        lam=lam, spectral_abscissa=abscissa, eigenvalues=tuple(ev),
        cooperative=cooperative, stable=True, normBoundMaxRatio=ratio,
        normBoundOk=ok, L=spec.L, d=d, gain=gain, smallGainOk=small,
        rowSumGain=row_sum_gain(A, spec.L, t_max, n_points),
        reason="; ".join(reasons))


def deterministic_equilibrium(spec, tol=1e-14, max_iter=10_000):
    """Solve ``A x + h(x) = 0`` by iterating ``x <- -A^{-1} h(x)``."""
    from .errors import ConvergenceError

    Ainv = np.linalg.inv(spec.A)
    x = np.zeros(spec.d)
    diff = math.inf
    for _ in range(max_iter):
        new = -Ainv @ spec.h(x)
        diff = float(np.abs(new - x).max())
        x = new
        if diff <= tol:
            return x
    raise ConvergenceError(
        "deterministic equilibrium iteration does not contract; check L and A",
        last_step=diff)
