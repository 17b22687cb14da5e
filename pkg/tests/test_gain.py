import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import constant_spec
from sgsde.errors import ConvergenceError, SmallGainError, ValidationError
from sgsde.gain import (InputProcess, apply_K, apply_gain, contraction_ratio, envelope_inputs,
                        even_iterates, iterate_fixed_point, iteration_bound, sandwich,
                        verify_equilibrium)
from sgsde.model import small_gain_report
from sgsde.noise import sample_path, stochastic_convolution

A3 = np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 0.0], [0.0, 1.0, -1.0]])


def random_input(path, bound, rng, kind):
    n = len(path.times())
    d = len(bound)
    if kind == "iid":
        v = rng.random((n, d))
    elif kind == "constant":
        v = np.tile(rng.random(d), (n, 1))
    else:
        block = rng.integers(20, 400)
        v = np.repeat(rng.random((n // block + 1, d)), block, axis=0)[:n]
    return InputProcess(path.times(), v * bound, bound)


# K


def test_K_zero():
    spec = constant_spec(A3, 0.0)
    p = sample_path(1, 0.01, 30, 5, 3)
    X = apply_K(spec, p, InputProcess.constant(p, 0.0, np.ones(3)), warmup=20)
    assert np.all(X.states == 0.0) and X.times[0] == pytest.approx(-10.0)


def test_K_constant_is_linear_solve():
    c = np.array([0.1, 0.2, 0.3])
    spec = constant_spec(A3, 0.0)
    p = sample_path(1, 0.01, 60, 5, 3)
    X = apply_K(spec, p, InputProcess.constant(p, c, np.ones(3)))
    assert np.abs(X.states + np.linalg.solve(A3, c)).max() <= 1e-6


def test_K_zero_input_is_convolution():
    sigma = 0.2 * np.eye(3)
    spec = constant_spec(A3, 0.0, sigma)
    p = sample_path(2, 0.01, 60, 5, 3)
    X = apply_K(spec, p, InputProcess.constant(p, 0.0, np.ones(3)))
    for t in (0.0, 2.5, 5.0):
        assert np.abs(X.at(t) - stochastic_convolution(A3, sigma, p, t)).max() <= 1e-12


def test_K_grid_mismatch(ex51):
    p = sample_path(1, 0.01, 60, 5, 3)
    q = sample_path(1, 0.01, 50, 5, 3)
    with pytest.raises(ValidationError):
        apply_K(ex51, p, InputProcess.constant(q, 0.0, ex51.N))


def test_input_process_shape_check():
    with pytest.raises(ValidationError):
        InputProcess(np.arange(3.0), np.zeros((4, 2)), np.ones(2))


# gain operator


def test_gain_of_constant_h():
    spec = constant_spec(A3, [0.3, 0.2, 0.1], 0.2 * np.eye(3))
    p = sample_path(1, 0.01, 10, 1, 3)
    out = apply_gain(spec, p, random_input(p, np.ones(3), np.random.default_rng(0), "iid"))
    assert np.all(out.values == [0.3, 0.2, 0.1])


def test_gain_range_ex52(ex52):
    p = sample_path(1, 0.01, 30, 5, 3)
    out = apply_gain(ex52, p, InputProcess.constant(p, 0.0, ex52.N))
    assert np.all(out.values >= 1 / 6) and np.all(out.values <= 1 / 4)
    assert out.in_range()


def test_gain_order_preserving(ex51):
    p = sample_path(4, 0.01, 60, 5, 3)
    rng = np.random.default_rng(1)
    for kind in ("iid", "constant", "blocks"):
        u = random_input(p, ex51.N, rng, kind)
        v = InputProcess(u.times, np.minimum(u.values + rng.random(u.values.shape) * ex51.N,
                                             ex51.N), ex51.N)
        assert np.all(apply_gain(ex51, p, u).values <= apply_gain(ex51, p, v).values)


# contraction


def test_ratio_undefined_for_identical_inputs(ex52):
    p = sample_path(1, 0.01, 30, 5, 3)
    u = InputProcess.constant(p, 0.1, ex52.N)
    with pytest.raises(ValidationError):
        contraction_ratio(ex52, p, u, u)


def test_ratio_zero_for_constant_h():
    spec = constant_spec(A3, 0.2, 0.1 * np.eye(3))
    p = sample_path(1, 0.01, 60, 5, 3)
    rng = np.random.default_rng(0)
    u1, u2 = (random_input(p, np.ones(3), rng, "iid") for _ in range(2))
    assert contraction_ratio(spec, p, u1, u2) == 0.0


def test_ratio_ex52_hundred_pairs(ex52):
    p = sample_path(2, 0.01, 40, 0, 3)
    rng = np.random.default_rng(5)
    kinds = ("iid", "constant", "blocks")
    ratios = [contraction_ratio(ex52, p, random_input(p, ex52.N, rng, kinds[i % 3]),
                                random_input(p, ex52.N, rng, kinds[i % 3]))
              for i in range(100)]
    assert max(ratios) <= 9 / 16


@pytest.mark.parametrize("name", ["5.1", "5.2", "5.3"])
@given(seed=st.integers(0, 2**32), kind=st.sampled_from(["iid", "constant", "blocks"]))
def test_ratio_bounded_by_gain(presets, name, seed, kind):
    spec = presets[name].spec
    gain = small_gain_report(spec).gain
    p = sample_path(seed % 1000, 0.02, 40, 0, 3)
    rng = np.random.default_rng(seed)
    u1, u2 = random_input(p, spec.N, rng, kind), random_input(p, spec.N, rng, kind)
    assert contraction_ratio(spec, p, u1, u2, warmup=10) <= gain + 1e-6


# fixed point


def test_constant_h_one_iteration():
    c = np.array([0.3, 0.2, 0.1])
    sigma = 0.2 * np.eye(3)
    spec = constant_spec(A3, c, sigma)
    p = sample_path(3, 0.01, 60, 5, 3)
    res = iterate_fixed_point(spec, p)
    assert res.iterations == 1
    assert np.all(res.u_star.values == c)
    ou = stochastic_convolution(A3, sigma, p, 0.0)
    assert np.abs(res.equilibrium.at(0.0) - (-np.linalg.solve(A3, c) + ou)).max() <= 1e-6


def test_iteration_count_ex52(ex52):
    p = sample_path(3, 0.01, 40, 5, 3)
    res = iterate_fixed_point(ex52, p, InputProcess.constant(p, 0.0, ex52.N), tol=1e-10)
    assert res.iterations <= math.ceil(math.log10(1e-10) / math.log10(9 / 16)) + 2
    assert res.iterations <= res.meta["iteration_bound"]
    assert res.residuals[-1] <= 1e-10
    r = np.array(res.residuals)
    assert np.all(r[1:] < r[:-1])
    assert np.all(r[1:] / r[:-1] <= 9 / 16 + 0.05)
    assert res.rate_estimate <= 9 / 16 + 0.05


@pytest.mark.parametrize("name", ["5.1", "5.2", "5.3"])
def test_fixed_point_unique(presets, name):
    spec = presets[name].spec
    p = sample_path(3, 0.01, 60, 5, 3)
    tol = 1e-10
    a = iterate_fixed_point(spec, p, InputProcess.constant(p, 0.0, spec.N), tol=tol)
    b = iterate_fixed_point(spec, p, InputProcess.constant(p, spec.N, spec.N), tol=tol)
    k = round(a.warmup / p.dt)
    assert np.abs(a.u_star.values[k:] - b.u_star.values[k:]).max() <= 2 * tol


def test_refuses_when_gain_too_large(ex52):
    p = sample_path(3, 0.01, 30, 5, 3)
    with pytest.raises(SmallGainError) as info:
        iterate_fixed_point(ex52.replace(L=0.2), p)
    assert info.value.details["gain"] >= 1


def test_nonconvergence_reports_history(ex53):
    p = sample_path(3, 0.01, 60, 5, 3)
    with pytest.raises(ConvergenceError) as info:
        iterate_fixed_point(ex53, p, tol=1e-15, max_iter=2)
    assert len(info.value.details["residuals"]) == 2


def test_iteration_bound_formula():
    assert iteration_bound(0.5, 1e-3, 1.0) == math.ceil(math.log(1e-3) / math.log(0.5)) + 2


def test_warmup_must_fit(ex51):
    p = sample_path(3, 0.01, 10, 0, 3)
    with pytest.raises(ValidationError):
        iterate_fixed_point(ex51, p)


def test_export(tmp_path, ex52):
    p = sample_path(3, 0.01, 30, 1, 3)
    res = iterate_fixed_point(ex52, p)
    res.export(str(tmp_path))
    report = json.loads((tmp_path / "fixed_point.json").read_text())
    assert report["iterations"] == res.iterations
    assert (tmp_path / "u_star.csv").read_text().startswith("t,u_1,u_2,u_3\n")
    assert (tmp_path / "equilibrium.csv").read_text().startswith("t,x_1,x_2,x_3\n")


# equilibrium


def test_verify_constant_deterministic():
    c = np.array([0.3, 0.2, 0.1])
    spec = constant_spec(A3, c)
    p = sample_path(3, 0.01, 120, 10, 3)
    res = iterate_fixed_point(spec, p)
    dev, gap = verify_equilibrium(spec, p, res, 0.0, 10.0)
    assert dev <= 1e-8 and gap <= 1e-8


def test_verify_same_scheme_is_tolerance_level(ex52):
    p = sample_path(7, 1e-3, 40, 10, 3)
    res = iterate_fixed_point(ex52, p, tol=1e-12)
    dev, _ = verify_equilibrium(ex52, p, res, 0.0, 10.0, scheme="expeuler")
    assert dev <= 1e-8


def test_pullback_gap_ex53(ex53):
    p = sample_path(7, 1e-3, 80, 1, 3)
    res = iterate_fixed_point(ex53, p)
    xs = [np.zeros(3)] + [s * e for s in (5.0, -5.0) for e in np.eye(3)]
    _, gap = verify_equilibrium(ex53, p, res, 0.0, 1.0, initial_conditions=xs)
    assert gap <= 1e-2


def test_equilibrium_law_is_shift_invariant(ex52):
    x0, x5 = [], []
    rep = small_gain_report(ex52)
    for seed in range(1000):
        p = sample_path(seed, 0.02, 19, 5, 3)
        eq = iterate_fixed_point(ex52, p, tol=1e-8, report=rep).equilibrium
        x0.append(eq.at(0.0))
        x5.append(eq.at(5.0))
    x0, x5 = np.array(x0), np.array(x5)
    se = np.sqrt(x0.var(axis=0) / len(x0) + x5.var(axis=0) / len(x5))
    assert np.all(np.abs(x0.mean(axis=0) - x5.mean(axis=0)) <= 3 * se)


# envelopes and the sandwich


@pytest.mark.parametrize("name", ["5.1", "5.2"])
def test_even_iterates_nest(presets, name):
    spec = presets[name].spec
    p = sample_path(7, 0.02, 100, 0, 3)
    res = iterate_fixed_point(spec, p, tol=1e-13)
    a, b = envelope_inputs(spec, p, np.zeros(3), 10.0, 40.0, t_from=-55.0)
    assert np.all(a.values <= b.values)
    k = round(res.warmup / p.dt)
    ua, ub = even_iterates(spec, p, a, 5), even_iterates(spec, p, b, 5)
    for lo, hi in zip(ua, ub):
        assert np.all(lo.values[k:] <= res.u_star.values[k:] + 1e-8)
        assert np.all(res.u_star.values[k:] <= hi.values[k:] + 1e-8)


def test_sandwich_process_envelopes(ex51):
    p = sample_path(7, 0.02, 90, 0, 3)
    for x in (np.zeros(3), 5 * np.ones(3), -5 * np.eye(3)[1]):
        lo, mid, hi = sandwich(ex51, p, x, 10.0, 30.0, horizon=35.0, t_from=-50.0)
        assert np.all(lo <= mid + 1e-2) and np.all(mid <= hi + 1e-2)


def test_sandwich_horizon_must_cover_T(ex51):
    p = sample_path(7, 0.02, 90, 0, 3)
    with pytest.raises(ValidationError):
        sandwich(ex51, p, np.zeros(3), 10.0, 30.0, horizon=30.0)
