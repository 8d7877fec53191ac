import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessmfg.energy import EnergySpec
from hessmfg.explicit1d import ExplicitParams, explicit_pair
from hessmfg.grid import BoundaryFunction, Grid, GridFunction, hessian
from hessmfg.mfg import (
    MFGPair,
    TestFunction,
    assemble_density,
    fp_residual,
    hj_residual,
    standard_tests,
    verify_weak_solution,
)
from hessmfg.minimize import solve
from hessmfg.operators import abs_1d, power_1d, trace_d


def affine_pair(n=401, p=2):
    grid = Grid(1, n)
    u = GridFunction.from_callable(grid, BoundaryFunction(affine=(0.0, 1.0)))
    return assemble_density(u, EnergySpec(power_1d(p), p))


# --- TestFunction ---------------------------------------------------------------

def test_bump_support_and_hessian():
    t = TestFunction((0.5,), 0.2)
    x = np.linspace(0, 1, 1001)
    out = np.abs(x - 0.5) >= 0.2
    assert np.all(t.value(x)[out] == 0)
    assert np.all(t.hessian(x)[out] == 0)
    # analytic second derivative vs central differences of the profile
    s = 1e-4
    xs = np.linspace(0.35, 0.65, 31)
    fd = (t.value(xs + s) - 2 * t.value(xs) + t.value(xs - s)) / s ** 2
    assert np.allclose(t.hessian(xs)[:, 0], fd, rtol=1e-5, atol=1e-9)


def test_bump_hessian_2d_finite_differences():
    t = TestFunction((0.1, -0.2), 0.5)
    rng = np.random.default_rng(0)
    P = rng.uniform(-0.2, 0.2, size=(20, 2)) + np.array([0.1, -0.2])
    s = 1e-4
    for x, y in P:
        fxx = (t.value(x + s, y) - 2 * t.value(x, y) + t.value(x - s, y)) / s ** 2
        fyy = (t.value(x, y + s) - 2 * t.value(x, y) + t.value(x, y - s)) / s ** 2
        fxy = (t.value(x + s, y + s) - t.value(x + s, y - s) - t.value(x - s, y + s) + t.value(x - s, y - s)) / (4 * s * s)
        H = t.hessian(x, y)
        assert np.allclose(H, [fxx, fxy, fyy], rtol=1e-5, atol=1e-8)


def test_bump_validation():
    with pytest.raises(ValueError):
        TestFunction((0.5,), 0.0)
    with pytest.raises(ValueError):
        TestFunction((0.5,), 0.1, power=2)


@pytest.mark.parametrize("grid", [Grid(1, 101), Grid(2, 33)])
def test_standard_family(grid):
    tests = standard_tests(grid, seed=3)
    assert len(tests) == 9
    assert all(t.fits(grid) for t in tests)
    radii = sorted({round(t.radius, 12) for t in tests})
    assert len(radii) == 3
    again = standard_tests(grid, seed=3)
    assert [t.to_dict() for t in tests] == [t.to_dict() for t in again]


# --- density assembly -----------------------------------------------------------

def test_affine_density_is_one():
    pair = affine_pair(201)
    assert np.all(pair.m == 1.0)
    assert pair.coupling == "power" and pair.p == 2


def test_power3_density_value():
    grid = Grid(1, 21)
    u = GridFunction.from_callable(grid, lambda x: 0.5 * x ** 2)
    pair = assemble_density(u, EnergySpec(power_1d(3), 3))
    assert np.allclose(pair.m, 2 ** (2 / 3), rtol=1e-10)
    assert 2 ** (2 / 3) == pytest.approx(1.5874, abs=1e-4)


def test_logarithmic_zero_data():
    grid = Grid(2, 9)
    pair = assemble_density(GridFunction(grid, np.zeros(grid.shape)), EnergySpec(trace_d(2), kind="exponential"))
    assert pair.coupling == "logarithmic"
    assert np.all(pair.m == 1.0)
    assert hj_residual(pair, EnergySpec(trace_d(2), kind="exponential")) == 0.0


def test_negative_F_rejected():
    grid = Grid(1, 21)
    u = GridFunction.from_callable(grid, lambda x: -0.5 * x ** 2)
    with pytest.raises(ValueError, match="F >= 0"):
        assemble_density(u, EnergySpec(trace_d(1), 2))


def test_pair_density_readonly_and_broadcast():
    pair = affine_pair(21)
    assert pair.m.shape == pair.grid.interior_shape
    with pytest.raises(ValueError):
        pair.m[0] = 2.0
    with pytest.raises(ValueError):
        MFGPair(pair.u, 1.0, "quadratic")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([2, 3, 4]))
def test_coupling_roundtrip(seed, p):
    rng = np.random.default_rng(seed)
    grid = Grid(1, 31)
    u = GridFunction(grid, 0.5 * grid.axis(0) ** 2 + 1e-3 * rng.normal(size=31))
    spec = EnergySpec(abs_1d(), p)
    pair = assemble_density(u, spec)
    F = np.abs(hessian(u).xx)
    back = pair.m ** (1.0 / (p - 1))
    assert np.allclose(back, F, rtol=1e-14, atol=1e-12 * np.max(F))
    assert hj_residual(pair, spec) <= 1e-12 * np.max(F)


# --- residuals ------------------------------------------------------------------

def test_hj_detects_perturbation():
    pair = affine_pair(101)
    spec = EnergySpec(power_1d(2), 2)
    assert hj_residual(pair, spec) == 0.0
    assert hj_residual(pair.with_density(pair.m + 0.1), spec) == pytest.approx(0.1)


def test_explicit_family_hj():
    prm = ExplicitParams(1.0, 0.5, 0.0, 0.0, 2)
    pair = explicit_pair(prm, Grid(1, 401))
    assert hj_residual(pair, EnergySpec(power_1d(2), 2)) <= 1e-3


def test_fp_affine():
    pair = affine_pair(401)
    assert fp_residual(pair, EnergySpec(power_1d(2), 2)) <= 1e-4


def test_fp_explicit_random_tests_and_injection():
    grid = Grid(1, 401)
    prm = ExplicitParams(1.0, 0.5, 0.0, 0.0, 2)
    pair = explicit_pair(prm, grid)
    spec = EnergySpec(power_1d(2), 2)
    rng = np.random.default_rng(7)
    lo, hi = grid.free_box[0]
    tests = []
    for _ in range(5):
        r = rng.uniform(0.05, 0.4)
        tests.append(TestFunction((rng.uniform(lo + r, hi - r),), r))
    assert fp_residual(pair, spec, tests) <= 1e-3
    (x,) = grid.interior_mesh()
    assert fp_residual(pair.with_density(pair.m * (1 + x ** 2)), spec) >= 1e-2


def test_fp_rejects_tests_on_clamp_layers():
    pair = affine_pair(101)
    with pytest.raises(ValueError, match="clamp"):
        fp_residual(pair, EnergySpec(power_1d(2), 2), [TestFunction((0.05,), 0.04)])


def test_fp_per_test_list():
    pair = affine_pair(101)
    res = fp_residual(pair, EnergySpec(power_1d(2), 2), per_test=True)
    assert len(res) == 9 and max(res) == fp_residual(pair, EnergySpec(power_1d(2), 2))


# --- verification ---------------------------------------------------------------

def test_end_to_end_affine_passes():
    spec = EnergySpec(power_1d(2), 2)
    res = solve(spec, BoundaryFunction(affine=(1.0, -2.0)), Grid(1, 201))
    rep = verify_weak_solution(assemble_density(res.u, spec), spec, 1e-6, 1e-4)
    assert rep.passed and rep.flags == (True, True, True)
    assert rep.m_min == 1.0
    d = json.loads(rep.to_json())
    for key in ("hj_residual_sup", "fp_residual_max", "m_min", "m_L1", "tol_hj", "tol_fp", "passed"):
        assert key in d


def test_negative_density_flags_condition_one():
    pair = affine_pair(101)
    spec = EnergySpec(power_1d(2), 2)
    rep = verify_weak_solution(pair.with_density(-1.0), spec)
    assert not rep.nonneg_pass
    assert rep.m_min == -1.0


def test_random_u_assembled_is_not_weak_solution():
    grid = Grid(1, 201)
    spec = EnergySpec(power_1d(2), 2)
    x = grid.axis(0)
    u = GridFunction(grid, x ** 4 + 0.3 * np.sin(5 * x))
    rep = verify_weak_solution(assemble_density(u, spec), spec)
    assert rep.hj_pass and not rep.fp_pass
    assert rep.passed is False


def test_logarithmic_requires_positive_m():
    grid = Grid(1, 21)
    spec = EnergySpec(trace_d(1), kind="exponential")
    pair = assemble_density(GridFunction(grid, np.zeros(21)), spec)
    rep = verify_weak_solution(pair.with_density(0.0), spec)
    assert not rep.nonneg_pass and not rep.hj_pass


def test_report_flags_consistent_with_residuals():
    pair = affine_pair(101)
    spec = EnergySpec(power_1d(2), 2)
    rep = verify_weak_solution(pair.with_density(pair.m + 1e-3), spec, tol_hj=1e-2, tol_fp=1e-4)
    assert rep.hj_pass == (rep.hj_residual_sup <= rep.tol_hj)
    assert rep.fp_pass == (rep.fp_residual_max <= rep.tol_fp)
    assert rep.fp_residual_max == max(rep.fp_residuals)
