import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hessmfg.operators import (
    DimensionError,
    DomainError,
    OperatorSpec,
    SymMatrix,
    available_operators,
    check_A1,
    check_A3,
    check_convexity,
    eval_derivative,
    eval_operator,
    frobenius,
    get_operator,
    sample_psd,
    abs_1d,
    coercive_trace_2d,
    osc_1d,
    power_1d,
    trace_d,
)

ALL_OPS = [trace_d(1), trace_d(2), power_1d(2), power_1d(3), power_1d(4), osc_1d(), abs_1d(),
           coercive_trace_2d()]


def ids(ops):
    return [f"{op.name}-{op.params}" for op in ops]


# --- SymMatrix ---------------------------------------------------------------

def test_symmatrix_roundtrip_and_norm():
    M = SymMatrix.from_array([[1.0, 2.0], [2.0, 3.0]])
    assert M.packed.tolist() == [1.0, 2.0, 3.0]
    assert np.array_equal(M.full(), M.full().T)
    assert M.norm() == pytest.approx(math.sqrt(1 + 4 + 4 + 9))
    assert SymMatrix.identity(2).norm() == pytest.approx(math.sqrt(2))


def test_symmatrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        SymMatrix.from_array([[1.0, 2.0], [0.0, 3.0]])


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_frobenius_zero_iff_zero(entries):
    n = float(frobenius(np.array(entries)))
    assert n >= 0
    assert (n == 0) == all(e == 0 for e in entries)


# --- evaluation examples -----------------------------------------------------

def test_trace_of_identity():
    assert eval_operator(trace_d(2), np.eye(2)) == 2.0


def test_power_values():
    assert eval_operator(power_1d(2), 0.0) == 1.0
    assert eval_operator(power_1d(3), 2.0) == pytest.approx(9 ** (1 / 3), rel=1e-14)
    assert eval_operator(power_1d(3), 2.0) == pytest.approx(2.0800838, abs=1e-7)


def test_derivative_examples():
    D = eval_derivative(trace_d(2), [[3.0, -1.0], [-1.0, 0.5]])
    assert np.array_equal(D.full(), np.eye(2))
    assert eval_derivative(power_1d(2), 1.0).packed[0] == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert eval_derivative(abs_1d(), 0.0).packed[0] == 0.0


def test_osc_value_and_zero():
    op = osc_1d()
    assert op.f_zero == 0.0
    z = 2.0
    assert eval_operator(op, z) == pytest.approx(z * (1.5 + 0.5 * math.cos(z)))


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        eval_operator(trace_d(1), np.eye(2))


def test_odd_power_domain():
    op = power_1d(3)
    with pytest.raises(DomainError):
        eval_operator(op, -1.0)
    with pytest.raises(DomainError) as exc:
        op.value(np.array([[0.0], [0.5], [-2.0]]))
    assert exc.value.index == (2,)
    # even p has no restriction
    assert np.isfinite(eval_operator(power_1d(4), -3.0))


def test_f_zero_is_reported_not_enforced():
    assert power_1d(2).f_zero == 1.0
    rep = check_A1(power_1d(2))
    assert rep.f_zero == 1.0


def test_catalog_lookup():
    names = available_operators()
    for name in ("trace_d", "power_1d", "osc_1d", "abs_1d", "coercive_trace_2d"):
        assert name in names
    op = get_operator("power_1d", p=3)
    assert op.params["p"] == 3
    with pytest.raises(KeyError):
        get_operator("pucci")


def test_invalid_ellipticity_constants():
    with pytest.raises(ValueError):
        OperatorSpec("bad", 1, lambda H: H[..., 0], lambda H: np.ones_like(H), lam=2.0, Lam=1.0,
                     is_convex=True, satisfies_A3=False, is_smooth=True, region=("interval", 0, 1))


# --- derivatives vs finite differences ---------------------------------------

def _sample_away_from_singular(op, rng, n):
    if op.dim == 1:
        z = rng.uniform(-6, 6, size=(n, 1))
        if op.params.get("p", 2) % 2 == 1 and op.name == "power_1d":
            z = rng.uniform(-0.9, 6, size=(n, 1))
        return z[np.abs(z[:, 0]) > 0.05]
    M = rng.uniform(-3, 3, size=(n, 3))
    tr = M[:, 0] + M[:, 2]
    return M[(np.abs(tr) > 0.05) & (frobenius(M) > 0.05)]


@pytest.mark.parametrize("op", ALL_OPS, ids=ids(ALL_OPS))
def test_derivative_matches_finite_differences(op):
    rng = np.random.default_rng(3)
    H = _sample_away_from_singular(op, rng, 200)
    G = op.grad(H)
    s = 1e-6
    for j in range(op.k):
        e = np.zeros(op.k)
        e[j] = s
        fd = (op.value(H + e) - op.value(H - e)) / (2 * s)
        # packed off-diagonal entry stands for both m12 and m21
        exact = G[:, j] * (2.0 if (op.dim == 2 and j == 1) else 1.0)
        err = np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0)
        assert np.max(err) <= 1e-6


# power_1d and osc_1d claim their constants only on a sub-interval
GLOBAL_OPS = [op for op in ALL_OPS if op.name not in ("power_1d", "osc_1d")]


@pytest.mark.parametrize("op", GLOBAL_OPS, ids=ids(GLOBAL_OPS))
def test_derivative_bounded_by_ellipticity(op):
    rng = np.random.default_rng(4)
    H = _sample_away_from_singular(op, rng, 500)
    G = op.grad(H)
    assert np.max(frobenius(G)) <= math.sqrt(op.dim) * op.Lam + 1e-12


# --- assumption checkers -----------------------------------------------------

@pytest.mark.parametrize("op", ALL_OPS, ids=ids(ALL_OPS))
def test_A1_passes_on_declared_region(op):
    rep = check_A1(op, 1000)
    assert rep.passed, rep
    assert rep.n_samples == 1000
    assert rep.passed == (rep.worst_violation <= rep.tol)


def test_A1_trace_2d():
    assert check_A1(trace_d(2), 1000).passed


def test_A1_power_on_full_window_fails():
    # F' < 0 for z < 0, so monotonicity along PSD directions breaks there
    rep = check_A1(power_1d(2), 1000, region=("interval", -10.0, 10.0))
    assert not rep.passed


def test_A1_negated_trace_fails():
    base = trace_d(2)
    neg = OperatorSpec("neg_trace", 2, lambda H: -base.value(H), lambda H: -base.grad(H), lam=1.0,
                       Lam=1.0, is_convex=True, satisfies_A3=False, is_smooth=True, region=("box", 10.0))
    assert not check_A1(neg).passed


@pytest.mark.parametrize("op", ALL_OPS, ids=ids(ALL_OPS))
def test_A3_matches_flag(op):
    assert check_A3(op, 1000).passed == op.satisfies_A3


def test_A3_examples():
    assert check_A3(osc_1d()).passed
    assert not check_A3(trace_d(2)).passed
    rep = check_A3(abs_1d())
    assert rep.passed and rep.worst_violation == 0.0


def test_convexity_examples():
    assert check_convexity(trace_d(2)).passed
    assert not check_convexity(osc_1d()).passed
    assert check_convexity(power_1d(2), region=("interval", 0.0, 10.0)).passed
    assert check_convexity(abs_1d()).passed


@pytest.mark.parametrize("op", ALL_OPS, ids=ids(ALL_OPS))
def test_degenerate_ellipticity_monotone(op):
    rng = np.random.default_rng(5)
    lo, hi = (op.region[1], op.region[2]) if op.region[0] == "interval" else (None, None)
    n = 500
    if op.dim == 1:
        M = rng.uniform(lo, hi, size=(n, 1))
    elif op.region[0] == "psd":
        M = op.region[1] * sample_psd(rng, 2, n)
    else:
        M = rng.uniform(-op.region[1], op.region[1], size=(n, 3))
    N = sample_psd(rng, op.dim, n)
    dF = op.value(M + N) - op.value(M)
    if op.dim == 1 and hi is not None:
        keep = (M + N)[:, 0] <= hi
        dF, N = dF[keep], N[keep]
    assert np.all(dF >= 0)
    assert np.all(dF >= op.lam * frobenius(N) / 2)
