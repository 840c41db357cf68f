"""Shifted quasi-conditional expectation: closed forms, towering, domain, escape."""

import math

import numpy as np
import pytest

from wickgrid import (
    BrownianMotion,
    ChaosVector,
    FractionalBrownianMotion,
    ShiftContext,
    SymmetricTensor,
    TimeGrid,
    TruncationOperator,
    WickCombo,
    build_gram,
    contract_with_shift,
    domain_diagnostic,
    escape_direction,
    operator_norm,
    s_transform,
    shifted_qce,
    symmetrize_full,
    wick_exponential_chaos,
)
from wickgrid.errors import MartingaleCaseError, ShapeError


@pytest.fixture
def ctx():
    return build_gram(FractionalBrownianMotion(0.75), TimeGrid.uniform(8))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_chaos(rng, n, order):
    coeffs = [SymmetricTensor.scalar(float(rng.standard_normal()), n)]
    for k in range(1, order + 1):
        coeffs.append(SymmetricTensor.from_dense(
            symmetrize_full(rng.standard_normal((n,) * k))))
    return ChaosVector(coeffs, n)


def l2_diff(ctx, a, b):
    return math.sqrt(max(a.sub(b).l2_norm_sq(ctx), 0.0))


# ---------------------------------------------------------------------------
# shift context and contraction
# ---------------------------------------------------------------------------

def test_zero_shift_kernel(ctx):
    sc = ShiftContext(ctx, 0.5, None)
    assert np.array_equal(sc.c_r, np.zeros(8))


def test_shift_kernel_orthogonal_to_past(ctx, rng):
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    for _ in range(10):
        past = np.zeros(8)
        past[:sc.m] = rng.standard_normal(sc.m)
        assert ctx.inner(sc.c_r, past) == pytest.approx(0.0, abs=1e-10)


def test_contract_identity_and_zero(ctx, rng):
    f = SymmetricTensor.from_dense(symmetrize_full(rng.standard_normal((8, 8))))
    sc0 = ShiftContext(ctx, 0.5, None)
    assert np.allclose(contract_with_shift(sc0, f, 2).dense, f.dense)
    z = contract_with_shift(sc0, f, 1)
    assert np.allclose(z.dense, 0.0)
    with pytest.raises(ShapeError):
        contract_with_shift(sc0, f, 3)


def test_contract_rank_one(ctx, rng):
    a = rng.standard_normal(8)
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    k, i = 4, 1
    f = SymmetricTensor.from_powers(k, 8, [(1.0, a)])
    got = contract_with_shift(sc, f, i)
    scal = ctx.inner(a, sc.c_r) ** (k - i)
    assert got.is_powers
    w, v = got.powers[0]
    assert w == pytest.approx(scal, rel=1e-12)
    assert np.array_equal(v, a)
    # dense route agrees
    f3 = SymmetricTensor.from_powers(3, 8, [(1.0, a)])
    dense = contract_with_shift(sc, SymmetricTensor.from_dense(f3.to_dense()), 1)
    pows = contract_with_shift(sc, f3, 1)
    assert np.allclose(dense.dense, pows.to_dense(), rtol=1e-11, atol=1e-12)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def test_unshifted_first_chaos_is_truncation(ctx, rng):
    sc = ShiftContext(ctx, 0.5, None)
    v = rng.standard_normal(8)
    got = shifted_qce(sc, ChaosVector.first_chaos(v))
    want = ChaosVector.first_chaos(sc.op.forward(v))
    assert l2_diff(ctx, got, want) <= 1e-14


def test_shifted_process_value_closed_form(ctx, rng):
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    for t in ctx.grid.points[1:]:
        ind = ctx.indicator(t)
        got = shifted_qce(sc, ChaosVector.first_chaos(ind))
        # X_{t and r} - E[(X_t - X_{t and r}) I(c)]
        trunc = sc.op.forward(ind)
        want = ChaosVector.first_chaos(trunc, constant=-ctx.inner(ind - trunc, c))
        assert l2_diff(ctx, got, want) <= 1e-12


def test_shifted_wick_exponential_closed_form(ctx, rng):
    c = 0.6 * rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    K = 12
    for _ in range(6):
        h = rng.standard_normal(8)
        h /= ctx.norm(h)
        got = shifted_qce(sc, wick_exponential_chaos(ctx, h, K))
        factor = math.exp(ctx.inner(h, sc.c_r))
        want = wick_exponential_chaos(ctx, sc.op.forward(h), K).scaled(factor)
        for _ in range(4):
            p = rng.standard_normal(8)
            p /= ctx.norm(p)
            assert abs(s_transform(ctx, got, p)
                       - s_transform(ctx, want, p)) <= 1e-8


def test_s_composition_property(ctx, rng):
    # the defining relation (S out)(h) = (S in)((h+c)^r - c) holds exactly
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.75, c)
    xi = random_chaos(rng, 8, 3)
    out = shifted_qce(sc, xi)
    for _ in range(10):
        h = rng.standard_normal(8)
        assert s_transform(ctx, out, h) == pytest.approx(
            s_transform(ctx, xi, sc.shifted_direction(h)), rel=1e-11, abs=1e-11)


# ---------------------------------------------------------------------------
# towering and measurability
# ---------------------------------------------------------------------------

def test_towering(ctx, rng):
    c = rng.standard_normal(8)
    for r1, r2 in [(0.25, 0.5), (0.375, 0.875), (0.125, 1.0)]:
        sc1 = ShiftContext(ctx, r1, c)
        sc2 = ShiftContext(ctx, r2, c)
        for _ in range(5):
            xi = random_chaos(rng, 8, 3)
            once = shifted_qce(sc1, xi)
            twice = shifted_qce(sc1, shifted_qce(sc2, xi))
            assert l2_diff(ctx, once, twice) <= 1e-10


def test_measurable_fixed_point(ctx, rng):
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    m = sc.m
    coeffs = [SymmetricTensor.scalar(0.3, 8)]
    for k in range(1, 4):
        t = np.zeros((8,) * k)
        t[(slice(0, m),) * k] = rng.standard_normal((m,) * k)
        coeffs.append(SymmetricTensor.from_dense(symmetrize_full(t)))
    xi = ChaosVector(coeffs, 8)
    assert l2_diff(ctx, shifted_qce(sc, xi), xi) <= 1e-10


def test_fixed_points_are_measurable(ctx, rng):
    c = rng.standard_normal(8)
    sc = ShiftContext(ctx, 0.5, c)
    xi = random_chaos(rng, 8, 3)
    out = shifted_qce(sc, xi)
    # the output is measurable, i.e. itself a fixed point with support <= m
    assert out.support_bound() <= sc.m
    assert l2_diff(ctx, shifted_qce(sc, out), out) <= 1e-10


def test_martingale_bayes_formula(rng):
    # on an independent-increment grid the operator is conditional
    # expectation under the Wick-exponential change of measure
    ctx = build_gram(BrownianMotion(), TimeGrid.uniform(8))
    c = 0.8 * rng.standard_normal(8)
    r = 0.5
    sc = ShiftContext(ctx, r, c)
    K = 12
    for _ in range(5):
        f = rng.standard_normal(8)
        f /= ctx.norm(f)
        got = shifted_qce(sc, wick_exponential_chaos(ctx, f, K))
        c_fut = c.copy()
        c_fut[:sc.m] = 0.0
        bayes = (WickCombo.exponential(f)
                 .multiply_exponential(ctx, -c_fut)
                 .conditional_expectation_independent(ctx, r))
        for _ in range(4):
            p = rng.standard_normal(8)
            p /= ctx.norm(p)
            assert abs(s_transform(ctx, got, p) - bayes.s(ctx, p)) <= 1e-8


# ---------------------------------------------------------------------------
# domain diagnostics
# ---------------------------------------------------------------------------

def escape_generator(f, n):
    def gen(k):
        if k == 0:
            return SymmetricTensor.scalar(1.0, n)
        return SymmetricTensor.from_powers(
            k, n, [(1.0 / math.sqrt(math.factorial(k)), f)])
    return gen


def test_domain_lower_bound_divergent(ctx):
    sc = ShiftContext(ctx, 0.5, None)
    f = escape_direction(sc)
    rho = ctx.norm_sq(TruncationOperator(ctx, 0.5).forward(f))
    assert rho > 1.0
    diag = domain_diagnostic(sc, escape_generator(f, 8), 12)
    bounds = np.cumsum(rho ** np.arange(13))
    assert np.all(diag.partial_sums >= bounds * (1 - 1e-12))
    assert np.all(np.diff(diag.partial_sums) >= 0)


def test_domain_geometric_convergent(ctx):
    sc = ShiftContext(ctx, 0.5, None)
    f = 0.5 * ctx.indicator(0.25) / ctx.norm(ctx.indicator(0.25))
    rho = ctx.norm_sq(TruncationOperator(ctx, 0.5).forward(f))
    assert rho < 1.0
    diag = domain_diagnostic(sc, escape_generator(f, 8), 20)
    geo = np.cumsum(rho ** np.arange(21))
    assert np.all(diag.partial_sums <= geo + 1e-12)
    # bm: partial sums equal the squared norm of the truncated image
    bm = build_gram(BrownianMotion(), TimeGrid.uniform(8))
    sc_bm = ShiftContext(bm, 0.5, None)
    g = 0.7 * bm.indicator(0.25) / bm.norm(bm.indicator(0.25))
    diag_bm = domain_diagnostic(sc_bm, escape_generator(g, 8), 15)
    xi = ChaosVector([escape_generator(g, 8)(k) for k in range(16)], 8)
    out = shifted_qce(sc_bm, xi)
    assert diag_bm.partial_sums[-1] == pytest.approx(out.l2_norm_sq(bm), rel=1e-11)


def test_domain_overflow_guard(ctx):
    sc = ShiftContext(ctx, 0.5, None)
    f = escape_direction(sc)

    def gen(k):
        if k == 0:
            return SymmetricTensor.scalar(1.0, 8)
        return SymmetricTensor.from_powers(k, 8, [(math.sqrt(math.factorial(k)) * 4.0**k
                                                   / math.factorial(k), f)])

    diag = domain_diagnostic(sc, gen, 60)
    assert np.all(np.isfinite(diag.log_terms[1:]))


# ---------------------------------------------------------------------------
# escape direction
# ---------------------------------------------------------------------------

def test_escape_martingale_refusal():
    ctx = build_gram(BrownianMotion(), TimeGrid.uniform(8))
    with pytest.raises(MartingaleCaseError):
        escape_direction(ShiftContext(ctx, 0.5, None))


def test_escape_strict_inequalities(ctx):
    sc = ShiftContext(ctx, 0.5, None)
    f = escape_direction(sc)
    op = TruncationOperator(ctx, 0.5)
    lam = operator_norm(ctx, 0.5).opnorm ** 2
    assert ctx.norm(f) == pytest.approx(lam**-0.25, rel=1e-10)
    assert ctx.norm(f) < 1.0 < ctx.norm(op.forward(f))
    assert ctx.norm(op.forward(f)) == pytest.approx(lam**0.25, rel=1e-9)


def test_escape_sign_conventions(ctx, rng):
    # zero shift: deterministic tie-break, first nonzero coordinate positive
    f0 = escape_direction(ShiftContext(ctx, 0.5, None))
    nz = np.flatnonzero(np.abs(f0) > 1e-13)
    assert f0[nz[0]] > 0
    # nonzero shift: pairing with the kernel is nonnegative
    for _ in range(5):
        c = rng.standard_normal(8)
        sc = ShiftContext(ctx, 0.5, c)
        f = escape_direction(sc)
        assert ctx.inner(f, sc.c_r) >= -1e-12
