import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjmmlab.curves import (
    CovarianceSpec,
    CurveGrid,
    ForwardCurve,
    antiderivative,
    apply_generator,
    inner_beta,
    norm_beta,
    read_curve_csv,
    shift,
    write_curve_csv,
)
from hjmmlab.errors import DomainError, StructuralError

finite = st.floats(-10, 10, allow_nan=False)


def test_norm_of_constant_is_absolute_value(grid):
    assert norm_beta(ForwardCurve.flat(grid, -0.7, 0.1)) == pytest.approx(0.7, abs=1e-15)


def test_norm_of_zero(grid):
    assert norm_beta(ForwardCurve.flat(grid, 0.0, 0.1)) == 0.0


def test_norm_matches_closed_form_integral():
    # h(z) = 1 - exp(-z), beta = 1: ||h||^2 = int exp(-2z) exp(z) dz = 1 on [0, inf)
    errs = []
    for step in (0.02, 0.01, 0.005):
        g = CurveGrid.uniform(40.0, step)
        h = ForwardCurve(g, -np.expm1(-g.points), 1.0)
        errs.append(abs(norm_beta(h) - 1.0))
    assert errs[-1] < 1e-5
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_norm_is_exact_for_piecewise_linear(grid):
    # h(z) = z on [0, 5]: ||h||^2 = int_0^5 exp(beta z) dz
    h = ForwardCurve(grid, grid.points.copy(), 0.1)
    assert norm_beta(h) ** 2 == pytest.approx(np.expm1(0.5) / 0.1, rel=1e-12)


@given(c=finite, d=finite)
def test_inner_product_of_constants(c, d):
    g = CurveGrid.uniform(2.0, 0.1)
    assert inner_beta(ForwardCurve.flat(g, c, 0.2), ForwardCurve.flat(g, d, 0.2)) == pytest.approx(
        c * d, abs=1e-12
    )


@given(vals=st.lists(finite, min_size=21, max_size=21))
def test_inner_product_with_self_is_squared_norm(vals):
    g = CurveGrid.uniform(2.0, 0.1)
    h = ForwardCurve(g, np.array(vals), 0.3)
    assert inner_beta(h, h) == pytest.approx(norm_beta(h) ** 2, rel=1e-12, abs=1e-12)
    assert inner_beta(h, ForwardCurve.flat(g, 0.0, 0.3)) == 0.0


@given(
    a=st.lists(finite, min_size=21, max_size=21),
    b=st.lists(finite, min_size=21, max_size=21),
)
def test_triangle_and_cauchy_schwarz(a, b):
    g = CurveGrid.uniform(2.0, 0.1)
    h, k = ForwardCurve(g, np.array(a), 0.3), ForwardCurve(g, np.array(b), 0.3)
    assert norm_beta(h + k) <= norm_beta(h) + norm_beta(k) + 1e-9
    assert abs(inner_beta(h, k)) <= norm_beta(h) * norm_beta(k) + 1e-9


def test_inner_product_rejects_mismatched_grids():
    h = ForwardCurve.flat(CurveGrid.uniform(1.0, 0.1), 1.0, 0.1)
    k = ForwardCurve.flat(CurveGrid.uniform(1.0, 0.05), 1.0, 0.1)
    with pytest.raises(StructuralError):
        inner_beta(h, k)
    with pytest.raises(StructuralError):
        inner_beta(h, ForwardCurve.flat(h.grid, 1.0, 0.2))


def test_shift_identity_and_domain(exp_curve):
    assert shift(exp_curve, 0.0) is exp_curve
    with pytest.raises(DomainError):
        shift(exp_curve, -0.1)


@given(s=st.integers(0, 600), t=st.integers(0, 600))
def test_shift_semigroup_is_exact(s, t):
    g = CurveGrid.uniform(5.0, 0.01)
    h = ForwardCurve(g, np.exp(-g.points), 0.1)
    lhs = shift(shift(h, s * 0.01), t * 0.01)
    rhs = shift(h, (s + t) * 0.01)
    assert np.array_equal(lhs.values, rhs.values)


def test_shift_matches_analytic_value(exp_curve):
    assert shift(exp_curve, 1.0)(0.0) == pytest.approx(np.exp(-1.0), abs=1e-12)
    # off-grid shift falls back to interpolation
    assert shift(exp_curve, 0.555)(0.0) == pytest.approx(np.exp(-0.555), abs=2e-5)


def test_shift_fills_tail_flat(exp_curve):
    out = shift(exp_curve, 1.0).values
    assert np.all(out[-100:] == exp_curve.values[-1])


def test_generator_oracles(grid):
    c = apply_generator(ForwardCurve.flat(grid, 2.5, 0.1))
    assert np.all(c.values == 0.0)
    lin = apply_generator(ForwardCurve(grid, grid.points.copy(), 0.1))
    assert np.allclose(lin.values, 1.0, atol=1e-10)
    errs = []
    for step in (0.02, 0.01):
        g = CurveGrid.uniform(5.0, step)
        d = apply_generator(ForwardCurve(g, np.exp(-g.points), 0.1))
        errs.append(np.max(np.abs(d.values + np.exp(-g.points))))
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 3.5


def test_generator_needs_three_points():
    with pytest.raises(StructuralError):
        apply_generator(ForwardCurve.flat(CurveGrid.uniform(0.1, 0.1), 1.0, 0.1))


def test_antiderivative_oracles(grid):
    assert np.all(antiderivative(ForwardCurve.flat(grid, 0.0, 0.1)).values == 0.0)
    assert np.allclose(antiderivative(ForwardCurve.flat(grid, 0.3, 0.1)).values, 0.3 * grid.points, atol=1e-13)
    h = ForwardCurve(grid, np.exp(-grid.points), 0.1)
    assert np.max(np.abs(antiderivative(h).values + np.expm1(-grid.points))) < 1e-5


def test_grid_validation():
    with pytest.raises(StructuralError):
        CurveGrid(np.array([0.1, 0.2]))
    with pytest.raises(StructuralError):
        CurveGrid(np.array([0.0, 0.2, 0.1]))
    with pytest.raises(DomainError):
        CurveGrid.uniform(1.0, 0.3)
    g = CurveGrid.uniform(1.0, 0.25)
    assert g.index_of(0.75) == 3
    with pytest.raises(DomainError):
        g.index_of(0.8)


def test_covariance_validation():
    assert CovarianceSpec((2.0, 1.0)).dim == 2
    with pytest.raises(DomainError):
        CovarianceSpec((0.0,))
    with pytest.raises(DomainError):
        CovarianceSpec((1.0, 2.0))


def test_curve_csv_round_trip(tmp_path, exp_curve):
    p = tmp_path / "h.csv"
    write_curve_csv(p, exp_curve)
    back = read_curve_csv(p, uniform_step=0.01)
    assert np.array_equal(back.values, exp_curve.values)
    assert back.beta == exp_curve.beta
