import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgl import besov as bv
from fgl import geometry as geo
from fgl import problems as pb
from fgl import tensor as tn
from fgl.grid import Field, Grid, GradientField
from fgl.solver import ProblemSpec, minimize

from .oracles import fitted_slope, quad_quotient


def field_1d(fn, N):
    g = Grid(1, N)
    return Field(g, fn(g.coords()))


def omega_count(N, margin=0.25):
    x = np.arange(N) / (N - 1)
    return int(np.sum((x >= margin - 1e-12) & (x <= 1 - margin + 1e-12)))


# -- difference quotients -----------------------------------------------------

def test_constant_field_gives_zero():
    g = Grid(2, 17)
    f = Field(g, np.full(g.shape + (2,), 3.0))
    assert bv.difference_quotient_norm(f, 1, 2 * g.h, 2.0, 0.25) == 0.0


def test_linear_field_exact():
    N = 257
    f = field_1d(lambda x: x, N)
    h = f.grid.h
    measure = omega_count(N) * h
    for j in (1, 4, 16):
        s = j * h
        assert bv.difference_quotient_norm(f, 0, s, 2.0, 0.25) == pytest.approx(s * measure ** 0.5, rel=1e-12)


def test_heaviside_mismatch_strip():
    N = 513
    f = field_1d(lambda x: (x >= 0.5).astype(float), N)
    h = f.grid.h
    for j in (1, 8, 32):
        s = j * h
        val = bv.difference_quotient_norm(f, 0, s, 2.0, 0.25)
        assert abs(val ** 2 - s) <= h + 1e-12


def test_quotient_validation():
    f = field_1d(lambda x: x, 33)
    h = f.grid.h
    with pytest.raises(ValueError):
        bv.difference_quotient_norm(f, 0, 1.5 * h, 2.0, 0.25)
    with pytest.raises(ValueError):
        bv.difference_quotient_norm(f, 0, 12 * h, 2.0, 0.25)
    with pytest.raises(ValueError):
        bv.difference_quotient_norm(f, 1, h, 2.0, 0.25)


def test_matches_direct_sum_on_shifted_window():
    # translation consistency: the probe of g(. - c) equals a direct sum of
    # |g(x) - g(x + s)|^p over the shifted window
    N, k = 257, 16
    g = Grid(1, N)
    c = k * g.h
    fn = lambda x: np.sin(7 * x) + x ** 2
    shifted = Field(g, fn(g.coords() - c))
    x = g.coords()[:, 0]
    for j in (1, 4, 16):
        s = j * g.h
        win = x[(x >= 0.25 - c - 1e-12) & (x <= 0.75 - c + 1e-12)]
        direct = (np.sum(np.abs(fn(win) - fn(win + s)) ** 2) * g.h) ** 0.5
        assert bv.difference_quotient_norm(shifted, 0, s, 2.0, 0.25) == pytest.approx(direct, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1.5, 2.0, 4.0]), st.integers(1, 2))
def test_symmetry_and_triangle_bound(seed, p, n):
    rng = np.random.default_rng(seed)
    g = Grid(n, 33)
    f = Field(g, rng.standard_normal(g.shape + (2,)))
    neg = Field(g, -f.values)
    for j in bv.dyadic_steps(g.h, 0.25):
        s = j * g.h
        for k in range(n):
            v = bv.difference_quotient_norm(f, k, s, p, 0.25)
            assert v == bv.difference_quotient_norm(neg, k, s, p, 0.25)
            assert v <= 2 * bv.lp_window_norm(f, p, 0.25, extend=s) * (1 + 1e-12)


def test_triangle_bound_on_solution_fields():
    g = Grid(2, 33)
    spec = ProblemSpec(g, tn.TensorNormSpec(geo.lp(3, 2)), 3.0, pb.source("sines", g, 2),
                       pb.boundary("zero", g, 2))
    u = minimize(spec).u
    for name, fld in bv.derived_fields(spec, u).items():
        for j in bv.dyadic_steps(g.h, 0.25):
            s = j * g.h
            v = max(bv.difference_quotient_norm(fld, k, s, 2.0, 0.25) for k in range(2))
            assert v <= 2 * bv.lp_window_norm(fld, 2.0, 0.25, extend=s) * (1 + 1e-12), name


def test_gradient_fields_use_matrix_norm():
    g = Grid(1, 33)
    G = GradientField(g, np.zeros(g.cell_shape + (2, 1)))
    G.values[g.N // 2:, 0, 0] = 3.0
    G.values[g.N // 2:, 1, 0] = 4.0
    v = bv.difference_quotient_norm(G, 0, g.h, 1.0, 0.25)
    assert v == pytest.approx(5.0 * g.h)


def test_quotient_curve_takes_max_over_directions():
    g = Grid(2, 33)
    X = g.coords()
    f = Field(g, (np.sin(3 * X[..., 0]) + 0.1 * X[..., 1])[..., None])
    c = bv.quotient_curve(f, 2.0)
    assert c.per_direction.shape == (2, len(c.steps))
    np.testing.assert_array_equal(c.values, c.per_direction[0])
    assert len(c.offsets) == 2 * len(c.steps)


def test_dyadic_steps():
    assert bv.dyadic_steps(1 / 256, 0.25) == [1, 2, 4, 8, 16, 32]
    assert bv.dyadic_steps(1 / 64, 0.25) == [1, 2, 4, 8]


# -- fitting -------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.2, 0.7, 1.0, 1.6])
def test_planted_power_law(alpha):
    s = 2.0 ** -np.arange(2, 10)
    est = bv.exponent_fit(bv.QuotientCurve.synthetic(s, 3.0 * s ** alpha))
    assert abs(est.alpha_hat - alpha) < 1e-10
    assert est.intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert est.r_squared == pytest.approx(1.0, abs=1e-12)
    assert est.window == (s.min(), s.max())


def test_zero_curve_is_infinitely_regular():
    s = 2.0 ** -np.arange(2, 8)
    est = bv.exponent_fit(bv.QuotientCurve.synthetic(s, np.zeros_like(s)))
    assert est.infinite and est.alpha_hat == math.inf


def test_fit_needs_four_steps():
    with pytest.raises(ValueError):
        bv.exponent_fit(bv.QuotientCurve.synthetic([0.1, 0.2, 0.4], [1, 2, 3]))


def test_negative_values_rejected():
    with pytest.raises(ValueError):
        bv.QuotientCurve.synthetic([0.1, 0.2, 0.4, 0.8], [1, -2, 3, 4])


def test_refit_drops_two_smallest_steps():
    s = 2.0 ** -np.arange(3, 11)[::-1]
    v = s ** 0.8
    v[:2] = v[2]          # a discretization floor at the two smallest steps
    est = bv.exponent_fit(bv.QuotientCurve.synthetic(s, v))
    assert est.full_window is not None and est.full_window.r_squared < 0.99
    assert est.alpha_hat == pytest.approx(0.8, abs=1e-10)
    assert est.window == (s[2], s[-1])


def test_sine_saturates_cap():
    est = bv.exponent_fit(bv.quotient_curve(field_1d(lambda x: np.sin(2 * np.pi * x), 1025), 2.0))
    assert 0.95 <= est.alpha_hat <= 1.05


def test_cusp_exponent_against_quadrature_oracle():
    N = 4096
    cusp = lambda x: np.abs(x - 0.5) ** 0.3
    curve = bv.quotient_curve(field_1d(cusp, N), 2.0)
    oracle = fitted_slope(curve.sizes, [quad_quotient(cusp, s, 2.0, singular=[0.5]) for s in curve.sizes])
    est = bv.exponent_fit(curve)
    assert 0.75 <= oracle <= 0.85
    assert 0.75 <= est.alpha_hat <= 0.85
    assert abs(est.alpha_hat - oracle) < 0.05


# -- predictions ---------------------------------------------------------------

def test_predictions_euclidean_gamma4():
    pr = bv.predicted_exponents(4.0, 2.0, 2.0)
    assert pr["Du"].alpha == 0.5 and pr["Du"].p == 4.0
    assert pr["V"].alpha == 1.0 and pr["V"].p == 2.0
    assert pr["flux"].alpha == 1.0 and pr["flux"].p == pytest.approx(4 / 3)
    assert not pr["W"].in_hypothesis


def test_predictions_laplacian():
    pr = bv.predicted_exponents(2.0, 2.0, 2.0)
    for row in pr:
        assert row.alpha == 1.0 and row.p == 2.0 and row.in_hypothesis


def test_predictions_general_formulas():
    pr = bv.predicted_exponents(3.0, 1.5, 3.0)
    assert pr["flux"].alpha == pytest.approx(0.5)
    assert pr["Du"].alpha == pytest.approx(0.5)
    assert pr["V"].alpha == pytest.approx(0.5)
    assert pr["W"].alpha == pytest.approx(0.5) and pr["W"].p == pytest.approx(3.0)
    with pytest.raises(KeyError):
        pr["nope"]


@pytest.mark.parametrize("args", [(1.0, 2.0, 2.0), (2.0, 2.5, 2.0), (2.0, 1.0, 2.0), (2.0, 2.0, 1.5)])
def test_prediction_ranges(args):
    with pytest.raises(ValueError):
        bv.predicted_exponents(*args)


# -- report --------------------------------------------------------------------

def scalar_spec(gamma, N, f="constant"):
    g = Grid(1, N)
    return ProblemSpec(g, tn.TensorNormSpec(geo.euclidean(1)), gamma, pb.source(f, g, 1), pb.boundary("zero", g, 1))


def test_smooth_problem_all_rows_at_cap():
    spec = scalar_spec(2.0, 257, "sines")
    rows = bv.regularity_report(spec, minimize(spec))
    assert [r.quantity for r in rows] == list(bv.QUANTITIES)
    for r in rows:
        assert r.passed and r.measured_alpha >= bv.CAP


def test_gamma4_benchmark_against_closed_form_oracle():
    spec = scalar_spec(4.0, 257)
    rows = {r.quantity: r for r in bv.regularity_report(spec, minimize(spec))}
    sizes = spec.grid.h * np.array(bv.dyadic_steps(spec.grid.h, 0.25))
    du = lambda x: np.sign(0.5 - x) * abs(0.5 - x) ** (1 / 3)
    v = lambda x: np.sign(0.5 - x) * abs(0.5 - x) ** (2 / 3)
    o_du = fitted_slope(sizes, [quad_quotient(du, s, 4.0, singular=[0.5]) for s in sizes])
    o_v = fitted_slope(sizes, [quad_quotient(v, s, 2.0, singular=[0.5]) for s in sizes])
    assert abs(rows["Du"].measured_alpha - o_du) < 0.05
    assert abs(rows["V"].measured_alpha - o_v) < 0.05
    assert rows["Du"].predicted_alpha == 0.5
    assert all(r.passed for r in rows.values())
    assert "outside stated hypothesis" in rows["W"].note


def test_random_field_fails():
    spec = scalar_spec(4.0, 257)
    rng = np.random.default_rng(0)
    u = Field(spec.grid, rng.standard_normal((257, 1)))
    rows = bv.regularity_table(spec, u)
    assert not any(r.passed for r in rows)


def test_row_errors_do_not_abort_other_rows():
    spec = scalar_spec(2.0, 33)
    rows = bv.regularity_table(spec, spec.f, steps=[1, 2])
    assert len(rows) == 4 and all(r.note.startswith("error") and not r.passed for r in rows)


def test_regularity_csv(tmp_path):
    spec = scalar_spec(2.0, 65, "sines")
    rows = bv.regularity_report(spec, minimize(spec))
    p = tmp_path / "r.csv"
    bv.write_regularity_csv(rows, p, {"gamma": 2.0})
    lines = p.read_text().splitlines()
    assert lines[0] == "gamma," + ",".join(bv.RegularityRow.CSV_HEADER)
    assert len(lines) == 5
    assert float(lines[2].split(",")[4]) == rows[1].measured_alpha
