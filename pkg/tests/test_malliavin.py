import numpy as np
import pytest

from roughmal import (
    BROWNIAN,
    CovarianceModel,
    DomainError,
    DyadicGrid,
    RegularityError,
    SampledPath,
    sample_gaussian,
)
from roughmal.derivative_constants import constants_table, sigma_derivative_terms
from roughmal.errors import ModelError
from roughmal.flow import solve_flow_dense
from roughmal.malliavin import (
    derive_constants,
    directional_derivative,
    polarized_derivative,
)
from roughmal.vectorfields import constant_field, preset_field

from oracles import central_difference


def brownian(seed, level=6):
    m = CovarianceModel(BROWNIAN)
    return sample_gaussian(m, DyadicGrid(level), seed=seed).path()


def unit_slope(grid):
    return SampledPath(grid, grid.times.copy())


# ------------------------------------------------------------- constants


def test_constants_order_one():
    t = constants_table(1)
    assert t.dw_terms == {}
    assert t.dh_terms == {(): 1}


def test_constants_order_two_match_printed_recursion():
    # the order-2 equation carries grad^2 sigma <D, D, dw> with weight 1 and
    # 2 grad sigma <D, dh>
    t = constants_table(2)
    assert t.dw_terms == {(1, 1): 1}
    assert t.dh_terms == {(1,): 2}


def test_constants_faa_di_bruno_counts():
    # coefficients of d^k sigma(y^eps) count set partitions by block sizes
    import math

    for k in (2, 3, 4, 5):
        terms = sigma_derivative_terms(k)
        for tup, c in terms.items():
            mult = {}
            for i in tup:
                mult[i] = mult.get(i, 0) + 1
            expected = math.factorial(k)
            for i, m_i in mult.items():
                expected //= math.factorial(i) ** m_i * math.factorial(m_i)
            assert c == expected, (k, tup)


def test_derive_constants_validates_to_order_four():
    tables = derive_constants(4)
    assert len(tables) == 4
    assert tables[2].dw_terms == {(1, 1, 1): 1, (1, 2): 3}


def test_derive_constants_rejects_out_of_range():
    with pytest.raises(DomainError):
        derive_constants(5)


# ------------------------------------------------------------- closed forms


def test_constant_field_derivatives():
    w = brownian(seed=1)
    g = w.grid
    h = SampledPath(g, np.sin(g.times))
    vf = constant_field(np.array([[0.8]]))
    stack = directional_derivative(w, vf, [0.0], h, n_max=2)
    assert np.max(np.abs(stack.order(1)[:, 0] - 0.8 * h.values)) <= 1e-12
    assert np.max(np.abs(stack.order(2))) <= 1e-12


def test_scalar_linear_derivatives_closed_form():
    w = brownian(seed=2)
    g = w.grid
    h = SampledPath(g, 0.7 * g.times)
    vf = preset_field("linear-scalar")
    stack = directional_derivative(w, vf, [1.0], h, n_max=2)
    y = np.exp(w.values[:, 0])
    assert np.max(np.abs(stack.order(1)[:, 0] - y * h.values)) <= 1e-9
    assert np.max(np.abs(stack.order(2)[:, 0] - y * h.values**2)) <= 1e-9


def test_derivatives_vanish_at_zero():
    w = brownian(seed=3)
    h = unit_slope(w.grid)
    stack = directional_derivative(w, preset_field("sin-scalar"), [0.2], h, n_max=3)
    for n in (1, 2, 3):
        assert np.allclose(stack.order(n)[0], 0.0)


# ------------------------------------------------------------- FD oracles


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_sin_field_matches_finite_differences(seed):
    w = brownian(seed=seed, level=7)
    g = w.grid
    h = unit_slope(g)
    vf = preset_field("sin-scalar")
    stack = directional_derivative(w, vf, [0.1], h, n_max=3)

    def flow_end(eps):
        shifted = SampledPath(g, w.values[:, 0] + eps * h.values)
        ys, _, _ = solve_flow_dense(shifted, vf, [0.1], substep_target=0.01)
        return ys[-1, 0]

    fd1 = central_difference(flow_end, 1e-4, order=1)
    fd2 = central_difference(flow_end, 1e-3, order=2)
    fd3 = central_difference(flow_end, 5e-3, order=3)
    assert abs(stack.at_time(1, 1.0)[0] - fd1) <= 1e-5 * max(abs(fd1), 1e-6)
    assert abs(stack.at_time(2, 1.0)[0] - fd2) <= 1e-3 * max(abs(fd2), 1e-6)
    assert abs(stack.at_time(3, 1.0)[0] - fd3) <= 1e-3 * max(abs(fd3), 1e-4)


def test_projection_consistency_taylor_remainder():
    # shifting w by h and re-solving equals y + D_h y + O(|h|^2): halving h
    # shrinks the remainder by about 4
    w = brownian(seed=8)
    g = w.grid
    vf = preset_field("sin-scalar")
    ys0, _, _ = solve_flow_dense(w, vf, [0.1], substep_target=0.01)
    rema = []
    for scale in (0.2, 0.1, 0.05):
        h = SampledPath(g, scale * (g.times - np.sin(2 * g.times)))
        stack = directional_derivative(w, vf, [0.1], h, n_max=1)
        shifted = SampledPath(g, w.values[:, 0] + h.values)
        ys1, _, _ = solve_flow_dense(shifted, vf, [0.1], substep_target=0.01)
        rema.append(abs(ys1[-1, 0] - ys0[-1, 0] - stack.at_time(1, 1.0)[0]))
    assert rema[0] / rema[1] == pytest.approx(4.0, rel=0.35)
    assert rema[1] / rema[2] == pytest.approx(4.0, rel=0.35)


# ------------------------------------------------------------- polarization


def test_polarized_equals_diagonal():
    w = brownian(seed=9)
    h = unit_slope(w.grid)
    vf = preset_field("sin-scalar")
    stack = directional_derivative(w, vf, [0.1], h, n_max=2)
    pol = polarized_derivative(w, vf, [0.1], [h, h])
    assert pol[0] == pytest.approx(stack.at_time(2, 1.0)[0], rel=1e-10, abs=1e-12)


def test_polarized_constant_field_zero():
    w = brownian(seed=10)
    g = w.grid
    h = SampledPath(g, g.times.copy())
    k = SampledPath(g, np.cos(g.times) - 1.0)
    vf = constant_field(np.array([[1.2]]))
    pol = polarized_derivative(w, vf, [0.0], [h, k])
    assert abs(pol[0]) <= 1e-12


def test_polarized_scalar_linear_bilinear_form():
    w = brownian(seed=11)
    g = w.grid
    h = SampledPath(g, 0.5 * g.times)
    k = SampledPath(g, np.sin(g.times))
    vf = preset_field("linear-scalar")
    pol = polarized_derivative(w, vf, [1.0], [h, k])
    expected = np.exp(w.values[-1, 0]) * 0.5 * np.sin(1.0)
    assert pol[0] == pytest.approx(expected, rel=1e-8)
    pol_swapped = polarized_derivative(w, vf, [1.0], [k, h])
    assert pol_swapped[0] == pytest.approx(pol[0], rel=1e-12)


# ------------------------------------------------------------- refusals


def test_regularity_refusal():
    w = brownian(seed=12)
    h = unit_slope(w.grid)
    with pytest.raises(RegularityError):
        directional_derivative(w, preset_field("sin-scalar"), [0.0], h, n_max=1, q=2.0, p=2.5)


def test_order_cap():
    w = brownian(seed=13)
    h = unit_slope(w.grid)
    with pytest.raises(DomainError):
        directional_derivative(w, preset_field("sin-scalar"), [0.0], h, n_max=5)


def test_grid_mismatch_refused():
    w = brownian(seed=14, level=6)
    h = unit_slope(DyadicGrid(5))
    with pytest.raises(DomainError):
        directional_derivative(w, preset_field("sin-scalar"), [0.0], h, n_max=1)
