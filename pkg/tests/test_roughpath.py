import math

import numpy as np
import pytest

from roughmal import (
    BROWNIAN,
    CovarianceModel,
    DomainError,
    DyadicGrid,
    SampledPath,
    chen_combine,
    chen_inverse,
    control_omega,
    greedy_n_alpha,
    lift_piecewise_linear,
    p_variation,
    sample_gaussian,
    segment_signature,
)
from roughmal.roughpath import roughpath_from_json, roughpath_to_json
from roughmal.tensor_ops import zero_tensors

from oracles import all_partitions, brute_p_variation, rs_quadrature


def brownian_lift(seed, level, dim=1, p=2.5, with_level3=False):
    m = CovarianceModel(BROWNIAN, dim=dim)
    s = sample_gaussian(m, DyadicGrid(level), seed=seed)
    return lift_piecewise_linear(s.path(), 3.2 if with_level3 else p)


# ---------------------------------------------------------------- lift


def test_single_segment_level2():
    path = SampledPath(DyadicGrid(0), np.array([[0.0, 0.0], [1.0, 0.0]]))
    x = lift_piecewise_linear(path, 2.5)
    assert np.allclose(x.lvl2[0], [[0.5, 0.0], [0.0, 0.0]])


def test_two_segments_levy_area_against_quadrature():
    # L path: (1,0) then (0,1); oracle = Riemann sums of int (x - x_0) (x) dx
    vals = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    path = SampledPath(DyadicGrid(1), vals)
    x = lift_piecewise_linear(path, 2.5)
    x1, x2, _ = x.tensors_over(0, 2)
    assert np.allclose(x2, [[0.5, 1.0], [0.0, 0.5]], atol=1e-14)

    def pos(t):
        return path.value_at(t)

    n_sub = 10**4
    ts = np.linspace(0, 1, n_sub + 1)
    pts = np.array([pos(t) for t in ts])
    riemann = np.zeros((2, 2))
    for k in range(n_sub):
        riemann += np.outer(pts[k] - pts[0], pts[k + 1] - pts[k])
    assert np.max(np.abs(riemann - x2)) <= 1e-3  # left sums converge at O(1/n)
    trap = np.zeros((2, 2))
    for k in range(n_sub):
        mid = 0.5 * (pts[k] + pts[k + 1])
        trap += np.outer(mid - pts[0], pts[k + 1] - pts[k])
    assert np.max(np.abs(trap - x2)) <= 1e-8


def test_one_dimensional_geometricity():
    x = brownian_lift(seed=5, level=6)
    x1, x2, _ = x.tensors_over(0, 64)
    assert x2[0, 0] == pytest.approx(0.5 * x1[0] ** 2, rel=1e-12)


def test_lift_rejects_bad_p():
    path = SampledPath(DyadicGrid(1), np.zeros((3, 1)))
    for bad in (1.5, 4.0, 5.0):
        with pytest.raises(DomainError):
            lift_piecewise_linear(path, bad)


# ---------------------------------------------------------------- chen


def test_chen_identity_element():
    a = segment_signature(np.array([0.3, -0.2]), 3)
    z = zero_tensors(2, 3)
    c = chen_combine(a, z)
    for u, v in zip(a, c):
        assert np.allclose(u, v, atol=0)


def test_chen_1d_consistency():
    a = segment_signature(np.array([0.3]), 2)
    b = segment_signature(np.array([0.5]), 2)
    c = chen_combine(a, b)
    assert c[1][0, 0] == pytest.approx(0.32, rel=1e-14)
    assert c[1][0, 0] == pytest.approx(0.8**2 / 2, rel=1e-14)


def test_chen_associativity_random():
    rng = np.random.default_rng(7)
    for lvl in (2, 3):
        for _ in range(20):
            trips = []
            for _ in range(3):
                d1 = rng.standard_normal(3)
                d2 = rng.standard_normal((3, 3))
                d3 = rng.standard_normal((3, 3, 3)) if lvl == 3 else None
                trips.append((d1, d2, d3))
            a, b, c = trips
            left = chen_combine(chen_combine(a, b), c)
            right = chen_combine(a, chen_combine(b, c))
            for u, v in zip(left, right):
                if u is not None:
                    assert np.max(np.abs(u - v)) <= 1e-13


def test_chen_inverse():
    rng = np.random.default_rng(8)
    a = (rng.standard_normal(2), rng.standard_normal((2, 2)), rng.standard_normal((2, 2, 2)))
    ident = chen_combine(a, chen_inverse(a))
    for lvl in ident:
        assert np.max(np.abs(lvl)) <= 1e-14


def test_chen_level_mismatch():
    a = segment_signature(np.ones(2), 2)
    b = segment_signature(np.ones(2), 3)
    with pytest.raises(DomainError):
        chen_combine(a, b)


def test_reconstruction_split_point_independent():
    x = brownian_lift(seed=1, level=5, dim=2)
    direct = x.tensors_over(3, 29)
    for u in (7, 16, 23):
        split = chen_combine(x.tensors_over(3, u), x.tensors_over(u, 29))
        for ua, ub in zip(direct, split):
            if ua is not None:
                assert np.max(np.abs(ua - ub)) <= 1e-13


def test_geometricity_and_shuffles_on_grid_pairs():
    x = brownian_lift(seed=2, level=4, dim=2, with_level3=True)
    n = x.grid.n_cells
    for a in range(0, n, 3):
        for b in range(a + 1, n + 1, 2):
            x1, x2, x3 = x.tensors_over(a, b)
            sym = 0.5 * (x2 + x2.T)
            assert np.max(np.abs(sym - 0.5 * np.outer(x1, x1))) <= 1e-13
            # level-3 shuffle: x1_a x2_bc = x3_abc + x3_bac + x3_bca
            lhs = np.einsum("a,bc->abc", x1, x2)
            rhs = x3 + np.einsum("bac->abc", x3) + np.einsum("bca->abc", x3)
            assert np.max(np.abs(lhs - rhs)) <= 1e-13


# ---------------------------------------------------------------- p-variation


def test_pvar_monotone_path_single_block():
    vals = np.array([0.0, 0.5, 0.9, 1.4, 2.0])[:, None]
    path = SampledPath(DyadicGrid(2), vals)
    x = lift_piecewise_linear(path, 2.0)
    got = p_variation(x, 1)
    dist = lambda a, b: abs(vals[b, 0] - vals[a, 0])
    oracle = brute_p_variation(dist, 5, 2.0) ** 0.5
    assert got == pytest.approx(oracle, rel=1e-12)
    assert got == pytest.approx(2.0, rel=1e-12)


def test_pvar_zigzag():
    vals = np.array([0.0, 0.5, 1.0, 0.5, 0.0])[:, None]
    path = SampledPath(DyadicGrid(2), vals)
    x = lift_piecewise_linear(path, 2.0)
    assert p_variation(x, 1) == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_pvar_degenerate_interval():
    x = brownian_lift(seed=3, level=4)
    assert p_variation(x, 1, 0.5, 0.5) == 0.0


def test_pvar_dp_equals_brute_force_small_grids():
    # exact equality on every grid with <= 17 points
    rng = np.random.default_rng(11)
    for level in (2, 3, 4):
        n = 2**level
        vals = np.cumsum(rng.standard_normal((n + 1, 2)), axis=0)
        vals -= vals[0]
        path = SampledPath(DyadicGrid(level), vals)
        x = lift_piecewise_linear(path, 2.3)
        for lvl_i in (1, 2):
            got = p_variation(x, lvl_i)

            def dist(a, b, lvl_i=lvl_i):
                t = x.tensors_over(a, b)
                return float(np.linalg.norm(t[lvl_i - 1]))

            oracle = brute_p_variation(dist, n + 1, 2.3 / lvl_i) ** (lvl_i / 2.3)
            assert got == pytest.approx(oracle, rel=1e-12)


# ---------------------------------------------------------------- control


def test_control_linear_path_closed_form():
    # omega(s,t) = |v|^p (t-s)^p sum_i (i!)^{-p/i}, single blocks optimal
    p = 3.2
    v = np.array([0.7, -0.4])
    grid = DyadicGrid(6)
    path = SampledPath(grid, grid.times[:, None] * v[None, :])
    x = lift_piecewise_linear(path, p)
    L = 3
    vp = float(np.linalg.norm(v))
    for (s, t) in [(0.0, 1.0), (0.25, 0.75)]:
        closed = vp**p * (t - s) ** p * sum(
            math.factorial(i) ** (-p / i) for i in range(1, L + 1)
        )
        assert control_omega(x, s, t) == pytest.approx(closed, rel=1e-10)


def test_control_zero_on_diagonal():
    x = brownian_lift(seed=4, level=5)
    assert control_omega(x, 0.25, 0.25) == 0.0


def test_control_superadditive():
    x = brownian_lift(seed=9, level=6, dim=2)
    w_full = control_omega(x, 0.0, 1.0)
    assert control_omega(x, 0.0, 0.5) + control_omega(x, 0.5, 1.0) <= w_full + 1e-12
    rng = np.random.default_rng(0)
    times = x.grid.times
    for _ in range(10):
        a, u, b = sorted(rng.choice(len(times), size=3, replace=False))
        assert (
            control_omega(x, times[a], times[u]) + control_omega(x, times[u], times[b])
            <= control_omega(x, times[a], times[b]) + 1e-12
        )


# ---------------------------------------------------------------- greedy N_alpha


def test_nalpha_zero_when_alpha_large():
    x = brownian_lift(seed=6, level=5)
    gp = greedy_n_alpha(x, control_omega(x, 0, 1) * 1.01)
    assert gp.n_alpha == 0
    assert np.allclose(gp.taus, [0.0, 1.0])


def test_nalpha_linear_path_closed_form():
    p = 2.5
    v = 1.0
    grid = DyadicGrid(6)
    path = SampledPath(grid, grid.times[:, None] * v)
    x = lift_piecewise_linear(path, p)
    kappa = sum(math.factorial(i) ** (-p / i) for i in range(1, 3))
    for alpha in (0.002, 0.01, 0.07, 0.3):
        gp = greedy_n_alpha(x, alpha)
        # direct enumeration from the closed-form omega on the grid
        mesh = grid.mesh
        delta = (alpha / kappa) ** (1.0 / p)
        step = max(1, int(np.ceil(delta / mesh - 1e-12)))
        expected = 0
        pos = 0
        while pos + step < grid.n_cells:
            pos += step
            expected += 1
        assert gp.n_alpha == expected


def test_nalpha_bound_and_monotonicity():
    # alpha N_alpha <= omega(0,1), and N_alpha non-increasing in alpha
    for seed in range(5):
        x = brownian_lift(seed=seed, level=6)
        w01 = control_omega(x, 0, 1)
        prev = None
        for alpha in np.geomspace(0.01, 1.0, 8) * w01:
            gp = greedy_n_alpha(x, alpha)
            assert alpha * gp.n_alpha <= w01
            if prev is not None:
                assert gp.n_alpha <= prev
            prev = gp.n_alpha


def test_nalpha_invariant_strictly_below_threshold():
    x = brownian_lift(seed=12, level=5)
    alpha = 0.3 * control_omega(x, 0, 1)
    gp = greedy_n_alpha(x, alpha)
    times = x.grid.times
    for i in range(len(gp.taus) - 1):
        lo, hi = gp.taus[i], gp.taus[i + 1]
        for t in times[(times > lo) & (times < hi)]:
            assert control_omega(x, lo, t) < alpha


def test_lift_continuity_proxy():
    # lifting finer samplings of one fixed smooth path: level-1 sup distance to
    # the finest lift decreases monotonically
    fine = DyadicGrid(9)
    smooth = np.stack([np.sin(2 * np.pi * fine.times), np.cos(3 * fine.times)], axis=1)
    ref = SampledPath(fine, smooth)
    dists = []
    for level in (3, 4, 5, 6):
        coarse = ref.restrict(level).refine(9 - level)
        dists.append(np.max(np.abs(coarse.values - ref.values)))
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_json_roundtrip():
    x = brownian_lift(seed=13, level=3, dim=2, with_level3=True)
    doc = roughpath_to_json(x)
    y = roughpath_from_json(doc)
    assert y.dim == x.dim and y.p == x.p and y.top_level == 3
    assert np.allclose(y.lvl1, x.lvl1) and np.allclose(y.lvl3, x.lvl3)
