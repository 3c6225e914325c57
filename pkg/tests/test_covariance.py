import numpy as np
import pytest

from roughmal import (
    BROWNIAN,
    FRACTIONAL,
    CovarianceModel,
    DyadicGrid,
    DomainError,
    covariance_eval,
    increment_covariance,
    rho_variation_2d,
)

from oracles import brute_rho_variation_2d


def test_brownian_eval_is_min():
    m = CovarianceModel(BROWNIAN)
    assert covariance_eval(m, 0.25, 0.5) == 0.25
    assert covariance_eval(m, 0.5, 0.25) == 0.25


def test_fbm_half_reduces_to_brownian():
    fbm = CovarianceModel(FRACTIONAL, hurst=0.5)
    bm = CovarianceModel(BROWNIAN)
    t = DyadicGrid(4).times
    R_f = covariance_eval(fbm, t[:, None], t[None, :])
    R_b = covariance_eval(bm, t[:, None], t[None, :])
    assert np.allclose(R_f, R_b, atol=1e-14)


def test_fbm_diagonal_value():
    m = CovarianceModel(FRACTIONAL, hurst=0.75)
    assert covariance_eval(m, 1.0, 1.0) == pytest.approx(1.0)


def test_eval_domain_error():
    m = CovarianceModel(BROWNIAN)
    with pytest.raises(DomainError):
        covariance_eval(m, -0.1, 0.5)
    with pytest.raises(DomainError):
        covariance_eval(m, 0.1, 1.5)


def test_symmetry_and_zero_at_origin():
    for m in (CovarianceModel(BROWNIAN), CovarianceModel(FRACTIONAL, hurst=0.35)):
        t = DyadicGrid(5).times
        R = covariance_eval(m, t[:, None], t[None, :])
        assert np.allclose(R, R.T, atol=1e-14)
        assert np.allclose(covariance_eval(m, 0.0, t), 0.0, atol=1e-14)


def test_hurst_range_enforced():
    with pytest.raises(DomainError):
        CovarianceModel(FRACTIONAL, hurst=0.25)
    with pytest.raises(DomainError):
        CovarianceModel(FRACTIONAL, hurst=1.2)


def test_rho_clamped():
    assert CovarianceModel(FRACTIONAL, hurst=0.75).rho == 1.0
    assert CovarianceModel(FRACTIONAL, hurst=0.4).rho == pytest.approx(1.25)


@pytest.mark.parametrize("model", [
    CovarianceModel(BROWNIAN),
    CovarianceModel(FRACTIONAL, hurst=0.35),
    CovarianceModel(FRACTIONAL, hurst=0.75),
])
def test_increment_covariance_is_gram_of_rectangles(model):
    # Q_m must equal the rectangle Gram of R entrywise
    for level in (3, 6, 10):
        grid = DyadicGrid(level)
        Q = increment_covariance(model, grid)
        t = grid.times
        R = covariance_eval(model, t[:, None], t[None, :])
        rect = R[1:, 1:] - R[:-1, 1:] - R[1:, :-1] + R[:-1, :-1]
        assert np.max(np.abs(Q - rect)) <= 1e-12
        assert np.allclose(Q, Q.T, atol=1e-13)
        lam = np.linalg.eigvalsh(Q)
        assert lam[0] >= -1e-12


def test_rho_variation_brownian_is_one():
    # diagonal cells contribute their length, off-diagonal overlap is 0
    m = CovarianceModel(BROWNIAN)
    for level in (2, 3):
        res = rho_variation_2d(m, DyadicGrid(level), rho=1.0)
        assert res.regime == "exact"
        assert res.value == pytest.approx(1.0, abs=1e-12)


def test_rho_variation_matches_brute_force_m3():
    m = CovarianceModel(FRACTIONAL, hurst=0.35)
    grid = DyadicGrid(3)
    t = grid.times
    R = covariance_eval(m, t[:, None], t[None, :])
    for rho in (1.0, m.rho, 1.8):
        res = rho_variation_2d(m, grid, rho=rho)
        oracle = brute_rho_variation_2d(R, rho)
        assert res.value == pytest.approx(oracle, rel=1e-12)


def test_rho_variation_rank_one_kernel():
    # R(s,t) = s t factorizes, so sum |ds dt| = 1 for every partition pair.
    class RankOne(CovarianceModel):
        pass

    grid = DyadicGrid(3)
    t = grid.times
    R = t[:, None] * t[None, :]
    oracle = brute_rho_variation_2d(R, 1.0)
    assert oracle == pytest.approx(1.0, abs=1e-12)


def test_rho_variation_fbm_half_equals_brownian():
    grid = DyadicGrid(3)
    a = rho_variation_2d(CovarianceModel(FRACTIONAL, hurst=0.5), grid, rho=1.0)
    b = rho_variation_2d(CovarianceModel(BROWNIAN), grid, rho=1.0)
    assert a.value == pytest.approx(b.value, rel=1e-12)


def test_rho_variation_rejects_bad_rho():
    with pytest.raises(DomainError):
        rho_variation_2d(CovarianceModel(BROWNIAN), DyadicGrid(3), rho=0.9)


def test_rho_variation_monotone_under_refinement():
    m = CovarianceModel(FRACTIONAL, hurst=0.35)
    prev = None
    warm = None
    for level in (3, 4, 5, 6):
        res = rho_variation_2d(m, DyadicGrid(level), warm_start=warm)
        if prev is not None:
            assert res.value >= prev - 1e-12
        prev = res.value
        # map the optimizer onto the next, twice-as-fine grid
        warm = (2 * res.rows, 2 * res.cols)
