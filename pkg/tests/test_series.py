from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, strategies as st

from involfact.perm_core import compose, cycle_type_of, involutions
from involfact.series import (
    SeriesDomainError,
    TruncatedSeries,
    bivariate_direct,
    build_F,
    build_F_bivariate,
    build_G,
    composed_cycle_mean,
    conditional_mean_given_cycles,
    conditional_mean_oracle,
    geometric_tail,
    in_membership_set,
    log_G_series,
    mean_invol_exact,
    mean_invol_real,
    membership_oracle,
    membership_probability,
    membership_series,
    partition_moment,
    second_moment_exact,
    second_moment_real,
    stirling1,
    vertical_series,
)

THETAS = [Fraction(1, 3), Fraction(1, 2), Fraction(1), Fraction(2), Fraction(7, 2)]

rationals = st.fractions(min_value=-3, max_value=3, max_denominator=12)


def series_with_unit_constant(max_n=8):
    return st.lists(rationals, min_size=1, max_size=max_n).map(lambda c: TruncatedSeries([1] + c))


@given(series_with_unit_constant())
def test_exp_log_round_trip(s):
    assert s.log().exp().coeffs == s.coeffs


@given(series_with_unit_constant(), series_with_unit_constant())
def test_log_of_product_is_sum(a, b):
    N = min(a.N, b.N)
    lhs = (a * b).log()
    rhs = a.truncate(N).log() + b.truncate(N).log()
    assert lhs.coeffs == rhs.coeffs


@given(series_with_unit_constant(), st.fractions(min_value=-2, max_value=2, max_denominator=6))
def test_pow_composes(s, r):
    assert s.pow(r).pow(2).coeffs == s.pow(2 * r).coeffs


def test_series_basics():
    g = geometric_tail(5)
    assert g.coeffs == [0, 1, 1, 1, 1, 1]
    assert (g * g)[4] == 3
    assert g.derivative().coeffs == [1, 2, 3, 4, 5]
    assert g.substitute_power(2, 6).coeffs == [0, 0, 1, 0, 1, 0, 1]
    assert "numerator" in g.to_csv().splitlines()[0]


def test_domain_errors():
    with pytest.raises(SeriesDomainError):
        TruncatedSeries([0.5])
    with pytest.raises(SeriesDomainError):
        TruncatedSeries([2, 1]).log()
    with pytest.raises(SeriesDomainError):
        TruncatedSeries([1, 1]).exp()
    with pytest.raises(SeriesDomainError):
        TruncatedSeries([1], "real") + TruncatedSeries([1])
    with pytest.raises((TypeError, SeriesDomainError)):
        mean_invol_exact(3, 0.5)


@pytest.mark.parametrize("theta", THETAS)
def test_F_product_equals_recurrence(theta):
    assert build_F(theta, 40, method="product").coeffs == build_F(theta, 40, method="recurrence").coeffs


@pytest.mark.parametrize("theta", THETAS)
def test_G_product_equals_explog(theta):
    assert build_G(theta, 25, method="product").coeffs == build_G(theta, 25, method="explog").coeffs
    assert build_G(theta, 12).log().coeffs == log_G_series(theta, 12).coeffs


@pytest.mark.parametrize("theta", THETAS)
def test_moments_equal_partition_sums(theta):
    for n in range(1, 13):
        assert mean_invol_exact(n, theta) == partition_moment(n, theta, 1)
    for n in range(1, 10):
        assert second_moment_exact(n, theta) == partition_moment(n, theta, 2)


def test_frozen_moments():
    assert mean_invol_exact(3, 1) == Fraction(8, 3)
    assert mean_invol_exact(2, 1) == 2
    assert second_moment_exact(2, 1) == 4
    assert mean_invol_exact(3, Fraction(1, 2)) == Fraction(8, 3)
    assert second_moment_exact(3, Fraction(1, 2)) == Fraction(112, 15)


@pytest.mark.parametrize("theta", [Fraction(1, 2), Fraction(1), Fraction(3)])
def test_real_domain_agrees_with_rational(theta):
    def rel_err(real, exact):
        with mpmath.mp.workprec(256):
            return abs(real * exact.denominator / mpmath.mpf(exact.numerator) - 1)

    for n in (5, 30, 60):
        assert rel_err(mean_invol_real(n, theta), mean_invol_exact(n, theta)) < mpmath.mpf(10) ** -25
    assert rel_err(second_moment_real(40, theta), second_moment_exact(40, theta)) < mpmath.mpf(10) ** -25


def test_bivariate_routes_and_oracles():
    grid = build_F_bivariate(6, 9)
    assert build_F_bivariate(6, 9, method="exp").grid == grid.grid
    assert grid[2, 3] == 1
    for m in range(0, 5):
        assert vertical_series(m, 9).coeffs == grid.vertical(m).coeffs
    for n in range(1, 7):
        for m in range(1, n + 1):
            assert grid[m, n] == bivariate_direct(m, n)
    f1 = build_F(1, 9)
    for n in range(1, 7):
        assert sum(grid.column(n)) == f1[n]


def test_stirling_and_conditional_mean():
    assert stirling1(4, 2) == 11
    assert sum(stirling1(6, m) for m in range(7)) == 720
    for n in range(1, 8):
        for m in range(1, n + 1):
            assert conditional_mean_given_cycles(n, m) == conditional_mean_oracle(n, m)
    assert conditional_mean_given_cycles(5, 5) == 26
    assert conditional_mean_given_cycles(5, 1) == 5
    with pytest.raises(ValueError):
        conditional_mean_given_cycles(3, 4)


def test_membership():
    assert membership_probability(4, 1, 1) == Fraction(7, 12)
    for theta in (Fraction(1, 2), Fraction(1), Fraction(2)):
        for xi in (1, 2, 3):
            for n in range(1, 9):
                assert membership_probability(n, theta, xi) == membership_oracle(n, theta, xi)
    assert all(membership_probability(n, 1, n) == 1 for n in range(1, 8))
    assert in_membership_set({1: 3, 5: 1}, 3)
    assert not in_membership_set({1: 4}, 3)
    assert not in_membership_set({5: 2}, 3)
    assert membership_series(1, 2, 4)[0] == 1


def _composed_mean_brute(n, k):
    invs = list(involutions(n))
    total = sum(cycle_type_of(compose(b, a)).count(k) for a in invs for b in invs)
    return Fraction(total, len(invs) ** 2)


@pytest.mark.parametrize("n", [4, 5, 6])
def test_composed_cycle_mean_against_enumeration(n):
    for k in range(1, n + 1):
        assert composed_cycle_mean(n, k) == _composed_mean_brute(n, k)


def test_composed_cycle_mean_real_route():
    assert float(composed_cycle_mean(500, 1, "real")) == pytest.approx(1.8734618789483795, rel=1e-12)
    assert float(composed_cycle_mean(60, 2, "real")) == pytest.approx(float(composed_cycle_mean(60, 2)), rel=1e-14)
