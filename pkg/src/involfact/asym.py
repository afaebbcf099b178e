"""Closed-form asymptotics, special functions and CLT normalizers.

All evaluators return plain floats or :class:`AsymptoticEstimate` whose ``value``
is an ``mpmath.mpf`` (the second moment overflows doubles around n = 300).

Two second-moment expansions carry a ``variant`` switch.  ``"corrected"`` (the
default) is the saddle-point evaluation of the singular approximation ``tau``
including its ``n^(1/3)`` and constant terms, and for ``theta = 1`` uses the
``1/(1-z)`` coefficient ``-(pi^2+4)/8`` obtained from ``t = -log z``.  ``"published"``
reproduces the published closed forms verbatim (see the README).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import mpmath
from mpmath import mp, mpf

DEFAULT_PREC = 128
EDGEWORTH_CONST = 3**1.5 / (24 * math.sqrt(2 * math.pi))


class PreconditionError(ValueError):
    """Inputs outside the hypotheses of a bound; ``violations`` lists each failed condition."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class AsymptoticEstimate:
    value: mpf
    claimed_error_exponent: Fraction
    regime: str = ""

    def __post_init__(self):
        if not (mpmath.isfinite(self.value) and self.value > 0):
            raise ArithmeticError(f"non-positive or non-finite estimate {self.value}")

    @property
    def log_value(self) -> mpf:
        return mpmath.log(self.value)

    def __float__(self):
        return float(self.value)


# ----------------------------------------------------------------------------
# polylogarithms


def _li_series(s: int, z: mpf) -> mpf:
    """``sum_k z^k / k^s`` for ``0 <= z <= 1/2``; stops once the tail bound drops below the working ulp."""
    total = mpf(0)
    term = z
    k = 1
    eps = mpf(2) ** (-mp.prec - 4)
    while True:
        contrib = term / mpf(k) ** s
        total += contrib
        # remaining terms are bounded by a geometric series with ratio z
        if contrib * z / (1 - z) < eps * abs(total):
            return total
        k += 1
        term *= z


def polylog(s: int, z, prec: int = DEFAULT_PREC) -> mpf:
    """``Li_s(z)`` for ``s`` in {1, 2} (any positive integer on ``[0, 1/2]``) and ``0 <= z <= 1``."""
    with mp.workprec(prec + 16):
        z = mpf(z)
        if z < 0 or z > 1:
            raise ValueError("polylog implemented for 0 <= z <= 1 only")
        if z == 0:
            return mpf(0)
        if s == 1:
            if z == 1:
                return mpmath.inf
            return -mpmath.log1p(-z)
        if z <= 0.5:
            out = _li_series(s, z)
        elif s == 2:
            if z == 1:
                out = mpmath.pi**2 / 6
            else:
                out = mpmath.pi**2 / 6 - mpmath.log(z) * mpmath.log1p(-z) - _li_series(2, 1 - z)
        else:
            if z == 1:
                out = mpmath.zeta(s)
            else:
                out = mpmath.polylog(s, z)
        return +out


def li2(z, prec: int = DEFAULT_PREC) -> mpf:
    return polylog(2, z, prec)


# ----------------------------------------------------------------------------
# mean


def _mp(theta) -> mpf:
    if isinstance(theta, Fraction):
        return mpf(theta.numerator) / theta.denominator
    return mpf(theta)


def mean_asym(n: int, theta, prec: int = DEFAULT_PREC) -> AsymptoticEstimate:
    """Leading term of ``E_n invol`` under ESF(theta)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    with mp.workprec(prec):
        th = _mp(theta)
        if th <= 0:
            raise ValueError("theta must be positive")
        const = th ** ((1 - th**2) / 4) * mpmath.gamma(th) / (
            2 ** (th**2 / 2 + 1) * mpmath.exp(th / 2) * mpmath.sqrt(mpmath.pi)
        )
        value = const * mpmath.exp(2 * mpmath.sqrt(th * n)) * mpf(n) ** (th**2 / 4 - th + mpf(1) / 4)
        return AsymptoticEstimate(+value, Fraction(-1, 2), "mean")


def wright_leading(n: int, alpha, beta, phi_at_1, prec: int = DEFAULT_PREC) -> mpf:
    """Leading term of ``[z^n] (1-z)^beta phi(z) exp(alpha/(1-z))`` (real ``beta`` only)."""
    with mp.workprec(prec):
        alpha, beta, phi_at_1 = _mp(alpha), _mp(beta), _mp(phi_at_1)
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        return +(
            mpf(n) ** (-beta / 2 - mpf(3) / 4)
            * mpmath.exp(2 * mpmath.sqrt(alpha * n))
            / (2 * mpmath.sqrt(mpmath.pi))
            * phi_at_1
            * mpmath.exp(alpha / 2)
            * alpha ** (beta / 2 + mpf(1) / 4)
        )


def mean_from_wright(n: int, theta, prec: int = DEFAULT_PREC) -> mpf:
    """``E_n invol`` assembled from :func:`wright_leading` and the two Stirling factors."""
    with mp.workprec(prec):
        th = _mp(theta)
        coeff = wright_leading(n, th, -th**2 / 2, mpmath.exp(-th) * 2 ** (-th**2 / 2), prec)
        n_fact = mpmath.sqrt(2 * mpmath.pi * n) * mpmath.exp(-n) * mpf(n) ** n
        rising = mpmath.sqrt(2 * mpmath.pi) / mpmath.gamma(th) * mpmath.exp(-n) * mpf(n) ** (n + th - mpf(1) / 2)
        return +(n_fact / rising * coeff)


# ----------------------------------------------------------------------------
# second moment


def k_theta(theta, prec: int = DEFAULT_PREC, tol: float = 1e-30) -> tuple[mpf, int]:
    """``K_theta`` for ``theta > 1`` and the number of factors used.

    The log-factor ``-1/2 log(1-theta^(2-2k)) + k/(theta^(k-1)-1)`` is eventually
    dominated by ``2k theta^(1-k)``, a sequence whose ratio ``(k+1)/(k theta)``
    falls below one; the product stops once the geometric bound on the remaining
    log-factors is below ``tol``.
    """
    with mp.workprec(prec + 20):
        th = _mp(theta)
        if th <= 1:
            raise ValueError("K_theta needs theta > 1")
        total = mpf(0)
        k = 2
        while True:
            x = th ** (1 - k)
            term = -mpmath.log1p(-(x**2)) / 2 + k * x / (1 - x)
            total += term
            ratio = mpf(k + 1) / (k * th)
            bound = 2 * (k + 1) * th ** (-k)
            if ratio < 1 and x < mpf(1) / 2 and bound / (1 - ratio) < tol:
                return +mpmath.exp(total), k - 1
            k += 1
            if k > 10**6:
                raise ArithmeticError("K_theta product failed to converge")


def _second_moment_prefactor(n: int, th: mpf) -> mpf:
    """``n!/theta^(n)`` replaced by its leading form ``Gamma(theta) n^(1-theta)``."""
    return mpmath.gamma(th) * mpf(n) ** (1 - th)


def _tau_saddle(n: int, A: mpf, B: mpf, a: mpf, C: mpf) -> mpf:
    """``[z^n] C w^a exp(A/w^2 + B/w)`` with ``w = 1 - z`` by the saddle-point method."""
    n = mpf(n)
    two_a = 2 * A
    w0 = (two_a / n) ** (mpf(1) / 3)
    expo = (
        mpf(3) / 2 * two_a ** (mpf(1) / 3) * n ** (mpf(2) / 3)
        + (A + B) / two_a ** (mpf(1) / 3) * n ** (mpf(1) / 3)
        + two_a / 3
        - (two_a - B) ** 2 / (12 * A)
    )
    return C * w0**a * mpmath.exp(expo) / mpmath.sqrt(2 * mpmath.pi * 3 * n / w0)


def tau_parameters(theta, prec: int = DEFAULT_PREC) -> dict:
    """``A, B, a, C`` with ``G(z) ~ C w^a exp(A/w^2 + B/w)``, ``w = 1 - z``, for ``0 < theta <= 1``."""
    with mp.workprec(prec):
        th = _mp(theta)
        if th == 1:
            A = mpmath.pi**2 / 6
            B = -(mpmath.pi**2 + 4) / 8
            return {"A": A, "B": B, "a": mpf(1) / 4,
                    "C": mpmath.pi ** (-mpf(1) / 4) * mpmath.exp(mpf(7) / 24 - mpmath.pi**2 / 144)}
        if not 0 < th < 1:
            raise ValueError("tau_parameters needs 0 < theta <= 1")
        A = li2(th, prec)
        L2 = li2(th**2, prec)
        return {"A": A, "B": L2 / 4 - A, "a": mpf(0),
                "C": (1 - th**2) ** (mpf(1) / 4) * mpmath.exp(A / 12 - L2 / 8 - th / (12 * (1 - th)))}


def second_moment_coeff_asym(n: int, theta, variant: str = "corrected", prec: int = DEFAULT_PREC) -> mpf:
    """Asymptotic ``[z^n] G(z)``."""
    with mp.workprec(prec):
        th = _mp(theta)
        if th > 1:
            K, _ = k_theta(th, prec)
            return +(th**n / mpmath.sqrt(n) * K * mpmath.exp(2 * mpmath.sqrt(n) - mpf(1) / 2)
                     / (2 * mpmath.sqrt(2 * mpmath.pi)))
        if variant == "corrected":
            p = tau_parameters(th, prec)
            return +_tau_saddle(n, p["A"], p["B"], p["a"], p["C"])
        if variant != "published":
            raise ValueError(f"unknown variant {variant!r}")
        n_ = mpf(n)
        if th == 1:
            pi = mpmath.pi
            return +(
                1 / (mpf(2) ** (mpf(1) / 4) * pi ** (mpf(1) / 12) * (3 * n_) ** (mpf(7) / 12))
                * mpmath.exp((3 * pi * n_) ** (mpf(2) / 3) / 2
                             - (pi**2 - 4) / 8 * (3 * n_ / pi**2) ** (mpf(1) / 3)
                             + mpf(7) / 24 - pi**2 / 144)
            )
        A = li2(th, prec)
        L2 = li2(th**2, prec)
        two_a = 2 * A
        return +(
            (1 - th**2) ** (mpf(1) / 4) * two_a ** (mpf(1) / 6) / (mpmath.sqrt(6 * mpmath.pi) * n_ ** (mpf(2) / 3))
            * mpmath.exp(3 * A * n_ ** (mpf(2) / 3) / two_a ** (mpf(2) / 3)
                         + L2 * n_ ** (mpf(1) / 3) / two_a ** (mpf(1) / 3)
                         - th / (12 * (1 - th)))
        )


def second_moment_asym(n: int, theta, variant: str = "corrected", prec: int = DEFAULT_PREC) -> AsymptoticEstimate:
    """Asymptotic ``E_n invol^2``; dispatches on ``theta > 1``, ``theta < 1``, ``theta = 1``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    with mp.workprec(prec):
        th = _mp(theta)
        if th <= 0:
            raise ValueError("theta must be positive")
        coeff = second_moment_coeff_asym(n, th, variant, prec)
        value = coeff * _second_moment_prefactor(n, th)
        if th > 1:
            return AsymptoticEstimate(+value, Fraction(-1, 2), "theta>1")
        return AsymptoticEstimate(+value, Fraction(-1, 3), "theta=1" if th == 1 else "theta<1")


def growth_exponents(theta) -> dict:
    """Shape of ``log E_n invol^2 = c n^p + ... + q log n``: returns ``p`` and ``q`` per regime."""
    th = float(theta)
    if th > 1:
        # n log theta + 2 sqrt(n) + (1/2 - theta) log n
        return {"regime": "theta>1", "exp_power": 0.5, "linear_rate": math.log(th), "poly_power": 0.5 - th}
    if th == 1:
        return {"regime": "theta=1", "exp_power": 2 / 3, "linear_rate": 0.0, "poly_power": -0.75}
    return {"regime": "theta<1", "exp_power": 2 / 3, "linear_rate": 0.0, "poly_power": 1 / 3 - th}


# ----------------------------------------------------------------------------
# Mellin check of log G(e^-t)


def mellin_lhs(t: float, theta: float, cutoff: float = 1e-30) -> float:
    """``L(t) = log G(e^-t)`` summed as a harmonic sum."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 < theta <= 1:
        raise ValueError("mellin_lhs needs 0 < theta <= 1")
    # both summands are bounded by theta^l e^{-l t} / (1-e^{-t})^2
    lead = 1.0 / (-math.expm1(-t)) ** 2
    decay = t - math.log(theta)
    L = int(math.ceil((math.log(lead + 1.0) - math.log(cutoff)) / decay)) + 2
    ell = np.arange(1, L + 1, dtype=float)
    log_th = math.log(theta)
    a = np.exp(2 * ell * log_th - 2 * ell * t) / (2 * ell) / (-np.expm1(-2 * ell * t))
    b = np.exp(ell * log_th - ell * t) / np.expm1(-ell * t) ** 2
    return math.fsum(a) + math.fsum(b)


def mellin_expansion(t: float, theta: float, variant: str = "corrected") -> float:
    """Singular expansion of ``L(t)`` through the constant term.

    ``variant="published"`` uses the constant ``-log (2 pi)^(1/4) + 1/24`` at ``theta = 1``;
    the residue of the double pole at ``s = 0`` gives ``-log(pi)/4 + 1/24`` instead.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 < theta <= 1:
        raise ValueError("mellin_expansion needs 0 < theta <= 1")
    if theta == 1:
        const = -0.25 * math.log(2 * math.pi) if variant == "published" else -0.25 * math.log(math.pi)
        return (math.pi**2 / (6 * t * t) + (math.pi**2 - 12) / (24 * t) + 0.25 * math.log(t)
                + const + 1.0 / 24)
    a = float(li2(theta))
    b = float(li2(theta * theta))
    return a / t**2 + b / (4 * t) + 0.25 * math.log1p(-theta * theta) - theta / (12 * (1 - theta))


# ----------------------------------------------------------------------------
# conditional mean and typical-value bounds


def conditional_mean_asym(n: int, m: int) -> float:
    if n < 3 or m < 1:
        raise ValueError("need n >= 3 and m >= 1")
    return math.exp(m * math.log(n) - math.lgamma(m + 1) - (m - 1) * math.log(math.log(n)))


def harmonic(n: int, power: int = 1) -> float:
    return math.fsum(1.0 / k**power for k in range(1, n + 1))


def cycle_count_sd(n: int) -> float:
    """``s_n`` from ``s_n^2 = 2 sum_{j<n} H_j/(j+1) - H_n(H_n - 1)``."""
    H = np.cumsum(1.0 / np.arange(1, n + 1))
    Hn = float(H[-1])
    s2 = 2 * math.fsum(H[:-1] / np.arange(2, n + 1)) - Hn * (Hn - 1)
    return math.sqrt(s2)


def triangular(r: int) -> int:
    return r * (r + 1) // 2


def skew_preconditions(n: int, xi1: int, xi2: int) -> list[str]:
    Hn = harmonic(n)
    sn = cycle_count_sd(n)
    bad = []
    if not 20 <= xi1:
        bad.append(f"xi1={xi1} < 20")
    if xi1 > n:
        bad.append(f"xi1={xi1} > n={n}")
    if xi2 > Hn + xi1 * sn:
        bad.append(f"xi2={xi2} > H_n + xi1*s_n = {Hn + xi1 * sn:.6g}")
    if xi1 * triangular(xi2) >= n:
        bad.append(f"xi1*T_xi2 = {xi1 * triangular(xi2)} >= n={n}")
    return bad


def skew_bound(n: int, xi1: int, xi2: int) -> tuple[float, float]:
    """``(log of the invol bound, lower bound on the uniform probability of lying below it)``."""
    bad = skew_preconditions(n, xi1, xi2)
    if bad:
        raise PreconditionError(bad)
    xi3 = math.ceil(harmonic(n) + xi1 * cycle_count_sd(n))
    log_bound = (xi1 - 1) * math.lgamma(xi2 + 1) + math.lgamma(xi3 + 1) + 0.5 * xi1**2 * harmonic(xi2)
    guarantee = 2 - 1 / xi1**2 - math.exp(math.exp(math.log(15) - math.lgamma(xi1 + 2)) + 3 / xi2)
    return log_bound, guarantee


def corollary_log_bound(n: int, xi: float) -> float:
    """Log of the simplified bound obtained with ``xi1 = xi2 = xi``."""
    L = math.log(n)
    base = L + xi * math.sqrt(L) + 2
    return (0.5 * xi * math.log(2 * math.pi) + 1.5 * xi**2 * math.log(xi) + 0.5 * xi**2 + xi
            + (L + xi * math.sqrt(L) + 2.5) * math.log(base))


# ----------------------------------------------------------------------------
# CLT normalizers


@dataclass(frozen=True)
class Normalizers:
    mu_n: float
    sigma_n: float


def normalizers(n: int, theta: float) -> Normalizers:
    """``mu_n = theta sum log k / k`` and ``sigma_n^2 = theta sum log^2 k / k`` as exact partial sums."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(1, n + 1, dtype=float)
    lk = np.log(k)
    mu = float(theta) * math.fsum(lk / k)
    s2 = float(theta) * math.fsum(lk * lk / k)
    return Normalizers(mu, math.sqrt(s2))


def esf_log_b_moments(n: int, theta: float) -> Normalizers:
    """Exact mean and standard deviation of ``log B = sum_k c_k log k`` under ESF(theta).

    Uses the factorial moments ``E prod (c_j)_{m_j} = prod (theta/j)^{m_j} g(m)``
    with ``m = sum j m_j`` and ``g(m) = n!/(n-m)! * Gamma(n-m+theta)Gamma(theta+n)^{-1}``
    (zero for ``m > n``).  The pair sum is an autoconvolution evaluated by FFT.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    from scipy.special import gammaln

    th = float(theta)
    m = np.arange(0, n + 1, dtype=float)
    g = np.exp(gammaln(n + 1) - gammaln(n - m + 1) + gammaln(n - m + th) - gammaln(n + th))
    k = np.arange(1, n + 1, dtype=float)
    a = np.zeros(n + 1)
    a[1:] = th * np.log(k) / k
    mean = math.fsum(a[1:] * g[1:])
    size = 1 << int(2 * n + 1).bit_length()
    fa = np.fft.rfft(a, size)
    conv = np.fft.irfft(fa * fa, size)[: n + 1]
    second = math.fsum(a[1:] * np.log(k) * g[1:]) + math.fsum(conv * g)
    return Normalizers(mean, math.sqrt(max(second - mean * mean, 0.0)))


def asymptotic_normalizers(n: int, theta: float) -> Normalizers:
    L = math.log(n)
    return Normalizers(float(theta) / 2 * L * L, math.sqrt(float(theta) / 3 * L**3))


def phi(x):
    """Standard normal cdf (vectorized over numpy input)."""
    if isinstance(x, np.ndarray):
        from scipy.special import ndtr

        return ndtr(x)
    return 0.5 * math.erfc(-x / math.sqrt(2))


def edgeworth_term(x, n: float):
    """First-order correction to the normal cdf at ``theta = 1``."""
    if n < 3:
        raise ValueError("n must be >= 3")
    return EDGEWORTH_CONST * (1 - np.square(x)) * np.exp(-np.square(x) / 2) / math.sqrt(math.log(n))
