"""Truncated power series and the generating functions for the moments of invol.

Two coefficient domains are supported:

``"rational"``
    ``fractions.Fraction``; everything is exact modulo ``z^(N+1)``.
``"real"``
    ``mpmath.mpf`` at ``prec`` bits (default 192), for orders far beyond what
    exact rationals can carry.

The generating functions are

* ``F(z) = exp(theta z/(1-z)) (1-z^2)^(-theta^2/2)``, with ``E_n invol = n!/theta^(n) [z^n] F``;
* ``G(z) = prod_k (1-theta^2 z^(2k))^(-1/2) exp(theta k z^k/(1-theta z^k))`` for the second moment;
* ``F(u, z) = exp(u z/(1-z) + u^2/2 log 1/(1-z^2))`` for uniform permutations split by cycle count.

Each has a second, independent construction (``method=...``) used for cross-checks and for
large orders: a three-term recurrence for ``F`` and ``F(u, z)``, and the exp-log form for ``G``.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath
from mpmath import mp, mpf

from .esf import as_params, rising
from .perm_core import enumerate_cycle_types, invol

DEFAULT_PREC = 192
DOMAINS = ("rational", "real")


class SeriesDomainError(ValueError):
    """Operation not defined for this constant term or domain."""


def _coerce(x, domain: str):
    if domain == "rational":
        if isinstance(x, float):
            raise SeriesDomainError("float coefficient in rational domain")
        return Fraction(x)
    if isinstance(x, Fraction):
        return mpf(x.numerator) / x.denominator
    return mpf(x)


class TruncatedSeries:
    """Power series ``c_0 + c_1 z + ... + c_N z^N`` modulo ``z^(N+1)``."""

    __slots__ = ("coeffs", "domain", "prec")

    def __init__(self, coeffs: Iterable, domain: str = "rational", prec: int = DEFAULT_PREC):
        if domain not in DOMAINS:
            raise SeriesDomainError(f"unknown domain {domain!r}")
        self.domain = domain
        self.prec = prec
        with mp.workprec(prec):
            self.coeffs = [_coerce(c, domain) for c in coeffs]
        if not self.coeffs:
            raise SeriesDomainError("a series needs at least one coefficient")

    @classmethod
    def zeros(cls, N: int, domain: str = "rational", prec: int = DEFAULT_PREC) -> "TruncatedSeries":
        return cls([0] * (N + 1), domain, prec)

    @classmethod
    def monomial(cls, k: int, N: int, coeff=1, domain: str = "rational", prec: int = DEFAULT_PREC):
        c = [0] * (N + 1)
        if k <= N:
            c[k] = coeff
        return cls(c, domain, prec)

    @property
    def N(self) -> int:
        return len(self.coeffs) - 1

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]

    def __repr__(self):
        head = ", ".join(str(c) for c in self.coeffs[:6])
        return f"TruncatedSeries([{head}{', ...' if self.N > 5 else ''}], N={self.N}, domain={self.domain!r})"

    def _new(self, coeffs) -> "TruncatedSeries":
        out = object.__new__(TruncatedSeries)
        out.coeffs, out.domain, out.prec = list(coeffs), self.domain, self.prec
        return out

    def _other(self, other) -> "TruncatedSeries":
        if isinstance(other, TruncatedSeries):
            if other.domain != self.domain:
                raise SeriesDomainError("mixed-domain arithmetic")
            return other
        return self._new([_coerce(other, self.domain)] + [self.coeffs[0] * 0] * self.N)

    def truncate(self, N: int) -> "TruncatedSeries":
        if N <= self.N:
            return self._new(self.coeffs[: N + 1])
        return self._new(self.coeffs + [self.coeffs[0] * 0] * (N - self.N))

    def __add__(self, other):
        other = self._other(other)
        N = min(self.N, other.N)
        with mp.workprec(self.prec):
            return self._new([a + b for a, b in zip(self.coeffs[: N + 1], other.coeffs)])

    __radd__ = __add__

    def __neg__(self):
        return self._new([-a for a in self.coeffs])

    def __sub__(self, other):
        return self + (-self._other(other))

    def __rsub__(self, other):
        return self._other(other) - self

    def scale(self, s) -> "TruncatedSeries":
        s = _coerce(s, self.domain)
        with mp.workprec(self.prec):
            return self._new([s * a for a in self.coeffs])

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return self.scale(other)
        other = self._other(other)
        N = min(self.N, other.N)
        a, b = self.coeffs, other.coeffs
        nz_b = [(j, b[j]) for j in range(N + 1) if b[j]]
        with mp.workprec(self.prec):
            out = [a[0] * 0] * (N + 1)
            if len(nz_b) * 4 < N + 1:
                for j, bj in nz_b:
                    for i in range(N + 1 - j):
                        if a[i]:
                            out[i + j] += a[i] * bj
            else:
                for n in range(N + 1):
                    acc = a[0] * 0
                    for i in range(n + 1):
                        acc += a[i] * b[n - i]
                    out[n] = acc
        return self._new(out)

    __rmul__ = __mul__

    def derivative(self) -> "TruncatedSeries":
        """Derivative; the result has order ``N - 1``."""
        if self.N == 0:
            return self._new([self.coeffs[0] * 0])
        return self._new([k * self.coeffs[k] for k in range(1, self.N + 1)])

    def substitute_power(self, k: int, N: int | None = None) -> "TruncatedSeries":
        """``s(z^k)`` truncated at order ``N`` (default: ``k * self.N``)."""
        if N is None:
            N = k * self.N
        out = [self.coeffs[0] * 0] * (N + 1)
        for i, c in enumerate(self.coeffs):
            if i * k > N:
                break
            out[i * k] = c
        return self._new(out)

    def exp(self) -> "TruncatedSeries":
        s = self.coeffs
        with mp.workprec(self.prec):
            if s[0]:
                if self.domain == "rational":
                    raise SeriesDomainError("exp needs a zero constant term in the rational domain")
                g0 = mpmath.exp(s[0])
            else:
                g0 = _coerce(1, self.domain)
            ks = [k * s[k] for k in range(self.N + 1)]
            g = [g0]
            for n in range(1, self.N + 1):
                acc = _dot(ks[1 : n + 1], g[n - 1 :: -1], self.domain)
                g.append(acc / n)
        return self._new(g)

    def log(self) -> "TruncatedSeries":
        s = self.coeffs
        if s[0] != 1:
            raise SeriesDomainError("log needs constant term 1")
        with mp.workprec(self.prec):
            kl = [s[0] * 0]
            for n in range(1, self.N + 1):
                acc = _dot(kl[1:n], s[n - 1 : 0 : -1], self.domain) if n > 1 else 0
                kl.append(n * s[n] - acc)
            out = [s[0] * 0] + [kl[n] / n for n in range(1, self.N + 1)]
        return self._new(out)

    def pow(self, r) -> "TruncatedSeries":
        """``s^r`` for rational (or, in the real domain, real) ``r``; needs ``s_0 = 1``."""
        s = self.coeffs
        if s[0] != 1:
            raise SeriesDomainError("pow needs constant term 1")
        r = _coerce(r, self.domain)
        with mp.workprec(self.prec):
            p = [s[0]]
            for n in range(1, self.N + 1):
                acc = s[0] * 0
                for k in range(1, n + 1):
                    if s[k]:
                        acc += (r * k - (n - k)) * s[k] * p[n - k]
                p.append(acc / n)
        return self._new(p)

    def to_float(self) -> list[float]:
        return [float(c) for c in self.coeffs]

    def to_csv(self, start: int = 0) -> str:
        """CSV table: ``index,numerator,denominator`` (rational) or ``index,value`` (real)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.domain == "rational":
            w.writerow(["index", "numerator", "denominator"])
            for i in range(start, self.N + 1):
                c = self.coeffs[i]
                w.writerow([i, c.numerator, c.denominator])
        else:
            w.writerow(["index", "value"])
            for i in range(start, self.N + 1):
                w.writerow([i, mpmath.nstr(self.coeffs[i], 40)])
        return buf.getvalue()


def _dot(xs: Sequence, ys: Sequence, domain: str):
    if domain == "real":
        return mpmath.fdot(xs, ys)
    acc = Fraction(0)
    for x, y in zip(xs, ys):
        if x and y:
            acc += x * y
    return acc


def _theta(params, domain: str):
    p = as_params(params)
    return p.exact if domain == "rational" else _coerce(p.theta, "real")


def geometric_tail(N: int, domain: str = "rational", prec: int = DEFAULT_PREC) -> TruncatedSeries:
    """``z/(1-z)``."""
    return TruncatedSeries([0] + [1] * N, domain, prec)


def log_one_minus_z2_inv(N: int, domain: str = "rational", prec: int = DEFAULT_PREC) -> TruncatedSeries:
    """``log 1/(1-z^2) = sum_j z^(2j)/j``."""
    c = [Fraction(0)] * (N + 1)
    for j in range(1, N // 2 + 1):
        c[2 * j] = Fraction(1, j)
    return TruncatedSeries(c, domain, prec)


# ----------------------------------------------------------------------------
# F(z): mean


def build_F(params, N: int, domain: str = "rational", method: str = "product",
            prec: int = DEFAULT_PREC) -> TruncatedSeries:
    """Coefficients of ``F(z)`` to order ``N``.

    ``method="product"`` multiplies ``exp(theta z/(1-z))`` by the binomial series
    of ``(1-z^2)^(-theta^2/2)``; ``method="recurrence"`` uses

        (n+1) f_{n+1} = (n+theta) f_n + (n-1+theta+theta^2) f_{n-1} - (n-2+theta^2) f_{n-2},

    which follows from ``(1-z)(1-z^2) F' = (theta(1+z) + theta^2 z(1-z)) F`` and costs O(N).
    """
    with mp.workprec(prec):
        th = _theta(params, domain)
        if method == "product":
            e = geometric_tail(N, domain, prec).scale(th).exp()
            one_minus_z2 = TruncatedSeries([1, 0, -1] + [0] * (N - 2), domain, prec) if N >= 2 else \
                TruncatedSeries([1] + [0] * N, domain, prec)
            return e * one_minus_z2.pow(-th * th / 2)
        if method == "recurrence":
            one = _coerce(1, domain)
            f = [one, th * one][: N + 1]
            t2 = th * th
            for n in range(1, N):
                fm2 = f[n - 2] if n >= 2 else 0 * one
                f.append(((n + th) * f[n] + (n - 1 + th + t2) * f[n - 1] - (n - 2 + t2) * fm2) / (n + 1))
            return TruncatedSeries(f, domain, prec) if domain == "rational" else _wrap_real(f, prec)
    raise ValueError(f"unknown method {method!r}")


def _wrap_real(coeffs, prec) -> TruncatedSeries:
    out = object.__new__(TruncatedSeries)
    out.coeffs, out.domain, out.prec = list(coeffs), "real", prec
    return out


def _normalize(n: int, coeff, params, domain: str, prec: int):
    if domain == "rational":
        th = as_params(params).exact
        return Fraction(math.factorial(n)) / rising(th, n) * coeff
    with mp.workprec(prec):
        th = _theta(params, "real")
        return mpmath.exp(mpmath.loggamma(n + 1) + mpmath.loggamma(th) - mpmath.loggamma(th + n)) * coeff


def mean_invol_exact(n: int, params) -> Fraction:
    """``E_n invol`` under ESF(theta), exactly."""
    F = build_F(params, n, "rational", "product")
    return _normalize(n, F[n], params, "rational", DEFAULT_PREC)


def mean_invol_real(n: int, params, prec: int = DEFAULT_PREC) -> mpf:
    """``E_n invol`` in extended precision via the O(n) recurrence."""
    F = build_F(params, n, "real", "recurrence", prec)
    return _normalize(n, F[n], params, "real", prec)


# ----------------------------------------------------------------------------
# G(z): second moment


def build_G(params, N: int, domain: str = "rational", method: str = "product",
            prec: int = DEFAULT_PREC) -> TruncatedSeries:
    """Coefficients of ``G(z)`` to order ``N``.

    ``method="product"`` multiplies the factors ``k = 1..N`` (factor ``k`` is
    ``1 + O(z^k)``, so the tail past ``N`` is invisible).  ``method="explog"``
    exponentiates ``log G`` whose coefficients are divisor sums:
    ``[z^m] log G = sum_{l|m} theta^l m/l + [m even] sum_{l|m/2} theta^(2l)/(2l)``.
    """
    with mp.workprec(prec):
        th = _theta(params, domain)
        if method == "product":
            result = TruncatedSeries.monomial(0, N, 1, domain, prec)
            for k in range(1, N + 1):
                M = N // k
                # (1 - theta^2 w^2)^(-1/2)
                base = TruncatedSeries([1] + [0] * M, domain, prec)
                if M >= 2:
                    base.coeffs[2] = -th * th
                root = base.pow(Fraction(-1, 2) if domain == "rational" else mpf(-0.5))
                # exp(k theta w / (1 - theta w)) = exp(k sum_j (theta w)^j)
                geo = TruncatedSeries([0] + [k * th**j for j in range(1, M + 1)], domain, prec)
                factor = (root * geo.exp()).substitute_power(k, N)
                result = result * factor
            return result
        if method == "explog":
            return log_G_series(params, N, domain, prec).exp()
    raise ValueError(f"unknown method {method!r}")


def log_G_series(params, N: int, domain: str = "rational", prec: int = DEFAULT_PREC) -> TruncatedSeries:
    with mp.workprec(prec):
        th = _theta(params, domain)
        zero = _coerce(0, domain)
        L = [zero] * (N + 1)
        powers = [_coerce(1, domain)]
        for _ in range(N):
            powers.append(powers[-1] * th)
        for l in range(1, N + 1):
            for m in range(l, N + 1, l):
                L[m] += powers[l] * (m // l)
        for l in range(1, N // 2 + 1):
            term = powers[2 * l] / (2 * l)
            for m in range(2 * l, N + 1, 2 * l):
                L[m] += term
        return TruncatedSeries(L, domain, prec) if domain == "rational" else _wrap_real(L, prec)


def second_moment_exact(n: int, params) -> Fraction:
    """``E_n invol^2`` under ESF(theta), exactly."""
    G = build_G(params, n, "rational", "product")
    return _normalize(n, G[n], params, "rational", DEFAULT_PREC)


def second_moment_real(n: int, params, prec: int = DEFAULT_PREC) -> mpf:
    G = build_G(params, n, "real", "explog", prec)
    return _normalize(n, G[n], params, "real", prec)


# ----------------------------------------------------------------------------
# partition-sum oracles


def partition_moment(n: int, params, power: int = 1) -> Fraction:
    """``sum_types P(type) invol(type)^power`` by enumerating cycle types."""
    from .esf import esf_pmf

    return sum((esf_pmf(c, params) * invol(c) ** power for c, _ in enumerate_cycle_types(n)), Fraction(0))


# ----------------------------------------------------------------------------
# bivariate F(u, z)


class BivariateTruncated:
    """Exact grid ``a[m][n] = [u^m z^n]`` for ``m <= M``, ``n <= N``."""

    def __init__(self, grid: list[list[Fraction]]):
        self.grid = grid

    @property
    def M(self) -> int:
        return len(self.grid) - 1

    @property
    def N(self) -> int:
        return len(self.grid[0]) - 1

    def __getitem__(self, mn):
        m, n = mn
        return self.grid[m][n]

    def vertical(self, m: int) -> TruncatedSeries:
        return TruncatedSeries(self.grid[m])

    def column(self, n: int) -> list[Fraction]:
        return [row[n] for row in self.grid]


def build_F_bivariate(M: int, N: int, method: str = "recurrence") -> BivariateTruncated:
    """Exact ``[u^m z^n] F(u, z)`` for ``m <= M``, ``n <= N``.

    ``"recurrence"`` runs the ``F`` recurrence with ``theta`` replaced by the
    polynomial variable ``u``; ``"exp"`` exponentiates ``u z/(1-z) + u^2/2 log 1/(1-z^2)``
    coefficientwise in ``z`` (each coefficient a polynomial in ``u``).
    """
    zero_poly = [Fraction(0)] * (M + 1)

    def add(*terms):
        out = list(zero_poly)
        for coef, poly in terms:
            for i, c in enumerate(poly):
                if c:
                    out[i] += coef * c
        return out

    def shift(poly, d, coef=1):
        out = list(zero_poly)
        for i in range(M + 1 - d):
            out[i + d] += coef * poly[i]
        return out

    if method == "recurrence":
        one = list(zero_poly)
        one[0] = Fraction(1)
        f = [one]
        if N >= 1:
            f.append(shift(one, 1))
        for n in range(1, N):
            fm2 = f[n - 2] if n >= 2 else zero_poly
            # (n+u) f_n + (n-1+u+u^2) f_{n-1} - (n-2+u^2) f_{n-2}
            nxt = add((n, f[n]), (1, shift(f[n], 1)),
                      (n - 1, f[n - 1]), (1, shift(f[n - 1], 1)), (1, shift(f[n - 1], 2)),
                      (-(n - 2), fm2), (-1, shift(fm2, 2)))
            f.append([c / (n + 1) for c in nxt])
    elif method == "exp":
        # S(z) with polynomial-in-u coefficients
        S = [zero_poly]
        for k in range(1, N + 1):
            s = list(zero_poly)
            if M >= 1:
                s[1] = Fraction(1)
            if k % 2 == 0 and M >= 2:
                s[2] = Fraction(1, k)  # (1/2) * 1/(k/2)
            S.append(s)
        one = list(zero_poly)
        one[0] = Fraction(1)
        f = [one]
        for n in range(1, N + 1):
            acc = list(zero_poly)
            for k in range(1, n + 1):
                sk, fk = S[k], f[n - k]
                for i, a in enumerate(sk):
                    if a:
                        for j in range(M + 1 - i):
                            if fk[j]:
                                acc[i + j] += k * a * fk[j]
            f.append([c / n for c in acc])
    else:
        raise ValueError(f"unknown method {method!r}")
    grid = [[f[n][m] for n in range(N + 1)] for m in range(M + 1)]
    return BivariateTruncated(grid)


def vertical_series(m: int, N: int) -> TruncatedSeries:
    """``[u^m] F(u, z)`` from the closed form

        sum_{k=ceil(m/2)}^{m} C(k, m-k) / (k! 2^(m-k)) (z/(1-z))^(2k-m) log^(m-k) 1/(1-z^2).
    """
    if m == 0:
        return TruncatedSeries.monomial(0, N, 1)
    g = geometric_tail(N)
    lg = log_one_minus_z2_inv(N)
    total = TruncatedSeries.zeros(N)
    for k in range((m + 1) // 2, m + 1):
        coef = Fraction(math.comb(k, m - k), math.factorial(k) * 2 ** (m - k))
        term = TruncatedSeries.monomial(0, N, 1)
        for _ in range(2 * k - m):
            term = term * g
        for _ in range(m - k):
            term = term * lg
        total = total + term.scale(coef)
    return total


def bivariate_direct(m: int, n: int) -> Fraction:
    """``[u^m z^n] F(u, z)`` straight from its definition: ``sum_{K=m} invol / n!``."""
    total = 0
    for c, size in enumerate_cycle_types(n):
        if c.num_cycles == m:
            total += size * invol(c)
    return Fraction(total, math.factorial(n))


def stirling1(n: int, m: int) -> int:
    """Unsigned Stirling number of the first kind ``[n m]``."""
    if not 0 <= m <= n:
        return 0
    row = [1] + [0] * m  # row for n = 0
    for i in range(1, n + 1):
        new = [0] * (m + 1)
        for j in range(1, min(i, m) + 1):
            new[j] = row[j - 1] + (i - 1) * row[j]
        row = new
    return row[m]


def conditional_mean_given_cycles(n: int, m: int, grid: BivariateTruncated | None = None) -> Fraction:
    """``E_n(invol | K = m)``; by sufficiency of ``K`` this holds for every theta."""
    if not 1 <= m <= n:
        raise ValueError(f"m={m} outside 1..n={n}")
    if grid is None or grid.M < m or grid.N < n:
        grid = build_F_bivariate(m, n)
    return grid[m, n] * math.factorial(n) / stirling1(n, m)


def conditional_mean_oracle(n: int, m: int) -> Fraction:
    num = den = 0
    for c, size in enumerate_cycle_types(n):
        if c.num_cycles == m:
            num += size * invol(c)
            den += size
    return Fraction(num, den)


# ----------------------------------------------------------------------------
# membership in P_xi


def membership_series(params, xi, N: int) -> TruncatedSeries:
    """Series whose ``n``-th coefficient times ``n!/theta^(n)`` is ``P_n(sigma in P_xi)``.

    ``P_xi``: lengths ``k <= xi`` appear at most ``floor(xi)`` times, longer lengths at most once.
    """
    th = as_params(params).exact
    x = math.floor(xi)
    if x < 1:
        raise ValueError("xi must be >= 1")
    result = TruncatedSeries.monomial(0, N, 1)
    for k in range(1, N + 1):
        M = N // k
        cap = x if k <= x else 1
        w = th / k
        poly = [Fraction(0)] * (M + 1)
        term = Fraction(1)
        for j in range(min(cap, M) + 1):
            poly[j] = term
            term = term * w / (j + 1)
        result = result * TruncatedSeries(poly).substitute_power(k, N)
    return result


def membership_probability(n: int, params, xi) -> Fraction:
    S = membership_series(params, xi, n)
    return _normalize(n, S[n], params, "rational", DEFAULT_PREC)


def in_membership_set(counts: dict[int, int], xi) -> bool:
    x = math.floor(xi)
    return all(c <= (x if k <= x else 1) for k, c in counts.items())


def membership_oracle(n: int, params, xi) -> Fraction:
    from .esf import esf_pmf

    return sum((esf_pmf(c, params) for c, _ in enumerate_cycle_types(n) if in_membership_set(c.as_dict(), xi)),
               Fraction(0))


# ----------------------------------------------------------------------------
# composition of two uniform involutions


def composed_cycle_mean(n: int, k: int, domain: str = "rational", prec: int = DEFAULT_PREC):
    """``E c_k(tau2 o tau1)`` for independent uniform involutions of ``[n]``.

    Weighting by ``invol`` and marking ``k``-cycles in ``F`` (theta = 1) gives
    ``(f_{n-k} + f_{n-2k}/k) / f_n``; the limit as ``n -> inf`` is ``1 + 1/k``.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    F = build_F(1, n, domain, "recurrence", prec)
    with mp.workprec(prec):
        tail = F[n - 2 * k] / k if n >= 2 * k else 0
        return (F[n - k] + tail) / F[n]
