"""Exact integer combinatorics of involution factorizations.

A permutation with ``c_k`` cycles of length ``k`` factors as ``tau2 o tau1``
(two involutions) in

    invol = prod_k k^{c_k} * V_{c_k}(k),   V_m(k) = sum_j (m)_{2j} / ((2k)^j j!)

ways.  Everything here is exact (``int`` / ``Fraction``); the float helpers at
the bottom exist for samplers that only need ``log invol``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import permutations as _all_permutations
from typing import Iterable, Iterator, Mapping, Sequence

Permutation = tuple[int, ...]

BRUTE_FORCE_CAP = 8


class CycleTypeError(ValueError):
    """Malformed cycle type or permutation."""


@dataclass(frozen=True)
class CycleType:
    """Cycle type of a permutation of ``[n]``, stored sparsely.

    ``parts`` is a sorted tuple of ``(k, c_k)`` with ``c_k > 0``.
    """

    parts: tuple[tuple[int, int], ...]
    n: int

    def __post_init__(self):
        total = 0
        last = 0
        for k, c in self.parts:
            if not isinstance(k, int) or not isinstance(c, int):
                raise CycleTypeError(f"non-integer part ({k!r}, {c!r})")
            if k <= last or c <= 0:
                raise CycleTypeError(f"parts must be strictly increasing with positive counts: {self.parts}")
            last = k
            total += k * c
        if total != self.n:
            raise CycleTypeError(f"sum of k*c_k is {total}, expected n={self.n}")

    @classmethod
    def from_counts(cls, counts: Sequence[int], n: int | None = None) -> "CycleType":
        """``counts[k-1]`` is the number of ``k``-cycles."""
        parts = tuple((k, int(c)) for k, c in enumerate(counts, start=1) if c)
        if any(c < 0 for c in counts):
            raise CycleTypeError("negative cycle count")
        total = sum(k * c for k, c in parts)
        return cls(parts, total if n is None else n)

    @classmethod
    def from_mapping(cls, counts: Mapping[int, int], n: int | None = None) -> "CycleType":
        if any(c < 0 for c in counts.values()):
            raise CycleTypeError("negative cycle count")
        parts = tuple(sorted((int(k), int(c)) for k, c in counts.items() if c))
        total = sum(k * c for k, c in parts)
        return cls(parts, total if n is None else n)

    @classmethod
    def from_lengths(cls, lengths: Iterable[int]) -> "CycleType":
        counts: dict[int, int] = {}
        for k in lengths:
            if k < 1:
                raise CycleTypeError(f"cycle length {k} < 1")
            counts[k] = counts.get(k, 0) + 1
        return cls.from_mapping(counts)

    @classmethod
    def parse(cls, text: str) -> "CycleType":
        """Parse compact notation such as ``"1^2 3"`` or ``"5"``."""
        counts: dict[int, int] = {}
        for token in text.replace(",", " ").split():
            m = re.fullmatch(r"(\d+)(?:\^(\d+))?", token)
            if not m:
                raise CycleTypeError(f"bad cycle-type token {token!r}")
            k = int(m.group(1))
            a = int(m.group(2)) if m.group(2) is not None else 1
            if k < 1:
                raise CycleTypeError(f"cycle length {k} < 1")
            counts[k] = counts.get(k, 0) + a
        if not counts:
            raise CycleTypeError("empty cycle type")
        return cls.from_mapping(counts)

    def count(self, k: int) -> int:
        for j, c in self.parts:
            if j == k:
                return c
        return 0

    @property
    def counts(self) -> list[int]:
        dense = [0] * self.n
        for k, c in self.parts:
            dense[k - 1] = c
        return dense

    @property
    def num_cycles(self) -> int:
        return sum(c for _, c in self.parts)

    def as_dict(self) -> dict[int, int]:
        return dict(self.parts)

    def __str__(self) -> str:
        return " ".join(f"{k}^{c}" if c > 1 else str(k) for k, c in self.parts)


def _check(c: CycleType) -> CycleType:
    if not isinstance(c, CycleType):
        raise CycleTypeError(f"expected CycleType, got {type(c).__name__}")
    return c


def falling(x: int, r: int) -> int:
    out = 1
    for i in range(r):
        out *= x - i
    return out


@lru_cache(maxsize=None)
def v_factor(m: int, k: int) -> Fraction:
    """``V_m(k)``, the per-length correction factor, as an exact rational."""
    total = Fraction(0)
    for j in range(m // 2 + 1):
        total += Fraction(falling(m, 2 * j), (2 * k) ** j * math.factorial(j))
    return total


def big_b(c: CycleType) -> int:
    """Product of the cycle lengths."""
    _check(c)
    out = 1
    for k, m in c.parts:
        out *= k**m
    return out


def invol(c: CycleType) -> int:
    """Number of ordered involution pairs ``(tau1, tau2)`` with ``tau2 o tau1`` of type ``c``."""
    _check(c)
    value = Fraction(big_b(c))
    for k, m in c.parts:
        value *= v_factor(m, k)
    if value.denominator != 1:
        raise ArithmeticError(f"invol({c}) evaluated to non-integer {value}")
    return value.numerator


def hermite_ratio(m: int, k: int) -> Fraction:
    """``He_m(i sqrt k) / (i sqrt k)^m`` reduced to a rational.

    ``He_m(x) = m! sum_r (-1)^r x^{m-2r} / (r! (m-2r)! 2^r)``; dividing by
    ``x^m`` with ``x^2 = -k`` turns ``(-1)^r x^{-2r}`` into ``k^{-r}``.
    """
    total = Fraction(0)
    for r in range(m // 2 + 1):
        total += Fraction(math.factorial(m), math.factorial(r) * math.factorial(m - 2 * r) * 2**r * k**r)
    return total


def invol_hermite(c: CycleType) -> int:
    """``invol`` through the Hermite-polynomial product form."""
    _check(c)
    value = Fraction(1)
    for k, m in c.parts:
        value *= Fraction(k) ** m * hermite_ratio(m, k)
    if value.denominator != 1:
        raise ArithmeticError(f"Hermite form for {c} is not integral: {value}")
    return value.numerator


def telephone(n: int) -> int:
    """Number of involutions of ``[n]``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    a, b = 1, 1
    for i in range(2, n + 1):
        a, b = b, b + (i - 1) * a
    return b


@lru_cache(maxsize=64)
def telephone_table(n: int) -> tuple[int, ...]:
    t = [1, 1]
    for i in range(2, n + 1):
        t.append(t[-1] + (i - 1) * t[-2])
    return tuple(t[: n + 1])


def check_permutation(p: Sequence[int]) -> Permutation:
    """Validate one-line notation on ``[n]`` (1-based) and return it as a tuple."""
    p = tuple(int(x) for x in p)
    n = len(p)
    if sorted(p) != list(range(1, n + 1)):
        raise CycleTypeError(f"not a permutation of [{n}]: {p}")
    return p


def compose(b: Sequence[int], a: Sequence[int]) -> Permutation:
    """``b o a``: apply ``a`` first."""
    if len(a) != len(b):
        raise CycleTypeError("permutations act on different ground sets")
    return tuple(b[x - 1] for x in a)


def is_involution(p: Sequence[int]) -> bool:
    return all(p[p[i] - 1] == i + 1 for i in range(len(p)))


def cycle_type_of(p: Sequence[int]) -> CycleType:
    p = check_permutation(p)
    n = len(p)
    seen = [False] * n
    lengths = []
    for start in range(n):
        if seen[start]:
            continue
        length = 0
        x = start
        while not seen[x]:
            seen[x] = True
            x = p[x] - 1
            length += 1
        lengths.append(length)
    if n == 0:
        return CycleType((), 0)
    return CycleType.from_lengths(lengths)


def involutions(n: int) -> Iterator[Permutation]:
    """All involutions of ``[n]`` in one-line notation."""

    def rec(free: list[int], img: list[int]):
        if not free:
            yield tuple(img)
            return
        x, rest = free[0], free[1:]
        img[x - 1] = x
        yield from rec(rest, img)
        for i, y in enumerate(rest):
            img[x - 1], img[y - 1] = y, x
            yield from rec(rest[:i] + rest[i + 1 :], img)
        img[x - 1] = 0

    yield from rec(list(range(1, n + 1)), [0] * n)


def brute_force_invol(p: Sequence[int], cap: int = BRUTE_FORCE_CAP) -> int:
    """Count involution factorizations of ``p`` by enumeration."""
    p = check_permutation(p)
    n = len(p)
    if n > cap:
        raise ValueError(
            f"brute force refused for n={n} > cap={cap}: it enumerates {telephone(n)} involutions; raise cap to override"
        )
    count = 0
    for t1 in involutions(n):
        if is_involution(compose(p, t1)):
            count += 1
    return count


def partitions(n: int, largest: int | None = None) -> Iterator[tuple[int, ...]]:
    """Partitions of ``n`` as non-increasing tuples."""
    if largest is None:
        largest = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in partitions(n - first, first):
            yield (first,) + rest


def class_size(c: CycleType) -> int:
    denom = 1
    for k, m in c.parts:
        denom *= k**m * math.factorial(m)
    return math.factorial(c.n) // denom


def enumerate_cycle_types(n: int) -> Iterator[tuple[CycleType, int]]:
    """Every cycle type of ``S_n`` with its conjugacy-class size."""
    if n < 1:
        raise ValueError("n must be positive")
    for lam in partitions(n):
        c = CycleType.from_lengths(lam)
        yield c, class_size(c)


def permutation_of_type(c: CycleType) -> Permutation:
    """A representative permutation with cycle type ``c`` (consecutive blocks)."""
    img = []
    start = 1
    for k, m in c.parts:
        for _ in range(m):
            block = list(range(start, start + k))
            img.extend(block[1:] + block[:1])
            start += k
    return tuple(img)


def all_permutations(n: int) -> Iterator[Permutation]:
    return _all_permutations(range(1, n + 1))


# float helpers used by the samplers

@lru_cache(maxsize=None)
def log_v_factor(m: int, k: int) -> float:
    """``log V_m(k)`` in double precision, safe for large ``m``."""
    if m < 2:
        return 0.0
    logs = [
        math.lgamma(m + 1) - math.lgamma(m - 2 * j + 1) - j * math.log(2 * k) - math.lgamma(j + 1)
        for j in range(m // 2 + 1)
    ]
    top = max(logs)
    return top + math.log(math.fsum(math.exp(x - top) for x in logs))


def log_invol(counts: Mapping[int, int] | CycleType) -> float:
    """``log invol`` from a sparse count mapping (no validation of ``sum k c_k``)."""
    items = counts.parts if isinstance(counts, CycleType) else counts.items()
    return math.fsum(c * math.log(k) + log_v_factor(c, k) for k, c in items if c)


def log_big_b(counts: Mapping[int, int] | CycleType) -> float:
    items = counts.parts if isinstance(counts, CycleType) else counts.items()
    return math.fsum(c * math.log(k) for k, c in items if c)
