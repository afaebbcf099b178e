"""Ewens Sampling Formula: exact probabilities, the Feller coupling and samplers.

Conventions
-----------
* Permutations are 1-based one-line tuples; ``compose_involutions(a, b)`` is
  ``b o a`` (``a`` is applied first).
* In the Feller coupling ``beta_1 = 1`` always, ``P(beta_j = 1) = theta/(theta+j-1)``.
  ``C^(n)`` counts spacings of ``1 beta_2 ... beta_n 1`` and ``Z_0`` counts spacings
  of ``beta_1 beta_2 ... beta_M``; spacings still open at the horizon ``M`` are dropped.
* Random streams come from ``numpy.random.Philox`` keyed by ``(seed, stream)``,
  so any chunk of any experiment can be replayed on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.special import gammaln

from .perm_core import (
    CycleType,
    CycleTypeError,
    Permutation,
    check_permutation,
    compose,
    is_involution,
    telephone_table,
)

EXACT_FELLER_CAP = 12


def parse_theta(value) -> Fraction | float:
    """``"p/q"``, ints and Fractions become exact; floats stay real."""
    if isinstance(value, (Fraction, int)):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    return float(value)


@dataclass(frozen=True)
class ESFParams:
    theta: Fraction | float

    def __post_init__(self):
        theta = parse_theta(self.theta)
        if not theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        object.__setattr__(self, "theta", theta)

    @property
    def exact(self) -> Fraction:
        if not isinstance(self.theta, Fraction):
            raise TypeError(f"theta={self.theta!r} is real-valued; exact computations need a rational")
        return self.theta

    @property
    def real(self) -> float:
        return float(self.theta)


def as_params(theta) -> ESFParams:
    return theta if isinstance(theta, ESFParams) else ESFParams(theta)


def rising(theta, n: int):
    out = Fraction(1) if isinstance(theta, Fraction) else 1
    for j in range(n):
        out *= theta + j
    return out


def esf_pmf(c: CycleType, params) -> Fraction:
    """``P_{theta,n}(cycle type = c)``, exactly."""
    if not isinstance(c, CycleType):
        raise CycleTypeError(f"expected CycleType, got {type(c).__name__}")
    theta = as_params(params).exact
    n = c.n
    value = Fraction(math.factorial(n)) / rising(theta, n)
    for k, m in c.parts:
        value *= (theta / k) ** m / math.factorial(m)
    return value


# ----------------------------------------------------------------------------
# random streams


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream)``; identical inputs give identical draws."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


# ----------------------------------------------------------------------------
# single Feller samples


@dataclass
class SpacingSample:
    """One realization of the Feller coupling up to the horizon."""

    n: int
    horizon: int
    ones: np.ndarray  # positions j <= horizon with beta_j = 1, increasing, starts at 1
    c: CycleType = field(init=False)
    z: dict[int, int] = field(init=False)

    def __post_init__(self):
        self.ones = np.asarray(self.ones, dtype=np.int64)
        self.c = CycleType.from_mapping(_spacing_counts(self.cycle_spacings()), self.n)
        self.z = _spacing_counts(np.diff(self.ones))

    def cycle_spacings(self) -> np.ndarray:
        head = self.ones[self.ones <= self.n]
        return np.diff(np.append(head, self.n + 1))

    @property
    def left(self) -> int:
        """``L_n``: distance back from ``n+1`` to the last success at or before ``n``."""
        return int(self.n + 1 - self.ones[self.ones <= self.n][-1])

    @property
    def right(self) -> int | None:
        """``R_n``: distance from ``n`` to the first success after it, or ``None`` past the horizon."""
        after = self.ones[self.ones > self.n]
        return int(after[0] - self.n) if after.size else None

    @property
    def z_tail(self) -> dict[int, int]:
        """``Z_{k,n}``: spacings of ``beta_{n+1} beta_{n+2} ...`` (truncated at the horizon)."""
        return _spacing_counts(np.diff(self.ones[self.ones > self.n]))

    def sandwich_violations(self) -> list[int]:
        """Lengths ``k <= n`` at which the coupling sandwich inequality fails."""
        L, R = self.left, self.right
        zt = self.z_tail
        keys = set(self.c.as_dict()) | set(self.z) | set(zt) | {L}
        if R is not None:
            keys.add(L + R - 1)
        bad = []
        for k in sorted(x for x in keys if x <= self.n):
            ck = self.c.count(k)
            z0 = self.z.get(k, 0)
            lower = z0 - zt.get(k, 0) - (1 if R is not None and L + R == k + 1 else 0)
            upper = z0 + (1 if L == k else 0)
            if not lower <= ck <= upper:
                bad.append(k)
        return bad


def _spacing_counts(spacings) -> dict[int, int]:
    ks, cs = np.unique(np.asarray(spacings, dtype=np.int64), return_counts=True)
    return {int(k): int(c) for k, c in zip(ks, cs)}


def _bernoulli_ones_exact(theta: Fraction, horizon: int, rng: np.random.Generator) -> np.ndarray:
    scale = 1 << 62
    p, q = theta.numerator, theta.denominator
    ones = [1]
    for j in range(2, horizon + 1):
        u = int(rng.integers(0, scale, dtype=np.int64))
        if u * (p + (j - 1) * q) < scale * p:
            ones.append(j)
    return np.array(ones, dtype=np.int64)


def feller_sample(n: int, params, horizon_factor: int = 4, seed: int = 0, stream: int = 0,
                  exact: bool = False) -> SpacingSample:
    """Draw ``beta_2 ... beta_M`` directly (``M = horizon_factor * n``).

    ``exact=True`` compares a 62-bit uniform integer against the rational
    success probability; it needs a rational theta and is meant for small n.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if horizon_factor < 1:
        raise ValueError("horizon_factor must be >= 1")
    params = as_params(params)
    horizon = int(horizon_factor) * n
    rng = make_rng(seed, stream)
    if exact:
        ones = _bernoulli_ones_exact(params.exact, horizon, rng)
    else:
        theta = params.real
        j = np.arange(2, horizon + 1)
        hits = rng.random(horizon - 1) < theta / (theta + j - 1)
        ones = np.concatenate(([1], j[hits]))
    return SpacingSample(n, horizon, ones)


# ----------------------------------------------------------------------------
# batched Feller coupling by jumping between successes


@dataclass
class SpacingBatch:
    """Many Feller realizations, with success positions stored CSR-style.

    ``ones[offsets[i]:offsets[i+1]]`` are the success positions of sample ``i``.
    """

    horizon: int
    ones: np.ndarray
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return len(self.offsets) - 1

    def sample_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.size), np.diff(self.offsets))

    def sample(self, i: int, n: int) -> SpacingSample:
        return SpacingSample(n, self.horizon, self.ones[self.offsets[i]:self.offsets[i + 1]])

    def _pairs(self):
        sid = self.sample_ids()
        same = sid[1:] == sid[:-1]
        return sid[:-1][same], self.ones[:-1][same], self.ones[1:][same]

    def cycle_entries(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``(sample_id, k)`` for every spacing of ``1 beta_2 ... beta_n 1``."""
        if n > self.horizon:
            raise ValueError(f"n={n} beyond horizon {self.horizon}")
        sid = self.sample_ids()
        keep = self.ones <= n
        s, pos = sid[keep], self.ones[keep]
        nxt = np.empty_like(pos)
        nxt[:-1] = pos[1:]
        last = np.ones(len(pos), dtype=bool)
        last[:-1] = s[1:] != s[:-1]
        nxt[last] = n + 1
        return s, nxt - pos

    def z_entries(self, start: int = 0, horizon: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Spacings of ``beta_{start+1} beta_{start+2} ...`` closed by ``horizon``."""
        s, a, b = self._pairs()
        keep = a > start
        if horizon is not None:
            keep &= b <= horizon
        return s[keep], (b - a)[keep]

    def left_right(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``L_n`` and ``R_n`` per sample; ``R_n = 0`` marks no success up to the horizon."""
        sid = self.sample_ids()
        before = self.ones <= n
        last_before = np.zeros(self.size, dtype=np.int64)
        np.maximum.at(last_before, sid[before], self.ones[before])
        first_after = np.full(self.size, np.iinfo(np.int64).max)
        after = ~before
        np.minimum.at(first_after, sid[after], self.ones[after])
        right = np.where(first_after == np.iinfo(np.int64).max, 0, first_after - n)
        return n + 1 - last_before, right


def _log_survival_base(m, theta):
    return gammaln(m) - gammaln(m + theta)


def feller_batch(size: int, theta: float, horizon: int, rng: np.random.Generator) -> SpacingBatch:
    """Draw ``size`` independent Feller sequences up to ``horizon``.

    Instead of ``horizon`` Bernoulli trials per sample this jumps from one
    success to the next: ``P(no success in j+1..m) = Gamma(m)Gamma(j+theta) /
    (Gamma(j)Gamma(m+theta))`` is inverted by integer bisection.
    """
    theta = float(theta)
    pos = np.ones(size, dtype=np.int64)
    rows = [pos.copy()]
    alive = np.arange(size)
    while alive.size:
        j = pos[alive]
        u = rng.random(alive.size)
        target = np.log(u) + _log_survival_base(j.astype(float), theta)
        # find the smallest m > j with log_survival_base(m) < target
        lo = j.copy()
        guess = np.exp(np.minimum(-target / theta, math.log(horizon + 1.0)))
        hi = np.clip(np.ceil(2.0 * guess).astype(np.int64) + 2, j + 1, horizon + 1)
        while True:
            ok = (_log_survival_base(hi.astype(float), theta) < target) | (hi >= horizon + 1)
            if ok.all():
                break
            lo = np.where(ok, lo, hi)
            hi = np.where(ok, hi, np.minimum(2 * hi, horizon + 1))
        beyond = _log_survival_base(hi.astype(float), theta) >= target  # only possible at the cap
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            below = _log_survival_base(mid.astype(float), theta) < target
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        nxt = np.where(beyond, horizon + 1, hi)
        full = np.full(size, horizon + 1, dtype=np.int64)
        full[alive] = nxt
        rows.append(full)
        pos[alive] = nxt
        alive = alive[nxt <= horizon]
    mat = np.stack(rows, axis=1)
    valid = mat <= horizon
    counts = valid.sum(axis=1)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return SpacingBatch(horizon, mat[valid], offsets)


def feller_batch_direct(size: int, theta: float, horizon: int, rng: np.random.Generator) -> SpacingBatch:
    """Reference batch sampler drawing every Bernoulli trial (small horizons only)."""
    j = np.arange(2, horizon + 1)
    hits = rng.random((size, horizon - 1)) < theta / (theta + j - 1)
    parts, counts = [], []
    for row in hits:
        ones = np.concatenate(([1], j[row]))
        parts.append(ones)
        counts.append(len(ones))
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return SpacingBatch(horizon, np.concatenate(parts).astype(np.int64), offsets)


def sparse_counts(sid: np.ndarray, k: np.ndarray, kmax: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse ``(sample_id, k)`` entries into sorted ``(sample_id, k, count)`` triplets."""
    key = sid.astype(np.int64) * (kmax + 1) + k
    uniq, cnt = np.unique(key, return_counts=True)
    return uniq // (kmax + 1), uniq % (kmax + 1), cnt


# ----------------------------------------------------------------------------
# exact distribution of C^(n) under the coupling


def exact_feller_distribution(n: int, params) -> dict[CycleType, Fraction]:
    """Enumerate all ``beta_2..beta_n`` patterns and push their probabilities forward."""
    if n < 1:
        raise ValueError("n must be positive")
    if n > EXACT_FELLER_CAP:
        raise ValueError(f"exact enumeration refused for n={n} > {EXACT_FELLER_CAP} (2^(n-1) patterns)")
    theta = as_params(params).exact
    probs = [theta / (theta + j - 1) for j in range(2, n + 1)]
    out: dict[CycleType, Fraction] = {}
    for pattern in product((0, 1), repeat=n - 1):
        w = Fraction(1)
        ones = [1]
        for j, (b, p) in enumerate(zip(pattern, probs), start=2):
            w *= p if b else 1 - p
            if b:
                ones.append(j)
        ones.append(n + 1)
        c = CycleType.from_lengths(b - a for a, b in zip(ones, ones[1:]))
        out[c] = out.get(c, Fraction(0)) + w
    return out


# ----------------------------------------------------------------------------
# involutions


def sample_uniform_involution(n: int, seed: int = 0, stream: int = 0,
                              rng: np.random.Generator | None = None) -> Permutation:
    """Uniform involution of ``[n]`` via ``t_n = t_{n-1} + (n-1) t_{n-2}``.

    The largest unplaced element is fixed with probability ``t_{r-1}/t_r``
    (``r`` elements left), otherwise paired with a uniform other element.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if rng is None:
        rng = make_rng(seed, stream)
    t = telephone_table(max(n, 1))
    img = list(range(1, n + 1))
    free = list(range(1, n + 1))
    while free:
        r = len(free)
        x = free.pop()
        if rng.random() < t[r - 1] / t[r]:
            continue
        y = free.pop(int(rng.integers(0, r - 1)))
        img[x - 1], img[y - 1] = y, x
    return tuple(img)


def matching_size_probs(n: int) -> np.ndarray:
    """``P(m two-cycles)`` for a uniform involution of ``[n]``: ``C(n,2m)(2m-1)!!/t_n``."""
    m = np.arange(n // 2 + 1)
    logw = (gammaln(n + 1) - gammaln(n - 2 * m + 1) - gammaln(m + 1) - m * math.log(2.0))
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_uniform_involutions(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` uniform involutions of ``{0..n-1}`` as rows (0-based images).

    Draws the number of 2-cycles from its exact law, then pairs up the first
    ``2m`` entries of a uniform random ordering.
    """
    m = rng.choice(n // 2 + 1, size=size, p=matching_size_probs(n))
    order = np.argsort(rng.random((size, n)), axis=1)
    col = np.arange(n)
    partner_col = np.where(col[None, :] < 2 * m[:, None], col ^ 1, col)
    partner = np.take_along_axis(order, partner_col, axis=1)
    out = np.empty_like(order)
    np.put_along_axis(out, order, partner, axis=1)
    return out


def compose_involutions(a, b) -> Permutation:
    """``b o a`` for involutions ``a`` and ``b`` (``a`` acts first)."""
    a, b = check_permutation(a), check_permutation(b)
    if len(a) != len(b):
        raise CycleTypeError("involutions act on different ground sets")
    for name, p in (("a", a), ("b", b)):
        if not is_involution(p):
            raise CycleTypeError(f"{name} is not an involution: {p}")
    return compose(b, a)


def small_cycle_counts(sigma: np.ndarray, kmax: int) -> np.ndarray:
    """Counts of ``k``-cycles, ``k <= kmax``, for each row of a batch of 0-based permutations.

    Uses fixed points of powers and Moebius inversion: ``k c_k = sum_{d|k} mu(k/d) fix(sigma^d)``.
    """
    ident = np.arange(sigma.shape[1])
    fix = np.zeros((sigma.shape[0], kmax + 1), dtype=np.int64)
    cur = sigma
    for d in range(1, kmax + 1):
        fix[:, d] = (cur == ident).sum(axis=1)
        cur = np.take_along_axis(sigma, cur, axis=1)
    out = np.zeros((sigma.shape[0], kmax), dtype=np.int64)
    for k in range(1, kmax + 1):
        acc = np.zeros(sigma.shape[0], dtype=np.int64)
        for d in range(1, k + 1):
            if k % d == 0:
                acc += _mobius(k // d) * fix[:, d]
        out[:, k - 1] = acc // k
    return out


def _mobius(n: int) -> int:
    result, p = 1, 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    return -result if n > 1 else result
