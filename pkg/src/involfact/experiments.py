"""Monte Carlo experiments on Feller-coupled ESF(theta) samples.

Every experiment splits its sample budget into fixed-size chunks; chunk ``i``
draws from ``make_rng(seed, tag + i)`` so results do not depend on the number of
worker processes.  Per-sample statistics are computed from sparse
``(sample, k, c_k)`` triplets in double precision.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import poisson

from . import asym
from .esf import (
    SpacingBatch,
    feller_batch,
    make_rng,
    sample_uniform_involutions,
    small_cycle_counts,
    sparse_counts,
)
from .perm_core import CycleType, big_b, enumerate_cycle_types, invol, log_v_factor, telephone
from .series import composed_cycle_mean, membership_probability

SCHEMA_VERSION = "1.0"
DEFAULT_T_GRID = tuple(i / 100 for i in range(101))
COV_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

# stream offsets keep experiments that share a seed on disjoint streams
STREAM_TAGS = {
    "clt": 1 << 20,
    "paths": 2 << 20,
    "membership": 3 << 20,
    "skew": 4 << 20,
    "inequalities": 5 << 20,
    "compose-bias": 6 << 20,
}


# ----------------------------------------------------------------------------
# configuration and reports


def _tuple_of(conv):
    def parse(value):
        if isinstance(value, str):
            value = [v for v in value.replace(";", ",").split(",") if v.strip()]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(conv(v) for v in value)

    return parse


def _int(v) -> int:
    if isinstance(v, str):
        v = v.strip()
        return int(float(v)) if ("e" in v.lower() or "." in v) else int(v)
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"expected an integer, got {v}")
    return int(v)


def _float(v) -> float:
    if isinstance(v, str) and "/" in v:
        return float(Fraction(v.strip()))
    return float(v)


@dataclass
class ExperimentConfig:
    """Shared configuration; unused fields are ignored by a given experiment.

    File format: ``key = value`` lines (``#`` comments, optional ``[experiment]``
    header); lists are comma separated, e.g. ``n = 1e4, 1e5``.
    """

    n: tuple = (10**4,)
    theta: float = 1.0
    samples: int = 10_000
    seed: int = 0
    horizon_factor: int = 4
    t_grid: tuple = DEFAULT_T_GRID
    cov_grid: tuple = COV_GRID
    xi: tuple = (5, 10, 20, 40)
    thetas: tuple = (0.5, 1.0, 2.0)
    chunk: int = 10_000
    workers: int = 1
    output: str | None = None

    _parsers = {
        "n": _tuple_of(_int), "theta": _float, "samples": _int, "seed": _int,
        "horizon_factor": _int, "t_grid": _tuple_of(_float), "cov_grid": _tuple_of(_float),
        "xi": _tuple_of(_int), "thetas": _tuple_of(_float), "chunk": _int, "workers": _int,
        "output": lambda v: None if v in (None, "", "none") else str(v),
    }

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, self._parsers[f.name](getattr(self, f.name)))
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if any(n < 1 for n in self.n):
            raise ValueError("n must be positive")
        if self.theta <= 0 or any(t <= 0 for t in self.thetas):
            raise ValueError("theta must be positive")
        if self.horizon_factor < 1:
            raise ValueError("horizon_factor must be >= 1")
        for name in ("t_grid", "cov_grid"):
            g = getattr(self, name)
            if list(g) != sorted(g) or (g and (g[0] < 0 or g[-1] > 1)):
                raise ValueError(f"{name} must be sorted within [0, 1]")
        if self.chunk < 1 or self.workers < 1:
            raise ValueError("chunk and workers must be >= 1")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text()
        if text.lstrip().startswith("{"):
            return cls.from_mapping(json.loads(text))
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = "[experiment]\n" + text
        parser.read_string(text)
        section = parser[parser.sections()[0]]
        return cls.from_mapping(dict(section))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def replace(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    results: dict
    tables: dict = field(default_factory=dict)
    wall_clock: float | None = None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "config": _plain(self.config),
            "results": _plain(self.results),
            "tables": _plain(self.tables),
        }
        if timing and self.wall_clock is not None:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["kind"], d["config"], d["results"], d.get("tables", {}), d.get("wall_clock"),
                   d.get("schema_version", SCHEMA_VERSION))

    def to_csv(self, table: str | None = None) -> str:
        """Flat CSV: one row per table row, prefixed by the table name."""
        names = [table] if table else sorted(self.tables)
        rows = []
        for name in names:
            for row in self.tables.get(name, []):
                rows.append({"table": name, **_plain(row)})
        if not rows:
            rows = [{"table": "results", "key": k, "value": json.dumps(_plain(v), sort_keys=True)}
                    for k, v in sorted(self.results.items())]
        cols: list[str] = []
        for r in rows:
            for c in r:
                if c not in cols:
                    cols.append(c)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        return buf.getvalue()


# ----------------------------------------------------------------------------
# chunked execution


def _chunks(total: int, size: int) -> list[tuple[int, int]]:
    out = []
    i = 0
    while total > 0:
        out.append((i, min(size, total)))
        total -= size
        i += 1
    return out


def _run(worker: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks))


# ----------------------------------------------------------------------------
# sparse count tables


def log_v_array(cnt: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Elementwise ``log V_cnt(k)``."""
    out = np.zeros(len(cnt))
    m = cnt >= 2
    if m.any():
        pairs = np.stack([cnt[m], k[m]], axis=1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        vals = np.array([log_v_factor(int(c), int(kk)) for c, kk in uniq])
        out[m] = vals[inv.ravel()]
    return out


@dataclass
class CountTable:
    """Sparse cycle counts for a batch: entry ``e`` says sample ``sid[e]`` has ``count[e]`` cycles of length ``k[e]``."""

    size: int
    sid: np.ndarray
    k: np.ndarray
    count: np.ndarray

    @classmethod
    def from_entries(cls, sid, k, size: int, kmax: int) -> "CountTable":
        s, kk, c = sparse_counts(np.asarray(sid), np.asarray(k), kmax)
        return cls(size, s, kk, c)

    def log_b_terms(self) -> np.ndarray:
        return self.count * np.log(self.k)

    def log_invol_terms(self) -> np.ndarray:
        return self.log_b_terms() + log_v_array(self.count, self.k)

    def per_sample(self, terms: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        if mask is None:
            return np.bincount(self.sid, weights=terms, minlength=self.size)
        return np.bincount(self.sid[mask], weights=terms[mask], minlength=self.size)

    def log_invol(self) -> np.ndarray:
        return self.per_sample(self.log_invol_terms())

    def log_b(self) -> np.ndarray:
        return self.per_sample(self.log_b_terms())

    def mapping(self, i: int) -> dict[int, int]:
        m = self.sid == i
        return {int(a): int(b) for a, b in zip(self.k[m], self.count[m])}


def cycle_table(batch: SpacingBatch, n: int) -> CountTable:
    sid, k = batch.cycle_entries(n)
    return CountTable.from_entries(sid, k, batch.size, n + 1)


def z0_table(batch: SpacingBatch, n: int, horizon: int | None = None, start: int = 0) -> CountTable:
    """``Z_{k,start}`` for ``k <= n`` from spacings closed by ``horizon``."""
    sid, k = batch.z_entries(start, horizon)
    keep = k <= n
    return CountTable.from_entries(sid[keep], k[keep], batch.size, n + 1)


def prefix_cutoff(n: int, t: float) -> int:
    """``floor(n^t)`` robust to rounding at exact powers."""
    return max(1, int(math.floor(math.exp(t * math.log(n)) * (1 + 1e-12))))


def standardize(values: np.ndarray, n: int, theta: float, exact: bool = True) -> np.ndarray:
    norm = asym.normalizers(n, theta) if exact else asym.asymptotic_normalizers(n, theta)
    return (values - norm.mu_n) / norm.sigma_n


def ks_statistic(x: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample Kolmogorov-Smirnov distance to a continuous cdf."""
    xs = np.sort(np.asarray(x, dtype=float), kind="stable")
    m = len(xs)
    F = cdf(xs)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


# ----------------------------------------------------------------------------
# paths


@dataclass
class PathSample:
    t_grid: np.ndarray
    w: np.ndarray
    b: np.ndarray


def path_scale(n: int, theta: float) -> float:
    return math.sqrt(theta / 3 * math.log(n) ** 3)


def _prefix_matrix(table: CountTable, terms: np.ndarray, cutoffs: Sequence[int]) -> np.ndarray:
    out = np.empty((table.size, len(cutoffs)))
    for j, K in enumerate(cutoffs):
        out[:, j] = table.per_sample(terms, table.k <= K)
    return out


def path_matrices(batch: SpacingBatch, n: int, theta: float, t_grid: Sequence[float],
                  horizon: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``W_n(t)`` and ``B_n(t)`` for every sample (rows) and grid point (columns)."""
    t = np.asarray(t_grid, dtype=float)
    cut = [prefix_cutoff(n, x) for x in t]
    centre = theta * t**2 / 2 * math.log(n) ** 2
    scale = path_scale(n, theta)
    c = cycle_table(batch, n)
    z = z0_table(batch, n, horizon)
    W = (_prefix_matrix(c, c.log_invol_terms(), cut) - centre) / scale
    B = (_prefix_matrix(z, z.log_b_terms(), cut) - centre) / scale
    return W, B


def log_invol_prefix(sample, t_grid: Sequence[float], theta: float) -> PathSample:
    """``W_n`` and ``B_n`` on ``t_grid`` for a single :class:`SpacingSample`."""
    n = sample.n
    t = np.asarray(t_grid, dtype=float)
    centre = theta * t**2 / 2 * math.log(n) ** 2
    scale = path_scale(n, theta)
    w, b = [], []
    cparts = sample.c.parts
    zparts = sorted((k, c) for k, c in sample.z.items() if k <= n)
    for x in t:
        K = prefix_cutoff(n, x)
        w.append(math.fsum(c * math.log(k) + log_v_factor(c, k) for k, c in cparts if k <= K))
        b.append(math.fsum(c * math.log(k) for k, c in zparts if k <= K))
    return PathSample(t, (np.array(w) - centre) / scale, (np.array(b) - centre) / scale)


# ----------------------------------------------------------------------------
# CLT


def _clt_worker(task):
    seed, stream, size, theta, ns = task
    rng = make_rng(seed, stream)
    batch = feller_batch(size, theta, max(ns), rng)
    return np.stack([cycle_table(batch, n).log_invol() for n in ns], axis=1)


def _sample_log_invol(cfg: ExperimentConfig, tag: str, ns: Sequence[int]) -> np.ndarray:
    tasks = [(cfg.seed, STREAM_TAGS[tag] + i, size, cfg.theta, tuple(ns)) for i, size in _chunks(cfg.samples, cfg.chunk)]
    return np.concatenate(_run(_clt_worker, tasks, cfg.workers), axis=0)


def edgeworth_cdf(n: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: asym.phi(x) + asym.edgeworth_term(x, n)


def poisson_model_log_b(n: int, size: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """``sum_k Z_k log k`` for independent ``Z_k ~ Poisson(theta/k)``, ``k <= n``.

    Drawn as a Poisson(theta H_n) number of points with lengths ``P(k) ~ 1/k``.
    """
    w = 1.0 / np.arange(1, n + 1)
    cdf = np.cumsum(w)
    total = cdf[-1]
    counts = rng.poisson(theta * total, size)
    u = rng.random(int(counts.sum())) * total
    k = np.minimum(np.searchsorted(cdf, u, side="right") + 1, n)
    sid = np.repeat(np.arange(size), counts)
    return np.bincount(sid, weights=np.log(k), minlength=size)


def _poisson_worker(task):
    seed, stream, size, theta, ns = task
    rng = make_rng(seed, stream)
    return np.stack([poisson_model_log_b(n, size, theta, rng) for n in ns], axis=1)


def _sign_rows(z: np.ndarray, n: int, model: str) -> list[dict]:
    xs = np.sort(z)
    rows = []
    for x in SIGN_GRID:
        emp = np.searchsorted(xs, x, side="right") / len(xs)
        dev = emp - asym.phi(float(x))
        rows.append({"model": model, "n": n, "x": float(x), "deviation": float(dev),
                     "match": bool(np.sign(dev) == np.sign(1 - x * x))})
    return rows


SIGN_GRID = tuple(x for x in np.round(np.linspace(-2, 2, 17), 10) if abs(abs(x) - 1) > 1e-9)


def clt_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """KS distance of standardized ``log invol`` to the normal law on a grid of ``n``.

    All ``n`` share the same Bernoulli sequences (common random numbers), so the
    trend in ``n`` is not masked by independent sampling noise.  At ``theta = 1``
    the Edgeworth-corrected distance is also reported, for ESF samples and for
    the independent Poisson model, together with the exact ESF variance of
    ``log B`` relative to the asymptotic scale.
    """
    start = time.perf_counter()
    ns = sorted(cfg.n)
    logs = _sample_log_invol(cfg, "clt", ns)
    edgeworth = cfg.theta == 1.0 and ns[0] >= 3
    if edgeworth:
        tasks = [(cfg.seed, STREAM_TAGS["clt"] + (1 << 19) + i, size, cfg.theta, tuple(ns))
                 for i, size in _chunks(cfg.samples, cfg.chunk)]
        plogs = np.concatenate(_run(_poisson_worker, tasks, cfg.workers), axis=0)
    rows, signs = [], []
    for j, n in enumerate(ns):
        ex = standardize(logs[:, j], n, cfg.theta, exact=True)
        asy = standardize(logs[:, j], n, cfg.theta, exact=False)
        esf = asym.esf_log_b_moments(n, cfg.theta)
        row = {
            "n": n,
            "ks": ks_statistic(ex, asym.phi),
            "ks_asymptotic_norm": ks_statistic(asy, asym.phi),
            "mean": float(ex.mean()),
            "var": float(ex.var(ddof=1)) if len(ex) > 1 else 0.0,
            "esf_var_ratio": (esf.sigma_n / asym.normalizers(n, cfg.theta).sigma_n) ** 2,
            "samples": len(ex),
        }
        if edgeworth:
            cdf = edgeworth_cdf(n)
            pz = standardize(plogs[:, j], n, cfg.theta, exact=False)
            row["ks_edgeworth"] = ks_statistic(asy, cdf)
            row["ks_poisson"] = ks_statistic(pz, asym.phi)
            row["ks_poisson_edgeworth"] = ks_statistic(pz, cdf)
            signs += _sign_rows(asy, n, "esf") + _sign_rows(pz, n, "poisson")
        rows.append(row)
    results = {"ks": {str(r["n"]): r["ks"] for r in rows}}
    if edgeworth:
        for model in ("esf", "poisson"):
            frac = {}
            for n in ns:
                s = [r["match"] for r in signs if r["n"] == n and r["model"] == model]
                frac[str(n)] = sum(s) / len(s)
            results[f"sign_match_fraction_{model}"] = frac
        for key in ("ks_edgeworth", "ks_poisson", "ks_poisson_edgeworth"):
            results[key] = {str(r["n"]): r[key] for r in rows}
    tables = {"clt": rows}
    if signs:
        tables["edgeworth_signs"] = signs
    return ExperimentReport("clt", cfg.to_dict(), results, tables, time.perf_counter() - start)


# ----------------------------------------------------------------------------
# functional limit


def _paths_worker(task):
    seed, stream, size, theta, ns, hf, t_grid, cov_grid = task
    rng = make_rng(seed, stream)
    batch = feller_batch(size, theta, hf * max(ns), rng)
    sups, covs, w0 = [], [], []
    for n in ns:
        W, B = path_matrices(batch, n, theta, t_grid, horizon=hf * n)
        sups.append(np.max(np.abs(W - B), axis=1))
        Wc, _ = path_matrices(batch, n, theta, cov_grid, horizon=hf * n)
        covs.append(Wc)
        c1 = cycle_table(batch, n)
        ones = np.zeros(size)
        m = c1.k == 1
        ones[c1.sid[m]] = c1.count[m]
        w0.append((W[:, 0], ones))
    return np.stack(sups, axis=1), np.stack(covs, axis=0), w0


def functional_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    ns = sorted(cfg.n)
    tasks = [(cfg.seed, STREAM_TAGS["paths"] + i, size, cfg.theta, tuple(ns), cfg.horizon_factor,
              tuple(cfg.t_grid), tuple(cfg.cov_grid)) for i, size in _chunks(cfg.samples, cfg.chunk)]
    parts = _run(_paths_worker, tasks, cfg.workers)
    sups = np.concatenate([p[0] for p in parts], axis=0)
    covw = np.concatenate([p[1] for p in parts], axis=1)  # (len(ns), samples, len(cov_grid))
    rows, cov_rows = [], []
    w0_violations = 0
    for j, n in enumerate(ns):
        s = sups[:, j]
        rows.append({"n": n, "mean_sup_distance": float(s.mean()),
                     "se": float(s.std(ddof=1) / math.sqrt(len(s))) if len(s) > 1 else 0.0})
        cov = np.cov(covw[j], rowvar=False, ddof=1) if covw.shape[1] > 1 else np.zeros((len(cfg.cov_grid),) * 2)
        cov = np.atleast_2d(cov)
        for a, s_ in enumerate(cfg.cov_grid):
            for b, t_ in enumerate(cfg.cov_grid):
                cov_rows.append({"n": n, "s": s_, "t": t_, "cov": float(cov[a, b]),
                                 "target": min(s_, t_) ** 3})
        bound = 10 / math.sqrt(math.log(n) ** 3)
        for p in parts:
            w, c1 = p[2][j]
            w0_violations += int(np.sum(np.abs(w) > bound * c1**2 + 1e-12))
    n_top = ns[-1]
    top = [r for r in cov_rows if r["n"] == n_top]
    results = {
        "mean_sup_distance": {str(r["n"]): r["mean_sup_distance"] for r in rows},
        "max_cov_error": max(abs(r["cov"] - r["target"]) for r in top),
        "cov_n": n_top,
        "esf_var_ratio": (asym.esf_log_b_moments(n_top, cfg.theta).sigma_n / path_scale(n_top, cfg.theta)) ** 2,
        "w0_bound_violations": w0_violations,
        "t_grid_points": len(cfg.t_grid),
    }
    return ExperimentReport("paths", cfg.to_dict(), results, {"sup_distance": rows, "covariance": cov_rows},
                            time.perf_counter() - start)


# ----------------------------------------------------------------------------
# membership in P_xi and the typical-value bound


def outside_p_xi(table: CountTable, xi: float) -> np.ndarray:
    """Per-sample indicator of ``sigma not in P_xi``."""
    x = math.floor(xi)
    bad = np.where(table.k <= x, table.count > x, table.count >= 2)
    out = np.zeros(table.size, dtype=bool)
    out[table.sid[bad]] = True
    return out


def _membership_worker(task):
    seed, stream, size, theta, n, xis = task
    rng = make_rng(seed, stream)
    batch = feller_batch(size, theta, n, rng)
    table = cycle_table(batch, n)
    return np.stack([outside_p_xi(table, xi) for xi in xis], axis=1).sum(axis=0)


def membership_experiment(cfg: ExperimentConfig, check_n: int = 20, check_xi: int = 3) -> ExperimentReport:
    start = time.perf_counter()
    n = cfg.n[0]
    xis = tuple(cfg.xi)
    tasks = [(cfg.seed, STREAM_TAGS["membership"] + i, size, cfg.theta, n, xis)
             for i, size in _chunks(cfg.samples, cfg.chunk)]
    counts = np.sum(_run(_membership_worker, tasks, cfg.workers), axis=0)
    rows = []
    for xi, c in zip(xis, counts):
        p = c / cfg.samples
        rows.append({"n": n, "xi": xi, "outside": int(c), "p_hat": float(p),
                     "se": math.sqrt(p * (1 - p) / cfg.samples), "xi_p_hat": float(xi * p)})
    scaled = [r["xi_p_hat"] for r in rows]
    # small-n cross-check against the exact series
    exact = 1 - float(membership_probability(check_n, Fraction(cfg.theta).limit_denominator(10**6), check_xi))
    tasks = [(cfg.seed, STREAM_TAGS["membership"] + (1 << 19) + i, size, cfg.theta, check_n, (check_xi,))
             for i, size in _chunks(cfg.samples, cfg.chunk)]
    small = int(np.sum(_run(_membership_worker, tasks, cfg.workers)))
    p_small = small / cfg.samples
    se_small = math.sqrt(exact * (1 - exact) / cfg.samples)
    results = {
        "xi_p_hat": {str(r["xi"]): r["xi_p_hat"] for r in rows},
        "spread_ratio": (max(scaled) / min(scaled)) if min(scaled) > 0 else None,
        "small_n_check": {"n": check_n, "xi": check_xi, "p_hat": p_small, "exact": exact,
                          "z": (p_small - exact) / se_small if se_small > 0 else 0.0},
    }
    return ExperimentReport("membership", cfg.to_dict(), results, {"membership": rows}, time.perf_counter() - start)


def _skew_worker(task):
    seed, stream, size, theta, n = task
    rng = make_rng(seed, stream)
    batch = feller_batch(size, theta, n, rng)
    return cycle_table(batch, n).log_invol()


def skew_experiment(cfg: ExperimentConfig, xi1: int = 20, xi2: int = 20) -> ExperimentReport:
    """Fraction of samples with ``log invol`` below the typical-value bound."""
    start = time.perf_counter()
    n = cfg.n[0]
    log_bound, guarantee = asym.skew_bound(n, xi1, xi2)
    tasks = [(cfg.seed, STREAM_TAGS["skew"] + i, size, cfg.theta, n) for i, size in _chunks(cfg.samples, cfg.chunk)]
    logs = np.concatenate(_run(_skew_worker, tasks, cfg.workers))
    frac = float(np.mean(logs < log_bound))
    results = {"n": n, "xi1": xi1, "xi2": xi2, "log_bound": log_bound, "guarantee": guarantee,
               "below_fraction": frac, "max_log_invol": float(logs.max())}
    return ExperimentReport("skew", cfg.to_dict(), results, {}, time.perf_counter() - start)


# ----------------------------------------------------------------------------
# inequality suite


def _keys(sid, k, n):
    return sid.astype(np.int64) * (n + 1) + k


def _align(n: int, *parts: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Put several sparse ``(key, value)`` vectors on their union of keys."""
    allk = np.unique(np.concatenate([p[0] for p in parts])) if parts else np.array([], dtype=np.int64)
    out = []
    for key, val in parts:
        arr = np.zeros(len(allk), dtype=np.int64)
        np.add.at(arr, np.searchsorted(allk, key), val)
        out.append(arr)
    return allk, out


def dominated_pair_excess(keys: np.ndarray, a: np.ndarray, b: np.ndarray, n: int, size: int) -> np.ndarray:
    """Per sample: ``max_j log(invol_j(b)/invol_j(a)) - (|b-a|_1 log n + sum b_k^2/(2k))``.

    Non-positive values mean the inequality holds for every prefix ``j <= n``.
    ``keys`` must be sorted and encode ``sample * (n+1) + k``.
    """
    sid = keys // (n + 1)
    k = keys % (n + 1)
    kf = k.astype(float)
    terms = (b - a) * np.log(kf) + log_v_array(b, k) - log_v_array(a, k)
    cs = np.cumsum(terms)
    first = np.ones(len(keys), dtype=bool)
    first[1:] = sid[1:] != sid[:-1]
    base = np.maximum.accumulate(np.where(first, np.arange(len(keys)), 0))
    prefix = cs - (cs[base] - terms[base])
    best = np.zeros(size)
    np.maximum.at(best, sid, prefix)
    rhs = (np.bincount(sid, weights=np.abs(b - a), minlength=size) * math.log(n)
           + np.bincount(sid, weights=b.astype(float) ** 2 / (2 * kf), minlength=size))
    return best - rhs


def dominated_pair_check(a: dict[int, int], b: dict[int, int], n: int) -> float:
    """Single-pair version of :func:`dominated_pair_excess` on count mappings (``a <= b`` required)."""
    if any(a.get(k, 0) > v for k, v in b.items()) or any(k not in b and v > 0 for k, v in a.items()):
        raise ValueError("a must be dominated by b")
    ks = sorted(set(a) | set(b))
    keys = np.array(ks, dtype=np.int64)
    av = np.array([a.get(k, 0) for k in ks], dtype=np.int64)
    bv = np.array([b.get(k, 0) for k in ks], dtype=np.int64)
    return float(dominated_pair_excess(keys, av, bv, n, 1)[0])


def _inequality_worker(task):
    seed, stream, size, theta, n, hf, exact_checks = task
    rng = make_rng(seed, stream)
    batch = feller_batch(size, theta, hf * n, rng)
    horizon = hf * n
    C = cycle_table(batch, n)
    Z0 = z0_table(batch, n, horizon)
    Zn = z0_table(batch, n, horizon, start=n)
    L, R = batch.left_right(n)
    ids = np.arange(size)
    tol = 1e-9

    # (a) invol >= B and (b) log-ratio bound
    ratio = C.per_sample(log_v_array(C.count, C.k))
    bound = C.per_sample(C.count.astype(float) ** 2 / (2 * C.k))
    bad_a = ratio < -tol
    bad_b = ratio > bound + tol * (1 + bound)

    # (c) coupling sandwich, coordinatewise for k <= n
    lr = L + R - 1
    has_lr = (R > 0) & (lr <= n)
    keys, (c, z0, zn, iL, iLR) = _align(
        n,
        (_keys(C.sid, C.k, n), C.count),
        (_keys(Z0.sid, Z0.k, n), Z0.count),
        (_keys(Zn.sid, Zn.k, n), Zn.count),
        (_keys(ids, L, n), np.ones(size, dtype=np.int64)),
        (_keys(ids[has_lr], lr[has_lr], n), np.ones(int(has_lr.sum()), dtype=np.int64)),
    )
    sid = keys // (n + 1)
    viol = (c > z0 + iL) | (c < z0 - zn - iLR)
    bad_c = np.zeros(size, dtype=bool)
    bad_c[sid[viol]] = True

    # (d) dominated pairs built from the coupling, plus random bumps
    upper = c + zn + iLR  # dominates z0 by the lower sandwich
    excess1 = dominated_pair_excess(keys, z0, upper, n, size)
    excess2 = dominated_pair_excess(keys, c, z0 + iL, n, size)
    bump_k = np.minimum(n, np.floor(np.exp(rng.random(size) * math.log(n))).astype(np.int64) + 1)
    bump_v = rng.integers(1, 4, size)
    kb, (cb, add) = _align(n, (_keys(C.sid, C.k, n), C.count), (_keys(ids, bump_k, n), bump_v))
    excess3 = dominated_pair_excess(kb, cb, cb + add, n, size)
    dominated = ~bad_c
    bad_d = dominated & ((excess1 > tol) | (excess2 > tol)) | (excess3 > tol)

    # exact integer checks on a subsample
    exact_bad = 0
    for i in range(min(exact_checks, size)):
        ct = CycleType.from_mapping(C.mapping(i), n)
        v, bb = invol(ct), big_b(ct)
        lhs = math.log(v) - math.log(bb)
        if v < bb or lhs > math.fsum(c_ ** 2 / (2 * k_) for k_, c_ in ct.parts) + tol:
            exact_bad += 1

    replay = []
    for name, mask in (("invol>=B", bad_a), ("log-ratio", bad_b), ("sandwich", bad_c), ("dominated_pair", bad_d)):
        for i in np.flatnonzero(mask)[:5]:
            replay.append({"check": name, "stream": stream, "index": int(i),
                           "ones": batch.ones[batch.offsets[i]:batch.offsets[i + 1]].tolist()})
    return {
        "counts": np.array([bad_a.sum(), bad_b.sum(), bad_c.sum(), bad_d.sum(), exact_bad]),
        "max_excess": float(max(excess1.max(), excess2.max(), excess3.max())),
        "max_ratio_slack": float(np.max(ratio - bound)),
        "replay": replay,
        "exact_checked": min(exact_checks, size),
    }


CHECK_NAMES = ("invol_ge_B", "log_ratio_bound", "sandwich", "dominated_pair", "exact_subsample")


def inequality_suite(cfg: ExperimentConfig, exact_checks: int = 200) -> ExperimentReport:
    """Per-sample checks of the deterministic inequalities; every violation count must be zero."""
    start = time.perf_counter()
    n = cfg.n[0]
    rows, replay = [], []
    total = np.zeros(len(CHECK_NAMES), dtype=np.int64)
    for ti, theta in enumerate(cfg.thetas):
        tasks = [(cfg.seed, STREAM_TAGS["inequalities"] + (ti << 16) + i, size, theta, n, cfg.horizon_factor,
                  exact_checks if i == 0 else 0) for i, size in _chunks(cfg.samples, cfg.chunk)]
        parts = _run(_inequality_worker, tasks, cfg.workers)
        counts = np.sum([p["counts"] for p in parts], axis=0)
        total += counts
        row = {"theta": theta, "n": n, "samples": cfg.samples,
               "max_dominated_pair_excess": max(p["max_excess"] for p in parts),
               "max_log_ratio_slack": max(p["max_ratio_slack"] for p in parts),
               "exact_checked": sum(p["exact_checked"] for p in parts)}
        row.update({name: int(v) for name, v in zip(CHECK_NAMES, counts)})
        rows.append(row)
        for p in parts:
            for r in p["replay"]:
                replay.append({"theta": theta, "seed": cfg.seed, **r})
    results = {"violations": {name: int(v) for name, v in zip(CHECK_NAMES, total)},
               "total_violations": int(total.sum()),
               "samples_total": cfg.samples * len(cfg.thetas)}
    tables = {"inequalities": rows}
    if replay:
        tables["replay"] = replay
    return ExperimentReport("inequalities", cfg.to_dict(), results, tables, time.perf_counter() - start)


# ----------------------------------------------------------------------------
# composition of two uniform involutions


KMAX_BIAS = 5
HIST_MAX = 40


def _compose_worker(task):
    seed, stream, size, n = task
    rng = make_rng(seed, stream)
    a = sample_uniform_involutions(n, size, rng)
    b = sample_uniform_involutions(n, size, rng)
    sigma = np.take_along_axis(b, a, axis=1)  # b o a
    counts = small_cycle_counts(sigma, KMAX_BIAS)
    hist = np.zeros((KMAX_BIAS, HIST_MAX + 1), dtype=np.int64)
    for k in range(KMAX_BIAS):
        hist[k] = np.bincount(np.minimum(counts[:, k], HIST_MAX), minlength=HIST_MAX + 1)
    return counts.sum(axis=0), (counts.astype(float) ** 2).sum(axis=0), hist


def limit_composed_pmf(k: int, m_max: int) -> np.ndarray:
    """``P(X + 2Y_k = m)`` for ``X ~ Poisson(1)``, ``Y_k ~ Poisson(1/(2k))``."""
    m = np.arange(m_max + 1)
    out = np.zeros(m_max + 1)
    for y in range(m_max // 2 + 1):
        out[2 * y:] += poisson.pmf(y, 1 / (2 * k)) * poisson.pmf(m[2 * y:] - 2 * y, 1.0)
    return out


def involution_pair_identity(n: int) -> tuple[int, int]:
    """``(sum over types of class_size * invol, t_n^2)``."""
    return sum(size * invol(c) for c, size in enumerate_cycle_types(n)), telephone(n) ** 2


def composition_bias_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    n = cfg.n[0]
    tasks = [(cfg.seed, STREAM_TAGS["compose-bias"] + i, size, n) for i, size in _chunks(cfg.samples, cfg.chunk)]
    parts = _run(_compose_worker, tasks, cfg.workers)
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    hist = np.sum([p[2] for p in parts], axis=0)
    N = cfg.samples
    rows = []
    for k in range(1, KMAX_BIAS + 1):
        mean = s1[k - 1] / N
        var = (s2[k - 1] - N * mean**2) / max(N - 1, 1)
        se = math.sqrt(max(var, 0.0) / N)
        limit = 1 + 1 / k
        exact = float(composed_cycle_mean(n, k, "real"))
        pmf = limit_composed_pmf(k, HIST_MAX)
        emp = hist[k - 1] / N
        rows.append({"k": k, "mean": mean, "se": se, "limit_mean": limit,
                     "z_limit": (mean - limit) / se if se > 0 else 0.0,
                     "exact_mean": exact, "z_exact": (mean - exact) / se if se > 0 else 0.0,
                     "tv_to_limit_law": 0.5 * float(np.abs(emp - pmf).sum())})
    ident = {str(m): dict(zip(("class_sum", "t_n_squared"), involution_pair_identity(m))) for m in range(1, 10)}
    results = {
        "max_abs_z_limit": max(abs(r["z_limit"]) for r in rows),
        "max_abs_z_exact": max(abs(r["z_exact"]) for r in rows),
        "identity": ident,
        "identity_holds": all(v["class_sum"] == v["t_n_squared"] for v in ident.values()),
    }
    return ExperimentReport("compose-bias", cfg.to_dict(), results, {"cycle_means": rows}, time.perf_counter() - start)


EXPERIMENTS = {
    "clt": clt_experiment,
    "paths": functional_experiment,
    "membership": membership_experiment,
    "skew": skew_experiment,
    "inequalities": inequality_suite,
    "compose-bias": composition_bias_experiment,
}
