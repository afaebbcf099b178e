"""Exit criteria.  Each test prints one ``[PASS]``/``[FAIL]`` line and asserts it.

Three criteria cannot hold at the stated sample sizes because of exact
finite-n effects; they run in full, print ``[FAIL]`` with the measured numbers
and the exact finite-n reference, and are marked ``xfail(strict=True)`` so an
unexpected pass is reported.  See the README section "Criteria that fail".
"""

import math
import os
import time
from fractions import Fraction

import mpmath
import pytest

from involfact import asym
from involfact.esf import esf_pmf, exact_feller_distribution
from involfact.experiments import (
    ExperimentConfig,
    clt_experiment,
    composition_bias_experiment,
    functional_experiment,
    inequality_suite,
    involution_pair_identity,
    membership_experiment,
    skew_experiment,
)
from involfact.perm_core import all_permutations, brute_force_invol, cycle_type_of, enumerate_cycle_types
from involfact.perm_core import invol, invol_hermite
from involfact.series import mean_invol_exact, mean_invol_real, partition_moment, second_moment_exact
from involfact.series import second_moment_real

pytestmark = [pytest.mark.acceptance]

SEED = 42
WORKERS = os.cpu_count() or 1


def test_c01_oracle_equivalence(criterion):
    start = time.perf_counter()
    checked = mismatches = 0
    for n in range(1, 8):
        cache = {}
        for p in all_permutations(n):
            c = cycle_type_of(p)
            if c not in cache:
                cache[c] = (invol(c), invol_hermite(c))
            a, b = cache[c]
            checked += 1
            mismatches += not (a == b == brute_force_invol(p))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    assert criterion(1, ok, f"{checked} permutations (n<=7), {mismatches} mismatches, {elapsed:.1f}s")


def test_c02_involution_pair_identity(criterion):
    start = time.perf_counter()
    pairs = [involution_pair_identity(n) for n in range(1, 10)]
    elapsed = time.perf_counter() - start
    ok = all(a == b for a, b in pairs) and elapsed < 1
    assert criterion(2, ok, f"n<=9 exact, t_9^2={pairs[-1][1]}, {elapsed:.3f}s")


def test_c03_moment_exactness(criterion):
    start = time.perf_counter()
    bad = []
    for theta in (Fraction(1, 3), Fraction(1, 2), Fraction(1), Fraction(2), Fraction(7, 2)):
        for n in range(1, 26):
            if mean_invol_exact(n, theta) != partition_moment(n, theta, 1):
                bad.append(("mean", theta, n))
        for n in range(1, 21):
            if second_moment_exact(n, theta) != partition_moment(n, theta, 2):
                bad.append(("second", theta, n))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    assert criterion(3, ok, f"5 thetas, mean n<=25, second moment n<=20, {len(bad)} mismatches, {elapsed:.1f}s")


def test_c04_mean_asymptotic(criterion):
    ratios = [float(asym.mean_asym(n, 1).value / mean_invol_real(n, 1)) for n in (250, 1000, 4000, 10**4)]
    gaps = [abs(r - 1) for r in ratios]
    ok = 0.95 <= ratios[-1] <= 1.05 and all(a > b for a, b in zip(gaps, gaps[1:]))
    assert criterion(4, ok, "asym/exact at n=250,1e3,4e3,1e4: " + ", ".join(f"{r:.5f}" for r in ratios))


def test_c05_second_moment_asymptotic(criterion):
    r_half = float(asym.second_moment_asym(2000, 0.5).value / second_moment_real(2000, 0.5))
    r_one = float(asym.second_moment_asym(2000, 1).value / second_moment_real(2000, 1))
    log_r2 = float(asym.second_moment_asym(500, 2).log_value / mpmath.log(second_moment_real(500, 2)))
    regimes = [asym.growth_exponents(t) for t in (0.5, 1, 2)]
    distinct = (regimes[0]["poly_power"] != regimes[1]["poly_power"]
                and regimes[2]["exp_power"] != regimes[1]["exp_power"])
    ok = abs(r_half - 1) <= 0.10 and abs(r_one - 1) <= 0.10 and abs(log_r2 - 1) <= 0.02 and distinct
    detail = (f"n=2000 ratio theta=1/2 {r_half:.4f}, theta=1 {r_one:.4f}; n=500 theta=2 log-ratio {log_r2:.4f}; "
              f"exponents (n^p in exp, n^q): " + "; ".join(
                  f"{g['regime']} p={g['exp_power']:.3g} q={g['poly_power']:.3g}" for g in regimes))
    assert criterion(5, ok, detail)


def test_c06_mellin(criterion):
    ts = (0.2, 0.1, 0.05, 0.025, 0.0125)
    parts, ok = [], True
    for theta in (0.5, 1.0):
        c = [abs(asym.mellin_lhs(t, theta) - asym.mellin_expansion(t, theta)) / t for t in ts]
        spread = max(c) / min(c)
        ok &= spread <= 2
        parts.append(f"theta={theta}: C in [{min(c):.4f}, {max(c):.4f}] spread {spread:.3f}")
    assert criterion(6, ok, "; ".join(parts))


def test_c07_feller_exactness(criterion):
    bad = 0
    for theta in (Fraction(1, 2), Fraction(1), Fraction(3, 2), Fraction(2)):
        for n in range(1, 7):
            dist = exact_feller_distribution(n, theta)
            bad += dist != {c: esf_pmf(c, theta) for c, _ in enumerate_cycle_types(n)}
    assert criterion(7, bad == 0, f"n<=6, 4 thetas, {bad} mismatching distributions")


@pytest.mark.slow
def test_c08_clt(criterion):
    cfg = ExperimentConfig(n=(10**5, 10**6), theta=1.0, samples=20_000, seed=SEED, chunk=5000, workers=WORKERS)
    rep = clt_experiment(cfg)
    ks5, ks6 = rep.results["ks"]["100000"], rep.results["ks"]["1000000"]
    ok = ks5 <= 0.08 and ks6 < ks5
    assert criterion(8, ok, f"KS n=1e5 {ks5:.4f} (<=0.08), n=1e6 {ks6:.4f}; 2e4 samples, shared Bernoulli sequences")


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="finite-n ESF variance deficit dominates the skewness term at n=1e4")
def test_c09_edgeworth(criterion):
    cfg = ExperimentConfig(n=(10**4,), theta=1.0, samples=100_000, seed=SEED, chunk=10_000, workers=WORKERS)
    rep = clt_experiment(cfg)
    row = rep.tables["clt"][0]
    plain, corrected = row["ks_asymptotic_norm"], row["ks_edgeworth"]
    signs = rep.results["sign_match_fraction_esf"]["10000"]
    ok = corrected < plain and signs > 0.5
    detail = (f"KS plain {plain:.4f} vs corrected {corrected:.4f}; sign majority {signs:.3f}; "
              f"exact ESF var ratio {row['esf_var_ratio']:.3f}; independent-Poisson model: KS "
              f"{row['ks_poisson']:.4f} -> {row['ks_poisson_edgeworth']:.4f}, signs "
              f"{rep.results['sign_match_fraction_poisson']['10000']:.3f}")
    assert criterion(9, ok, detail)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="Var W_n(1) is 0.68 at n=1e6 under ESF; needs log n of order 100")
def test_c10_functional(criterion):
    cfg = ExperimentConfig(n=(10**4, 10**5, 10**6), theta=1.0, samples=10_000, seed=SEED, chunk=1000,
                           workers=WORKERS)
    rep = functional_experiment(cfg)
    sup = [rep.results["mean_sup_distance"][k] for k in ("10000", "100000", "1000000")]
    decreasing = sup[0] > sup[1] > sup[2]
    top = [r for r in rep.tables["covariance"] if r["n"] == 10**6]
    worst = max(top, key=lambda r: abs(r["cov"] - r["target"]))
    off = sum(abs(r["cov"] - r["target"]) > 0.05 for r in top)
    ok = decreasing and off == 0
    detail = (f"E sup|W-B| {sup[0]:.4f} > {sup[1]:.4f} > {sup[2]:.4f}: {decreasing}; "
              f"{off}/25 cov cells off by >0.05, worst (s,t)=({worst['s']},{worst['t']}) "
              f"{worst['cov']:.4f} vs {worst['target']:.4f}; exact ESF Var W_n(1) {rep.results['esf_var_ratio']:.4f}")
    assert criterion(10, ok, detail)


@pytest.mark.slow
def test_c11_concentration(criterion):
    cfg = ExperimentConfig(n=(10**5,), theta=1.0, samples=100_000, xi=(5, 10, 20, 40), seed=SEED, workers=WORKERS)
    rep = membership_experiment(cfg)
    scaled = rep.results["xi_p_hat"]
    spread = rep.results["spread_ratio"]
    skew = skew_experiment(cfg.replace(n=(10**4,)), 20, 20).results
    ok = spread is not None and spread <= 3 and skew["below_fraction"] >= skew["guarantee"]
    detail = (f"xi*P = " + ", ".join(f"{k}:{v:.3f}" for k, v in scaled.items()) + f" (spread {spread:.3f} <= 3); "
              f"below-bound fraction {skew['below_fraction']:.4f} >= guarantee {skew['guarantee']:.4f}")
    assert criterion(11, ok, detail)


@pytest.mark.slow
def test_c12_inequalities(criterion):
    cfg = ExperimentConfig(n=(1000,), thetas=(0.5, 1.0, 2.0), samples=10**6, chunk=50_000, seed=SEED,
                           workers=WORKERS)
    rep = inequality_suite(cfg)
    v = rep.results["violations"]
    ok = rep.results["total_violations"] == 0 and rep.results["samples_total"] >= 10**6
    detail = f"{rep.results['samples_total']} samples at n=1e3: " + ", ".join(f"{k}={n}" for k, n in v.items())
    assert criterion(12, ok, detail)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="exact finite-n mean at n=500 is far below 1+1/k")
def test_c13_composition_bias(criterion):
    cfg = ExperimentConfig(n=(500,), samples=100_000, seed=SEED, workers=WORKERS)
    rep = composition_bias_experiment(cfg)
    rows = rep.tables["cycle_means"]
    within = [abs(r["z_limit"]) <= 3 for r in rows]
    ident = involution_pair_identity(6)
    ok = all(within) and ident == (5776, 5776)
    detail = ("E c_k vs 1+1/k: " + ", ".join(f"k={r['k']} {r['mean']:.4f} (z {r['z_limit']:.1f})" for r in rows)
              + f"; t_6^2 identity {ident[0] == ident[1]}; vs exact finite-n mean max |z| "
              f"{rep.results['max_abs_z_exact']:.2f}")
    assert criterion(13, ok, detail)
