import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import kstest

from involfact import asym
from involfact.esf import feller_batch, feller_sample, make_rng
from involfact.experiments import (
    ExperimentConfig,
    ExperimentReport,
    clt_experiment,
    composition_bias_experiment,
    cycle_table,
    functional_experiment,
    inequality_suite,
    involution_pair_identity,
    ks_statistic,
    dominated_pair_check,
    dominated_pair_excess,
    limit_composed_pmf,
    log_invol_prefix,
    log_v_array,
    membership_experiment,
    outside_p_xi,
    path_matrices,
    poisson_model_log_b,
    prefix_cutoff,
    skew_experiment,
)
from involfact.perm_core import log_invol, log_v_factor
from involfact.series import in_membership_set


def small(**kw):
    base = dict(n=(200,), samples=600, chunk=250, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- config


def test_config_from_key_value_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# pilot\nn = 1e4, 1e5\ntheta = 1/2\nsamples = 2000  # small\nxi = 5,10\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.n == (10**4, 10**5)
    assert cfg.theta == 0.5
    assert cfg.samples == 2000
    assert cfg.xi == (5, 10)
    assert cfg.t_grid[0] == 0 and cfg.t_grid[-1] == 1 and len(cfg.t_grid) == 101


def test_config_from_json_and_section(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"n": [50], "seed": 9}))
    assert ExperimentConfig.from_file(tmp_path / "a.json").seed == 9
    (tmp_path / "b.ini").write_text("[experiment]\nseed = 4\n")
    assert ExperimentConfig.from_file(tmp_path / "b.ini").seed == 4


@pytest.mark.parametrize("bad", [dict(samples=0), dict(theta=-1), dict(n=(0,)), dict(t_grid=(0.5, 0.2)),
                                 dict(chunk=0), dict(n=(1.5,))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_unknown_key():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_mapping({"bogus": 1})


# ---------------------------------------------------------------- report


def test_report_round_trip_and_csv():
    rep = ExperimentReport("demo", {"n": [1]}, {"x": np.float64(0.5), "k": np.int64(3)},
                           {"rows": [{"a": 1, "b": 2.5}, {"a": 2, "b": 3.5}]}, wall_clock=1.25)
    text = rep.to_json()
    assert "wall_clock" not in text
    assert "wall_clock" in rep.to_json(timing=True)
    back = ExperimentReport.from_json(text)
    assert back.results == {"k": 3, "x": 0.5}
    assert back.to_json() == text
    assert rep.to_csv().splitlines() == ["table,a,b", "rows,1,2.5", "rows,2,3.5"]
    assert json.loads(text)["schema_version"] == "1.0"


# ---------------------------------------------------------------- sparse statistics


def test_log_v_array_matches_scalar():
    cnt = np.array([0, 1, 2, 5, 5, 40])
    k = np.array([1, 3, 2, 1, 1, 7])
    assert np.allclose(log_v_array(cnt, k), [log_v_factor(int(c), int(kk)) for c, kk in zip(cnt, k)])


def test_count_table_log_invol_matches_single_samples():
    n = 300
    batch = feller_batch(200, 1.0, 4 * n, make_rng(5, 0))
    table = cycle_table(batch, n)
    logs = table.log_invol()
    for i in range(batch.size):
        c = batch.sample(i, n).c
        assert logs[i] == pytest.approx(log_invol(c), rel=1e-12, abs=1e-12)
        assert table.mapping(i) == c.as_dict()


def test_prefix_cutoff_exact_powers():
    assert prefix_cutoff(10**4, 0.25) == 10
    assert prefix_cutoff(10**6, 0.5) == 1000
    assert prefix_cutoff(10**6, 0.0) == 1
    assert prefix_cutoff(10**6, 1.0) == 10**6


def test_single_path_matches_batch_rows():
    n = 500
    batch = feller_batch(40, 1.0, 4 * n, make_rng(6, 0))
    grid = np.linspace(0, 1, 11)
    W, B = path_matrices(batch, n, 1.0, grid, horizon=4 * n)
    for i in range(batch.size):
        p = log_invol_prefix(batch.sample(i, n), grid, 1.0)
        assert np.allclose(p.w, W[i], atol=1e-10)
        assert np.allclose(p.b, B[i], atol=1e-10)


def test_path_endpoint_is_full_log_invol():
    s = feller_sample(800, 1.0, seed=2)
    p = log_invol_prefix(s, [1.0], 1.0)
    scale = math.sqrt(math.log(800) ** 3 / 3)
    assert p.w[0] == pytest.approx((log_invol(s.c) - math.log(800) ** 2 / 2) / scale)


def test_ks_statistic_matches_scipy():
    x = make_rng(1, 0).normal(size=500)
    assert ks_statistic(x, asym.phi) == pytest.approx(kstest(x, "norm").statistic, abs=1e-12)


def test_outside_p_xi_matches_predicate():
    n = 60
    batch = feller_batch(300, 1.0, n, make_rng(8, 0))
    table = cycle_table(batch, n)
    for xi in (1, 2, 3):
        flags = outside_p_xi(table, xi)
        for i in range(batch.size):
            assert flags[i] == (not in_membership_set(table.mapping(i), xi))


# ---------------------------------------------------------------- the dominated-pair inequality


def test_dominated_pair_equal_vectors_is_trivial():
    assert dominated_pair_check({1: 3, 4: 2}, {1: 3, 4: 2}, 20) <= 0


def test_dominated_pair_adversarial_large_c1():
    b = {1: 50, 2: 10, 950: 1}
    a = {1: 0, 2: 10}
    assert dominated_pair_check(a, b, 1000) <= 0
    assert dominated_pair_check({}, {1: 50}, 1000) <= 0


def test_dominated_pair_rejects_non_dominated():
    with pytest.raises(ValueError):
        dominated_pair_check({1: 2}, {1: 1}, 10)


@given(st.dictionaries(st.integers(1, 60), st.integers(0, 8), min_size=1, max_size=8),
       st.dictionaries(st.integers(1, 60), st.integers(0, 8), max_size=8))
def test_dominated_pair_random_pairs(a, extra):
    b = dict(a)
    for k, v in extra.items():
        b[k] = b.get(k, 0) + v
    assert dominated_pair_check(a, b, 60) <= 1e-9


def test_dominated_pair_excess_exact_prefix():
    # a = {1:1}, b = {1:3, 2:1}: prefix j=1 gives log V_3(1) - 0 = log 4, j=2 adds log 2
    keys = np.array([1, 2], dtype=np.int64)
    ex = dominated_pair_excess(keys, np.array([1, 0]), np.array([3, 1]), 10, 1)[0]
    rhs = 3 * math.log(10) + 9 / 2 + 1 / 4
    assert ex == pytest.approx(math.log(8) - rhs)


# ---------------------------------------------------------------- experiments


def test_clt_report_shape_and_determinism():
    cfg = small(n=(100, 400))
    a, b = clt_experiment(cfg), clt_experiment(cfg)
    assert a.to_json() == b.to_json()
    assert set(a.results["ks"]) == {"100", "400"}
    row = a.tables["clt"][0]
    assert {"ks", "ks_edgeworth", "ks_poisson", "ks_poisson_edgeworth", "esf_var_ratio"} <= set(row)
    assert len(a.tables["edgeworth_signs"]) == 2 * 2 * 15


def test_worker_count_does_not_change_results():
    cfg = small(n=(150,), samples=900, chunk=200)
    one = clt_experiment(cfg)
    two = clt_experiment(cfg.replace(workers=2))
    assert one.results == two.results
    assert one.tables == two.tables


def test_poisson_model_mean():
    n = 1000
    x = poisson_model_log_b(n, 20000, 1.0, make_rng(2, 0))
    mu = asym.normalizers(n, 1.0)
    assert abs(x.mean() - mu.mu_n) < 5 * mu.sigma_n / math.sqrt(20000)
    assert x.std() == pytest.approx(mu.sigma_n, rel=0.05)


def test_functional_small_run():
    rep = functional_experiment(small(n=(300, 3000), samples=500))
    assert rep.results["w0_bound_violations"] == 0
    assert len(rep.tables["covariance"]) == 2 * 25
    assert 0 < rep.results["esf_var_ratio"] < 1


def test_membership_small_run():
    rep = membership_experiment(small(n=(500,), samples=4000, xi=(2, 4)))
    check = rep.results["small_n_check"]
    assert abs(check["z"]) < 4
    assert check["exact"] == pytest.approx(0.10378782370237527, rel=1e-12)


def test_skew_small_run():
    rep = skew_experiment(small(n=(10**4,), samples=300))
    assert rep.results["below_fraction"] >= rep.results["guarantee"]


def test_inequality_suite_small_run():
    rep = inequality_suite(small(n=(300,), samples=3000, chunk=1000, thetas=(0.5, 2.0)), exact_checks=50)
    assert rep.results["total_violations"] == 0
    assert "replay" not in rep.tables
    assert all(r["exact_checked"] == 50 for r in rep.tables["inequalities"])


def test_composition_small_run():
    rep = composition_bias_experiment(small(n=(60,), samples=4000, chunk=1000))
    assert rep.results["identity_holds"]
    assert rep.results["max_abs_z_exact"] < 4.5


def test_limit_law_of_composed_cycles():
    for k in range(1, 6):
        pmf = limit_composed_pmf(k, 60)
        assert pmf.sum() == pytest.approx(1, abs=1e-12)
        assert (np.arange(61) * pmf).sum() == pytest.approx(1 + 1 / k, abs=1e-12)


def test_involution_pair_identity_small():
    assert involution_pair_identity(6) == (5776, 5776)


@pytest.mark.slow
def test_standardized_variance_tracks_exact_esf_variance():
    n, size = 10**4, 20_000
    rep = clt_experiment(ExperimentConfig(n=(n,), samples=size, seed=11, chunk=5000))
    row = rep.tables["clt"][0]
    sd_of_var = row["esf_var_ratio"] * math.sqrt(2 / size)
    assert abs(row["var"] - row["esf_var_ratio"]) < 4 * sd_of_var
    assert abs(row["mean"]) < 4 * math.sqrt(row["var"] / size) + 0.03
