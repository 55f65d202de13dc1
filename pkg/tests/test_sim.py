import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import logit

from wabh.errors import DomainError
from wabh.sim import (
    RESULT_COLUMNS,
    ReplicateResult,
    SimConfig,
    SimMetrics,
    _score,
    aggregate,
    generate_dataset,
    replicate_rng,
    run_experiment,
    run_replicate,
    select_signals,
    write_table,
)

# E[expit(-1 + 0.8 Z)], Gauss-Hermite with 80 nodes
NULL_LESION_RATE = 0.29295755956

SMALL = dict(grid=(12, 12), K=10, n=80, B=4, seed=3)


def test_select_signals_examples():
    np.testing.assert_array_equal(select_signals([0.1, 0.9, 0.5, 0.7], 2), [1, 3])
    np.testing.assert_array_equal(select_signals([1.0, 2.0, 2.0, 2.0], 2), [1, 2])
    np.testing.assert_array_equal(select_signals([3.0, 1.0, 2.0], 3), [0, 1, 2])
    assert select_signals([3.0, 1.0], 0).size == 0
    with pytest.raises(DomainError):
        select_signals([1.0, 2.0], 3)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60), st.integers(0, 60))
def test_select_signals_are_top_k(values, K):
    K = K % (len(values) + 1)
    idx = select_signals(values, K)
    v = np.asarray(values)
    assert idx.size == K and np.all(np.diff(idx) > 0)
    if 0 < K < v.size:
        rest = np.setdiff1d(np.arange(v.size), idx)
        assert v[idx].min() >= v[rest].max()


def _mean_nn_distance(idx, shape):
    pts = np.column_stack(np.unravel_index(idx, shape)).astype(float)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return d.min(1).mean()


def test_signal_contiguity_grows_with_scale():
    from wabh.grf import grf_sample

    shape, K = (30, 30), 45
    near, far = [], []
    for b in range(10):
        rng = replicate_rng(0, b)
        near.append(_mean_nn_distance(select_signals(grf_sample(shape, 10.0, rng=rng), K), shape))
        far.append(_mean_nn_distance(select_signals(grf_sample(shape, 0.01, rng=rng), K), shape))
    assert np.mean(near) < np.mean(far)
    assert np.mean(near) == pytest.approx(1.0, abs=0.1)


def test_null_lesion_rate_matches_quadrature():
    cfg = SimConfig(grid=(10, 10), K=0, C=0.0, n=4000)
    data = generate_dataset(cfg, [], replicate_rng(1, 0))
    assert data.X.size >= 100_000
    assert data.X.mean() == pytest.approx(NULL_LESION_RATE, abs=0.02)
    np.testing.assert_array_equal(data.intercepts, 0.0)
    np.testing.assert_array_equal(data.slopes, 0.0)


def test_lesion_rate_spread_increases_with_c():
    spread = []
    for C in (0.0, 0.75, 1.5):
        cfg = SimConfig(grid=(30, 30), K=0, C=C, n=400)
        xbar = generate_dataset(cfg, [], replicate_rng(2, 0)).X.mean(0)
        xbar = np.clip(xbar, 1 / 800, 1 - 1 / 800)
        spread.append(np.var(logit(xbar)))
    assert spread[0] < spread[1] < spread[2]


def test_slopes_only_on_signals():
    cfg = SimConfig(grid=(10, 10), K=7, theta=0.5, n=20)
    sig = select_signals(np.arange(100.0), 7)
    data = generate_dataset(cfg, sig, 0)
    assert data.truth.sum() == 7
    assert np.all(data.slopes[~data.truth] == 0)
    assert np.all((data.slopes[data.truth] >= 0) & (data.slopes[data.truth] <= 1.0))


def _score_oracle(decisions, truth):
    V = sum(1 for d, t in zip(decisions, truth) if d and not t)
    S = sum(1 for d, t in zip(decisions, truth) if d and t)
    return V, S, V + S


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_score_matches_oracle(pairs):
    d = np.array([a for a, _ in pairs])
    t = np.array([b for _, b in pairs])
    assert _score(d, t) == _score_oracle(d, t)


@settings(max_examples=8)
@given(st.integers(0, 1000))
def test_replicate_accounting(b):
    cfg = SimConfig(**{**SMALL, "procedures": ("wabh-mmw", "wabh-const", "abh", "bh", "ten-rule")})
    rep = run_replicate(cfg, b)
    for V, S, R in rep.counts.values():
        assert V + S == R
        assert 0 <= S <= cfg.K and 0 <= V <= cfg.M - cfg.K


def test_replicate_keeps_pvalues():
    cfg = SimConfig(**SMALL)
    rep = run_replicate(cfg, 0, keep_pvalues=True)
    assert rep.pvalues.shape == (cfg.M,) and rep.truth.sum() == cfg.K
    assert np.isnan(rep.pvalues).sum() == rep.n_excluded
    assert run_replicate(cfg, 0).pvalues is None


def test_experiment_deterministic_across_workers():
    cfg = SimConfig(**SMALL)
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=3)
    assert a.rows() == b.rows()
    assert a.replicate_rows() == b.replicate_rows()
    assert [r.b for r in a.replicates] == list(range(cfg.B))


def test_replicate_streams_are_independent_of_b_order():
    cfg = SimConfig(**SMALL)
    assert run_replicate(cfg, 2).counts == run_experiment(cfg, workers=1).replicates[2].counts


def test_single_replicate_metrics():
    cfg = SimConfig(**{**SMALL, "B": 1})
    res = run_experiment(cfg, workers=1)
    for name, (V, S, R) in res.replicates[0].counts.items():
        m = res.metrics[name]
        assert m.fdr == (V / R if R else 0.0)
        assert m.power == S / cfg.K
        assert m.fdr_se == 0.0


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 10)), min_size=2, max_size=60))
def test_mc_se_bound(vs):
    V = np.array([v for v, _ in vs])
    S = np.array([s for _, s in vs])
    m = SimMetrics("bh", V, S, V + S, 10)
    bound = 0.5 / np.sqrt(m.B) * np.sqrt(m.B / (m.B - 1))  # ddof=1 correction
    assert m.fdr_se <= bound + 1e-12
    assert m.power_se <= bound + 1e-12
    assert 0 <= m.fdr <= 1 and 0 <= m.power <= 1


def test_aggregate_k_zero():
    cfg = SimConfig(grid=(5, 5), K=0, procedures=("bh",), B=2)
    reps = [ReplicateResult(0, {"bh": (0, 0, 0)}, 0), ReplicateResult(1, {"bh": (2, 0, 2)}, 0)]
    m = aggregate(cfg, reps)["bh"]
    assert m.fdr == 0.5
    assert np.isnan(m.power)


def test_config_validation():
    for bad in (dict(K=2500), dict(K=-1), dict(C=-1), dict(s=0), dict(theta=0), dict(n=2),
                dict(B=0), dict(alpha=1.0), dict(procedures=("magic",)), dict(grid=(10,))):
        with pytest.raises(DomainError):
            SimConfig(**bad)
    assert SimConfig(grid=(50, 50)).intercept_scale == 25.0
    assert SimConfig(grid=(100, 100)).intercept_scale == 50.0


def test_config_json_round_trip(tmp_path):
    cfg = SimConfig(grid=(20, 30), K=12, C=0.5, procedures=("bh", "abh"), seed=9)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert SimConfig.from_json(path) == cfg
    with pytest.raises(DomainError, match="unknown config keys"):
        SimConfig.from_dict({"grid": [5, 5], "bogus": 1})


def test_write_table_round_trip():
    res = run_experiment(SimConfig(**{**SMALL, "B": 2}), workers=1)
    fh = io.StringIO()
    write_table(res.rows(), RESULT_COLUMNS, fh)
    lines = fh.getvalue().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 1 + len(res.config.procedures)
    first = dict(zip(RESULT_COLUMNS, lines[1].split(",")))
    assert float(first["fdr"]) == res.rows()[0]["fdr"]


def test_null_pvalues_calibrated():
    # full-size grid; smaller grids make the leave-one-out burden a noisier
    # proxy for the subject effect
    cfg = SimConfig(grid=(50, 50), K=0, n=200, B=1, seed=11, procedures=("bh",))
    rep = run_replicate(cfg, 0, keep_pvalues=True)
    p = rep.pvalues[np.isfinite(rep.pvalues)]
    assert abs(np.mean(p <= 0.05) - 0.05) < 0.015
    assert stats.kstest(p, "uniform").pvalue > 0.01
    assert rep.counts["bh"][2] <= 5
