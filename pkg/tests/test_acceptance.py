"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-4 are Monte Carlo runs and take most of the suite's wall time.
"""

from __future__ import annotations

import io
import math

import numpy as np
import pytest
from conftest import record_criterion

from jdpic import cli, density
from jdpic.estimate import FitOptions, fit, fit_continuous
from jdpic.experiment import ExperimentConfig, run_experiment
from jdpic.model import LAPLACE_JUMP, builtin_true_model, candidate, embed_params, NESTED_MAPS
from jdpic.pic import argmin_with_ties, chi2_tail, criterion, select
from jdpic.quasilik import ThresholdRule, classify, h1, h2, profile_lambda, total
from jdpic.simulate import PathConfig, simulate_path

pytestmark = pytest.mark.slow

RULE = ThresholdRule()
TABLE_SEED = 1
RELPRO_SEED = 10_000
CONSISTENCY_SEED = 20_000


@pytest.fixture(scope="module")
def tables():
    cfg = ExperimentConfig(n_rep=300, seed=TABLE_SEED)
    return {t.scenario: t for t in run_experiment(cfg)}


def _path(T, h, seed, lam=None):
    model, params, lam0 = builtin_true_model()
    cfg = PathConfig.from_horizon(T, h, seed=seed)
    return simulate_path(model, params, lam0 if lam is None else lam, cfg)


def test_criterion_1_table1(tables):
    t = tables[(100.0, 0.01)]
    valid = t.n_rep - t.drift_diffusion_failures
    share = t.drift_diffusion_counts[2, 1] / valid
    ok = abs(share - 0.847) <= 0.06
    record_criterion(
        1,
        "Drift3+Diffusion2 share at (100, 0.01)",
        ok,
        f"{share:.3f} over {valid} fits, target 0.847 +- 0.06",
    )
    assert ok


def test_criterion_2_table2(tables):
    order = [(30.0, 0.05), (50.0, 0.025), (100.0, 0.01)]
    jump1 = []
    for sc in order:
        t = tables[sc]
        jump1.append(t.jump_counts[0] / (t.n_rep - t.jump_failures))
    jump2_share = 1.0 - jump1[-1]
    drops = np.diff(jump1)
    inversions = drops[drops > 0]
    trend_ok = inversions.size == 0 or (inversions.size == 1 and inversions[0] <= 0.02)
    ok = abs(jump2_share - 0.951) <= 0.05 and trend_ok
    record_criterion(
        2,
        "Jump2 share and Jump1 trend",
        ok,
        f"Jump2 {jump2_share:.3f} (target 0.951 +- 0.05); "
        f"Jump1 {' -> '.join(f'{v:.3f}' for v in jump1)}",
    )
    assert ok


def test_criterion_3_nested_overfit():
    small = candidate(3, 2, 2)
    big = candidate(2, 2, 2)
    assert big.dim - small.dim == 1
    n = 400
    picked_big = 0
    for r in range(1, n + 1):
        obs = _path(100.0, 0.01, RELPRO_SEED + r)
        out = select([small, big], obs, RULE)
        assert not out.failures
        picked_big += out.chosen_index == 1
    freq = picked_big / n
    target = chi2_tail(1, 2.0)
    ok = abs(freq - target) <= 0.06
    record_criterion(
        3, "overfit frequency, delta p = 1", ok, f"{freq:.4f} vs {target:.4f} +- 0.06 over {n} paths"
    )
    assert ok


def _continuous_estimates(T, h, n_seeds):
    model = candidate(3, 2, 2)
    out = []
    for r in range(1, n_seeds + 1):
        obs = _path(T, h, CONSISTENCY_SEED + r)
        st = fit_continuous(model, obs, classify(obs, RULE), FitOptions())
        assert st.converged
        out.append(st.params)
    return np.array(out)  # columns: theta31, beta21, beta22


def test_criterion_4_consistency_and_rate():
    fine = _continuous_estimates(100.0, 0.01, 200)
    coarse = _continuous_estimates(30.0, 0.05, 200)
    mean = fine.mean(axis=0)
    sigma_ok = bool(np.all(np.abs(mean[1:] - [2.0, 3.0]) < 0.15))
    theta_ok = abs(mean[0] + 1.0) < 0.2
    ratio = fine.std(axis=0, ddof=1) / coarse.std(axis=0, ddof=1)
    diff_target = math.sqrt(600 / 10000)
    drift_target = math.sqrt(30 / 100)
    sigma_rate_ok = bool(np.all((ratio[1:] >= 0.5 * diff_target) & (ratio[1:] <= 2 * diff_target)))
    drift_rate_ok = 0.5 * drift_target <= ratio[0] <= 2 * drift_target
    ok = sigma_ok and theta_ok and sigma_rate_ok and drift_rate_ok
    record_criterion(
        4,
        "estimator consistency and rate",
        ok,
        f"mean (theta31, beta21, beta22) = ({mean[0]:.3f}, {mean[1]:.3f}, {mean[2]:.3f}); "
        f"sd ratios ({ratio[0]:.3f}, {ratio[1]:.3f}, {ratio[2]:.3f}) vs "
        f"drift {drift_target:.3f}, diffusion {diff_target:.3f} (factor 2)",
    )
    assert ok


def test_criterion_5_density_certificates():
    m = density.ConstCoeffModel(1.0, 1.0, LAPLACE_JUMP, (0.0, 2.0))
    hs = (0.1, 0.02, 0.01)
    certs = [density.certify_ktesti_bound(m, k, hs, 0.5, 0.9) for k in (1, 2)]
    slopes = [density.scaling_slope(m, k, (0.1, 0.05, 0.02, 0.01)) for k in (1, 2)]
    ok = all(c.passed for c in certs) and all(abs(s - k) <= 0.1 for s, k in zip(slopes, (1, 2)))
    record_criterion(
        5,
        "k-jump density bound",
        ok,
        "; ".join(
            f"k={c.k} C={c.empirical_C:.4f} stability {c.stability_ratio:.3f} slope {s:.3f}"
            for c, s in zip(certs, slopes)
        ),
    )
    assert ok


def test_criterion_6_convolution_lemma():
    z = np.linspace(-20.0, 20.0, 161)
    a_values = (0.1, 0.01, 0.001)
    worst = {}
    trend_ok = True
    for u in (0.5, 1.0, 2.0):
        per_a = density.lemma_ratios(a_values, u, z).max(axis=1)
        worst[u] = float(per_a.max())
        trend_ok &= bool(np.all(np.diff(per_a) <= 1e-12))
    ok = all(math.isfinite(v) and v < 10 for v in worst.values()) and trend_ok
    record_criterion(
        6,
        "Gaussian-exponential convolution ratio",
        ok,
        ", ".join(f"u={u:g}: max {v:.4f}" for u, v in worst.items())
        + f"; non-increasing as a shrinks: {trend_ok}",
    )
    assert ok


def test_criterion_7_property_suite(tmp_path):
    model, params, lam = builtin_true_model()
    checks = {}
    rng = np.random.default_rng(7)

    obs = _path(30.0, 0.05, 77)
    cls = classify(obs, RULE)
    d, s, j = model.split(params)
    checks["H additivity"] = total(obs, params, lam, model, cls) == h1(obs, d, s, model, cls) + h2(
        obs, j, lam, model, cls
    )

    grid_ok = True
    for _ in range(10):
        jp = model.jump_box.sample(rng)
        lam_hat = profile_lambda(obs, jp, model, cls).value
        best = h2(obs, jp, lam_hat, model, cls)
        for lg in np.linspace(*model.lambda_bounds, 100):
            grid_ok &= best >= h2(obs, jp, lg, model, cls)
    checks["lambda profile optimality"] = bool(grid_ok)

    small, big = candidate(3, 2, 2), candidate(2, 2, 2)
    opts = FitOptions()
    fs = fit(small, obs, RULE, opts, cls=cls)
    fb = fit(big, obs, RULE, opts, cls=cls)
    checks["nested dominance"] = fb.h1_value >= fs.h1_value - 1e-6
    emb = embed_params(NESTED_MAPS[("drift", 3, 2)], fs.drift_params)
    checks["nested embedding"] = np.allclose(big.drift(obs.values, emb), small.drift(obs.values, fs.drift_params), atol=1e-12)

    h_tot = rng.normal(size=6) * 10
    dims = [6, 5, 5, 4, 4, 3]
    base = argmin_with_ties([criterion(v, p) for v, p in zip(h_tot, dims)], dims)
    shifted = argmin_with_ties([criterion(v + 123.4, p) for v, p in zip(h_tot, dims)], dims)
    checks["argmin invariance"] = base == shifted

    outputs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        rc = cli.main(
            ["reproduce", "--n-rep", "3", "--seed", "1", "--scenarios", "30:0.05", "--output", str(path)],
            stdout=io.StringIO(),
        )
        assert rc == 0
        outputs.append(path.read_bytes())
    checks["reproduce determinism"] = outputs[0] == outputs[1]

    ok = all(checks.values())
    record_criterion(
        7, "property suite", ok, ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items())
    )
    assert ok
