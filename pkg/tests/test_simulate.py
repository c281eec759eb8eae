import math

import numpy as np
import pytest

from jdpic import simulate
from jdpic.model import builtin_true_model, candidate
from jdpic.quasilik import ThresholdRule, classify
from jdpic.simulate import (
    Observations,
    PathConfig,
    SimulationError,
    euler_maruyama,
    format_path_csv,
    read_path_csv,
    simulate_path,
    simulate_replications,
    write_path_csv,
)

MODEL, PARAMS, LAM = builtin_true_model()
DRIFT_P, DIFF_P, JUMP_P = MODEL.split(PARAMS)


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(n_obs=0, h=0.1)
    with pytest.raises(ValueError):
        PathConfig(n_obs=10, h=0.1, substeps=0)
    with pytest.raises(ValueError):
        PathConfig(n_obs=10, h=-0.1)
    with pytest.raises(ValueError):
        PathConfig(n_obs=10, h=0.1, seed=-1)
    with pytest.raises(ValueError):
        PathConfig.from_horizon(1.0, 0.3)
    cfg = PathConfig.from_horizon(100.0, 0.01, burn_in_time=5.0)
    assert cfg.n_obs == 10_000
    assert cfg.T == pytest.approx(100.0)
    assert cfg.n_burn == 500


def test_observation_shape_and_times():
    cfg = PathConfig.from_horizon(3.0, 0.05, seed=4)
    obs = simulate_path(MODEL, PARAMS, LAM, cfg)
    assert obs.n == 60
    assert obs.values.size == 61
    assert obs.values[0] == 0.0
    assert obs.seed_used == 4
    assert not obs.values.flags.writeable
    np.testing.assert_allclose(obs.times[-1], 3.0)
    assert np.all((obs.jump_times >= 0) & (obs.jump_times <= 3.0))


def test_observations_validation():
    with pytest.raises(ValueError):
        Observations(0.1, np.array([1.0]))
    with pytest.raises(ValueError):
        Observations(0.1, np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        Observations(0.0, np.array([1.0, 2.0]))


def test_determinism_bytewise():
    cfg = PathConfig.from_horizon(10.0, 0.01, seed=123)
    a = simulate_path(MODEL, PARAMS, LAM, cfg)
    b = simulate_path(MODEL, PARAMS, LAM, cfg)
    assert a.values.tobytes() == b.values.tobytes()
    np.testing.assert_array_equal(a.jump_times, b.jump_times)


def test_different_seeds_differ():
    a = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(1.0, 0.01, seed=1))
    b = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(1.0, 0.01, seed=2))
    assert not np.array_equal(a.values, b.values)


def test_replications_seeding():
    cfg = PathConfig.from_horizon(2.0, 0.05, seed=40)
    runs = [simulate_replications(MODEL, PARAMS, LAM, cfg, 3) for _ in range(2)]
    for a, b in zip(*runs):
        assert a.values.tobytes() == b.values.tobytes()
    assert [p.seed_used for p in runs[0]] == [41, 42, 43]
    single = simulate_replications(MODEL, PARAMS, LAM, cfg, 1)[0]
    direct = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(2.0, 0.05, seed=41))
    assert single.values.tobytes() == direct.values.tobytes()
    with pytest.raises(ValueError):
        simulate_replications(MODEL, PARAMS, LAM, cfg, 0)


def test_replication_failure_carries_index(monkeypatch):
    calls = {"n": 0}
    real = simulate.euler_maruyama

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise SimulationError(17)
        return real(*args, **kw)

    monkeypatch.setattr(simulate, "euler_maruyama", flaky)
    with pytest.raises(SimulationError) as info:
        simulate_replications(MODEL, PARAMS, LAM, PathConfig.from_horizon(1.0, 0.1), 3)
    assert info.value.replication == 2
    assert info.value.step == 17


def test_rejects_parameters_outside_box():
    bad = PARAMS.copy()
    bad[1] = 50.0
    cfg = PathConfig.from_horizon(1.0, 0.1)
    with pytest.raises(ValueError):
        simulate_path(MODEL, bad, LAM, cfg)
    with pytest.raises(ValueError):
        simulate_path(MODEL, PARAMS, 20.0, cfg)


def test_diverging_path_reports_step():
    huge = np.array([1e308, 1e308])
    normals = np.ones(10)
    with pytest.raises(SimulationError) as info:
        euler_maruyama(MODEL, DRIFT_P, huge, 0.0, 1.0, normals)
    assert info.value.step >= 0


def test_degenerate_dynamics_stay_put():
    # zero drift, zero diffusion, no jumps
    out = euler_maruyama(MODEL, [0.0], [0.0, 0.0], 1.5, 0.01, np.random.default_rng(0).standard_normal(64), 4)
    np.testing.assert_array_equal(out, np.full(17, 1.5))


def test_zero_intensity_has_no_jumps():
    obs = simulate_path(MODEL, PARAMS, 0.0, PathConfig.from_horizon(10.0, 0.01, seed=3))
    assert obs.true_jump_count == 0


def test_jump_lands_at_exact_time():
    # one unit jump placed a quarter of the way into step 2 of a driftless, noiseless path
    out = euler_maruyama(
        MODEL,
        [0.0],
        [0.0, 0.0],
        0.0,
        0.1,
        np.zeros(5),
        1,
        np.array([2]),
        np.array([0.25]),
        np.array([1.0]),
    )
    np.testing.assert_array_equal(out, [0.0, 0.0, 0.0, 1.0, 1.0])


def test_mean_jump_count_matches_intensity():
    cfg = PathConfig.from_horizon(10.0, 0.05, seed=500)
    counts = np.array([p.true_jump_count for p in simulate_replications(MODEL, PARAMS, LAM, cfg, 400)])
    se = math.sqrt(LAM * 10.0 / counts.size)
    assert abs(counts.mean() - 10.0) < 3 * se


def test_burn_in_is_discarded():
    cfg = PathConfig.from_horizon(5.0, 0.05, burn_in_time=2.0, seed=9)
    with_burn = simulate_path(MODEL, PARAMS, LAM, cfg)
    assert with_burn.n == 100
    assert np.all(with_burn.jump_times <= 5.0 + 1e-12)
    assert with_burn.values[0] != 0.0


def test_refinement_convergence_order():
    # strong error of the endpoint against a 256-substep reference driven by
    # the same Brownian path; strong order 1/2 gives a ratio near sqrt(2)
    rng = np.random.default_rng(5)
    T, n_obs, ref = 1.0, 20, 256

    def endpoint(fine, sub):
        k = ref // sub
        z = fine.reshape(-1, k).sum(axis=1) / math.sqrt(k)
        return euler_maruyama(MODEL, DRIFT_P, DIFF_P, 0.0, T / z.size, z, z.size)[-1]

    e16, e32 = [], []
    for _ in range(100):
        fine = rng.standard_normal(n_obs * ref)
        x_ref = endpoint(fine, ref)
        e16.append(abs(endpoint(fine, 16) - x_ref))
        e32.append(abs(endpoint(fine, 32) - x_ref))
    ratio = np.mean(e16) / np.mean(e32)
    assert 1.1 <= ratio <= 2.0


@pytest.mark.slow
def test_many_replications_all_finite():
    cfg = PathConfig.from_horizon(30.0, 0.05, seed=1000)
    paths = simulate_replications(MODEL, PARAMS, LAM, cfg, 1000)
    assert all(np.all(np.isfinite(p.values)) for p in paths)


def _variance_gap(scale):
    gaps = []
    for seed in range(1, 11):
        obs = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(100.0, 0.01, seed=seed))
        cls = classify(obs, ThresholdRule(0.4, scale))
        v = np.var(obs.increments[cls.continuous_mask], ddof=1)
        expected = obs.h * np.mean(MODEL.diffusion(obs.values[:-1], DIFF_P) ** 2)
        gaps.append(abs(v / expected - 1))
    return max(gaps)


@pytest.mark.xfail(
    strict=True,
    reason="the h**0.4 cutoff sits below the diffusive increment sd, so the kept "
    "increments are heavily truncated and their variance is about 20% of h E[S]",
)
def test_continuous_increment_variance_literal_threshold():
    assert _variance_gap(1.0) < 0.15


def test_continuous_increment_variance_wide_threshold():
    assert _variance_gap(5.0) < 0.15


@pytest.mark.xfail(
    strict=True,
    reason="the drift -x^2/(1+x^2) is never positive, so the process drifts to "
    "-infinity instead of settling into a stationary law",
)
def test_ergodic_time_average():
    obs = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(500.0, 0.05, seed=8))
    half = obs.values.size // 2
    assert abs(obs.values[:half].mean() - obs.values[half:].mean()) < 0.5


def test_csv_round_trip(tmp_path):
    obs = simulate_path(MODEL, PARAMS, LAM, PathConfig.from_horizon(1.0, 0.05, seed=2))
    text = format_path_csv(obs)
    lines = text.splitlines()
    assert lines[0] == "t,x"
    assert len(lines) == obs.values.size + 1
    assert lines[2].startswith("0.050000000000000003,")
    path = tmp_path / "p.csv"
    write_path_csv(obs, path)
    back = read_path_csv(path)
    assert back.values.tobytes() == obs.values.tobytes()
    assert back.h == pytest.approx(obs.h, rel=1e-14)


def test_csv_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("time,value\n0,1\n1,2\n")
    with pytest.raises(ValueError):
        read_path_csv(p)
    p.write_text("t,x\n0,1\n1,2\n3,4\n")
    with pytest.raises(ValueError):
        read_path_csv(p)
    p.write_text("t,x\n0,1\n")
    with pytest.raises(ValueError):
        read_path_csv(p)


def test_generic_families_match_compiled_path():
    # the Python fallback must agree with the numba kernel
    import dataclasses

    m = candidate(1, 1, 2)
    generic = dataclasses.replace(
        m,
        drift=dataclasses.replace(m.drift, powers=None),
        diffusion=dataclasses.replace(m.diffusion, powers=None),
    )
    normals = np.random.default_rng(1).standard_normal(202)
    args = ([0.5, -1.0, 0.2], [1.0, 0.05, 2.0], 0.3, 0.01, normals, 10, np.array([5, 77]), np.array([0.5, 0.1]), np.array([1.0, -2.0]))
    np.testing.assert_allclose(euler_maruyama(generic, *args), euler_maruyama(m, *args), rtol=1e-13)
