"""Configuration and harness tests on miniature problem sizes."""

import json

import numpy as np
import pytest

from dsinv import harness, io
from dsinv.config import DEFAULT_CONFIG, ExperimentConfig
from dsinv.errors import ConfigurationError
from dsinv.units import SECONDS_PER_DAY

TINY = {
    "grids": {"truth": [10, 10], "inversion": [8, 8]},
    "prior": {"n_modes": 4},
    "dsi": {"n_members": 25, "n_samples": 40, "ell_sweep": [5, 10, 25]},
    "mcmc": {"n_iterations": 300, "thin": 3},
    "map": {"n_samples": 40},
    "seed": 123,
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    config = ExperimentConfig(TINY)
    truth = harness.generate_truth(config, out, export_history=False)
    data = harness.load_observations(truth["data"])
    return config, out, truth, data


def test_default_config_counts():
    config = ExperimentConfig()
    schedule = config.schedule()
    obs = config.observation_design(schedule)
    pred = config.prediction_design(schedule)
    assert obs.size == 90  # 9 wells x 10 times
    assert pred.size == 360  # 9 wells x 40 times
    assert np.allclose(np.diff(obs.times), 8 * SECONDS_PER_DAY)
    assert schedule.horizon == 160 * SECONDS_PER_DAY
    assert config.noise_std_pa == pytest.approx(0.2e6)  # 1% of 20 MPa
    assert config.grid("truth").nx == 80
    assert config.grid("inversion").nx == 50


def test_config_hash_stability_and_override():
    a = ExperimentConfig()
    b = ExperimentConfig({})
    assert a.config_hash == b.config_hash
    c = ExperimentConfig({"seed": 1})
    assert c.config_hash != a.config_hash


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigurationError):
        ExperimentConfig({"grids": {"truth": [10, 10], "inversion": [10, 10]}})
    ExperimentConfig({"grids": {"truth": [10, 10], "inversion": [10, 10]}},
                     allow_inverse_crime=True)  # explicit override allowed
    with pytest.raises(ConfigurationError):
        ExperimentConfig({"typo_key": 1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig({"mcmc": {"n_iterations": 0}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig({"observation": {"spacing_days": 6.0}})  # not a dt multiple
    with pytest.raises(ConfigurationError):
        ExperimentConfig({"dsi": {"n_members": 1}})


def test_prediction_block_shape():
    config = ExperimentConfig()
    n_wells, n_times, horizon = config.prediction_block_shape()
    assert (n_wells, n_times, horizon) == (9, 40, 20)


def test_generate_truth_artifacts(tiny_run):
    config, out, truth, data = tiny_run
    assert truth["n_observations"] == 90
    field, meta = io.read_field(truth["field"])
    assert field.grid.nx == 10  # truth drawn on the fine grid
    assert meta["config_hash"] == config.config_hash
    assert data["p_true_pa"].shape == (360,)
    assert len(data["d_obs_pa"]) == 90
    # noisy data differs from clean by the noise scale
    residual = data["d_obs_pa"] - data["d_clean_pa"]
    assert 0.05e6 < residual.std() < 0.5e6


def test_generate_truth_deterministic(tmp_path):
    config = ExperimentConfig(TINY)
    a = harness.generate_truth(config, tmp_path / "a", export_history=False)
    b = harness.generate_truth(config, tmp_path / "b", export_history=False)
    assert (a["field"].read_bytes() == b["field"].read_bytes())
    assert (a["data"].read_text() == b["data"].read_text())


def test_generate_truth_zero_noise_override(tmp_path):
    overrides = dict(TINY, **{"noise": {"relative_std": 0.0}})
    config = ExperimentConfig(overrides)
    truth = harness.generate_truth(config, tmp_path, export_history=False)
    data = harness.load_observations(truth["data"])
    assert np.array_equal(data["d_obs_pa"], data["d_clean_pa"])


def test_run_dsi_outputs(tiny_run):
    config, out, truth, data = tiny_run
    report = harness.run_dsi(config, data, out)
    assert report["n_members"] == 25
    assert report["n_success"] + report["n_failed"] + report["n_non_physical"] == 25
    samples, meta = io.read_sample_matrix(out / "dsi_samples.dse")
    assert samples.shape == (40, 360)
    assert meta["config_hash"] == config.config_hash
    prior, _ = io.read_sample_matrix(out / "prior_samples.dse")
    assert prior.shape == (report["n_success"], 360)


def test_run_dsi_deterministic(tiny_run, tmp_path):
    config, out, truth, data = tiny_run
    r1 = harness.run_dsi(config, data, tmp_path / "r1")
    r2 = harness.run_dsi(config, data, tmp_path / "r2")
    b1 = (tmp_path / "r1" / "dsi_samples.dse").read_bytes()
    b2 = (tmp_path / "r2" / "dsi_samples.dse").read_bytes()
    assert b1 == b2
    keep = lambda r: {k: v for k, v in r.items() if not k.startswith("_") and k != "timing_s"}
    assert keep(r1) == keep(r2)


def test_sweep_ell_nested_outputs(tiny_run):
    config, out, truth, data = tiny_run
    reports = harness.sweep_ell(config, data, out / "sweep")
    assert sorted(reports) == [5, 10, 25]
    for ell in (5, 10, 25):
        samples, _ = io.read_sample_matrix(out / "sweep" / f"dsi_samples_ell{ell}.dse")
        assert samples.shape == (40, 360)
        ens, _ = io.read_ensemble(out / "sweep" / f"dsi_ensemble_ell{ell}.dse")
        assert ens.n_members == ell
    # nested: the 5-member ensemble is the head of the 10-member one
    e5, _ = io.read_ensemble(out / "sweep" / "dsi_ensemble_ell5.dse")
    e10, _ = io.read_ensemble(out / "sweep" / "dsi_ensemble_ell10.dse")
    assert np.array_equal(e5.params, e10.params[:5])


def test_run_mcmc_outputs(tiny_run):
    config, out, truth, data = tiny_run
    report = harness.run_mcmc(config, data, out)
    kept = 4 * ((300 - 150) // 3)
    assert report["n_retained"] == kept
    samples, _ = io.read_sample_matrix(out / "mcmc_samples.dse")
    assert samples.shape[1] == 360
    assert 0.0 <= report["acceptance_rate"] <= 1.0


def test_run_map_outputs(tiny_run):
    config, out, truth, data = tiny_run
    report = harness.run_map(config, data, out)
    assert report["forward_like_solves"] > 0
    samples, _ = io.read_sample_matrix(out / "map_samples.dse")
    assert samples.shape == (40, 360)
    log_lines = (out / "map_log.jsonl").read_text().strip().splitlines()
    assert json.loads(log_lines[-1])["event"] == "summary"


def test_compare_self_distance_zero(tiny_run):
    config, out, truth, data = tiny_run
    report = harness.compare(
        {"a": out / "dsi_samples.dse", "b": out / "dsi_samples.dse"}, data, out / "cmp"
    )
    assert report["distances"]["a|b"]["mean_w1_mpa"] == 0.0
    assert (out / "cmp" / "comparison.json").exists()
    assert (out / "cmp" / "plot_well_trajectories.csv").exists()
    assert (out / "cmp" / "plot_final_pressure_marginals.csv").exists()


def test_compare_point_masses_hand_computed(tmp_path):
    # two point masses one MPa apart: W1 is exactly 1 MPa
    data = {
        "config_hash": "h",
        "prediction": {"times_days": [4.0], "well_indices": [0]},
        "p_true_pa": np.array([0.0]),
    }
    io.write_sample_matrix(tmp_path / "a.dse", np.zeros((50, 1)), config_hash="h")
    io.write_sample_matrix(tmp_path / "b.dse", np.full((30, 1), 1.0e6), config_hash="h")
    report = harness.compare(
        {"a": tmp_path / "a.dse", "b": tmp_path / "b.dse"}, data, tmp_path / "out"
    )
    assert report["distances"]["a|b"]["mean_w1_mpa"] == pytest.approx(1.0)


def test_compare_refuses_mixed_hashes(tmp_path):
    data = {
        "config_hash": "h1",
        "prediction": {"times_days": [4.0], "well_indices": [0]},
        "p_true_pa": np.array([0.0]),
    }
    io.write_sample_matrix(tmp_path / "a.dse", np.zeros((10, 1)), config_hash="h1")
    io.write_sample_matrix(tmp_path / "b.dse", np.zeros((10, 1)), config_hash="h2")
    files = {"a": tmp_path / "a.dse", "b": tmp_path / "b.dse"}
    with pytest.raises(ConfigurationError):
        harness.compare(files, data, tmp_path / "out")
    harness.compare(files, data, tmp_path / "out", allow_mixed_hash=True)


def test_compare_rejects_dimension_mismatch(tmp_path):
    data = {
        "config_hash": "h",
        "prediction": {"times_days": [4.0, 8.0], "well_indices": [0]},
        "p_true_pa": np.zeros(2),
    }
    io.write_sample_matrix(tmp_path / "a.dse", np.zeros((10, 3)), config_hash="h")
    with pytest.raises(ConfigurationError):
        harness.compare({"a": tmp_path / "a.dse"}, data, tmp_path / "out")


def test_problem_shares_simulation_between_models():
    config = ExperimentConfig(TINY)
    problem = harness.build_problem(config, "inversion")
    xi = np.zeros(problem.n_params)
    problem.forward(xi)
    count = problem.sim_count
    problem.predictive(xi)  # cache hit: same simulation
    assert problem.sim_count == count


def test_mcmc_zero_iterations_is_config_error():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dict(TINY, mcmc={"n_iterations": 0}))


def test_default_schedule_matches_benchmark_pattern():
    sched = ExperimentConfig().schedule()
    rates_day = sched.rates * SECONDS_PER_DAY
    assert np.allclose(rates_day[0], [50, 0, 50, 0, 50, 0, 50, 0, 50])
    assert np.allclose(rates_day[1], [0, 50, 0, 50, 0, 50, 0, 50, 0])
    assert np.allclose(rates_day[2], 0.0)
    assert np.allclose(rates_day[3], 25.0)
    assert DEFAULT_CONFIG["noise"]["relative_std"] == 0.01
