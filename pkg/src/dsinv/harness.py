"""Experiment harness: truth synthesis, method execution, comparison.

Everything here is a deterministic function of (config, master seed):
per-purpose RNG streams are spawned from the master seed, artifacts
embed the config hash, and re-runs reproduce output files byte for
byte (report timing fields aside).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bayes, dsi, io, mcmc, sim2d
from .config import ExperimentConfig
from .errors import ConfigurationError, SimulationFailed
from .grf import KLBasis, build_kl_basis, exp_field, sample_field
from .sim2d import FluidConfig, WellSchedule, WellTimeDesign
from .transforms import PressureRiseCapTransform
from .units import pa_to_mpa, seconds_to_days

# spawn keys for the per-purpose RNG streams
_STREAM_TRUTH = 0
_STREAM_NOISE = 1
_STREAM_ENSEMBLE = 2
_STREAM_DSI_SAMPLING = 3
_STREAM_MCMC = 4
_STREAM_MAP_SAMPLING = 5


def _stream_seed(master_seed: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(stream,))


@dataclass
class PressureProblem:
    """Forward and predictive models over KL coefficients on one grid.

    Both models share the underlying simulation; a small cache keyed on
    the coefficient vector means evaluating forward then predictive at
    the same point costs a single solve.
    """

    basis: KLBasis
    schedule: WellSchedule
    fluid: FluidConfig
    dt: float
    obs_design: WellTimeDesign
    pred_design: WellTimeDesign
    _cache: dict = field(default_factory=dict, repr=False)
    sim_count: int = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def n_params(self) -> int:
        return self.basis.n_modes

    def simulate_xi(self, xi) -> sim2d.PressureHistory:
        xi = np.asarray(xi, dtype=float)
        key = xi.tobytes()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        perm = exp_field(sample_field(self.basis, xi))
        history = sim2d.simulate(perm, self.schedule, self.fluid, self.dt)
        self.sim_count += 1
        if len(self._cache) >= 8:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = history
        return history

    def forward(self, xi) -> np.ndarray:
        return sim2d.observe(self.simulate_xi(xi), self.obs_design)

    def predictive(self, xi) -> np.ndarray:
        return sim2d.predict(self.simulate_xi(xi), self.pred_design)

    def prior_sampler(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.n_params)


@dataclass
class GaussianLogLike:
    """Log-likelihood of the observed data under iid Gaussian noise."""

    problem: PressureProblem
    d_obs: np.ndarray
    noise: bayes.NoiseModel

    def __call__(self, xi) -> float:
        residual = self.noise.whiten(self.d_obs - self.problem.forward(xi))
        return -0.5 * float(residual @ residual)


def build_problem(config: ExperimentConfig, which_grid: str) -> PressureProblem:
    grid = config.grid(which_grid)
    basis = build_kl_basis(grid, config.covariance_model(), config.n_modes)
    schedule = config.schedule()
    return PressureProblem(
        basis=basis,
        schedule=schedule,
        fluid=config.fluid(),
        dt=config.dt,
        obs_design=config.observation_design(schedule),
        pred_design=config.prediction_design(schedule),
    )


def generate_truth(config: ExperimentConfig, out_dir, export_history: bool = True) -> dict:
    """Draw the true system on the fine grid and synthesise noisy data.

    Returns the written artifact paths. A failing truth draw is redrawn
    from the next sub-stream, with the redraw count recorded.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config, "truth")
    chash = config.config_hash

    redraws = 0
    while True:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(_STREAM_TRUTH, redraws))
        )
        xi_true = rng.standard_normal(problem.n_params)
        try:
            history = problem.simulate_xi(xi_true)
            break
        except SimulationFailed:
            redraws += 1
            if redraws > 20:
                raise

    log_perm = sample_field(problem.basis, xi_true)
    d_clean = sim2d.observe(history, problem.obs_design)
    p_true = sim2d.predict(history, problem.pred_design)

    noise_rng = np.random.default_rng(_stream_seed(config.seed, _STREAM_NOISE))
    noise_std = config.noise_std_pa
    d_obs = d_clean + noise_std * noise_rng.standard_normal(d_clean.shape[0])

    field_path = out / "truth_log_permeability.dsf"
    io.write_field(field_path, log_perm, seed=config.seed, config_hash=chash)
    io.write_kl_basis(out / "truth_kl_basis.dskl", problem.basis,
                      seed=config.seed, config_hash=chash)
    io.kl_basis_to_csv(out / "truth_kl_spectrum.csv", problem.basis)

    history_dir = out / "truth_history"
    if export_history:
        history_dir.mkdir(exist_ok=True)
        for i, t in enumerate(history.times):
            io.write_field(
                history_dir / f"pressure_day{seconds_to_days(t):07.2f}.dsf",
                history.field_at(i),
                seed=config.seed,
                config_hash=chash,
            )

    data_path = out / "observations.json"
    payload = {
        "config_hash": chash,
        "seed": config.seed,
        "noise_std_pa": noise_std,
        "truth_redraws": redraws,
        "observation": {
            "well_indices": list(problem.obs_design.well_indices),
            "times_days": seconds_to_days(problem.obs_design.times).tolist(),
        },
        "prediction": {
            "well_indices": list(problem.pred_design.well_indices),
            "times_days": seconds_to_days(problem.pred_design.times).tolist(),
        },
        "d_obs_pa": d_obs.tolist(),
        "d_clean_pa": d_clean.tolist(),
        "p_true_pa": p_true.tolist(),
    }
    with open(data_path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)

    return {
        "field": field_path,
        "data": data_path,
        "history_dir": history_dir if export_history else None,
        "n_observations": d_obs.shape[0],
        "redraws": redraws,
    }


def load_observations(data_path) -> dict:
    try:
        with open(data_path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read data file {data_path}: {exc}") from exc
    payload["d_obs_pa"] = np.asarray(payload["d_obs_pa"], dtype=float)
    payload["d_clean_pa"] = np.asarray(payload["d_clean_pa"], dtype=float)
    payload["p_true_pa"] = np.asarray(payload["p_true_pa"], dtype=float)
    return payload


def _check_hash(config: ExperimentConfig, payload: dict):
    if payload["config_hash"] != config.config_hash:
        raise ConfigurationError(
            "data file was generated under a different config "
            f"({payload['config_hash']} != {config.config_hash})"
        )


def build_transform(config: ExperimentConfig):
    spec_block = config.raw["dsi"]["transform"]
    if spec_block is None:
        return None
    if spec_block.get("type") != "pressure_rise_cap":
        raise ConfigurationError(f"unknown transform type {spec_block.get('type')!r}")
    n_wells, n_times, horizon_index = config.prediction_block_shape()
    return PressureRiseCapTransform(
        n_wells=n_wells,
        n_times=n_times,
        horizon_index=horizon_index,
        delta_mpa=spec_block["delta_mpa"],
    )


def run_dsi(config: ExperimentConfig, data: dict, out_dir, workers: int = 1,
            ell: int | None = None, ensemble: dsi.Ensemble | None = None) -> dict:
    """DSI end to end: prior ensemble, conditioning, predictive samples."""
    _check_hash(config, data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash
    n_members = int(ell if ell is not None else config.raw["dsi"]["n_members"])

    t0 = time.perf_counter()
    retained_fraction = None
    if ensemble is None:
        problem = build_problem(config, "inversion")
        retained_fraction = problem.basis.retained_fraction
        ensemble = dsi.build_ensemble(
            problem.prior_sampler,
            problem.forward,
            problem.predictive,
            n_members=n_members,
            seed=_stream_seed(config.seed, _STREAM_ENSEMBLE),
            workers=workers,
        )
    elif ensemble.n_members != n_members:
        ensemble = ensemble.take(n_members)

    noise_cov = np.eye(data["d_obs_pa"].shape[0]) * config.noise_std_pa**2
    transform = build_transform(config)
    samples = dsi.dsi_pipeline(
        ensemble,
        data["d_obs_pa"],
        noise_cov,
        transform=transform,
        n_samples=int(config.raw["dsi"]["n_samples"]),
        seed=_stream_seed(config.seed, _STREAM_DSI_SAMPLING),
    )
    elapsed = time.perf_counter() - t0

    suffix = f"_ell{n_members}" if ell is not None else ""
    ens_path = out / f"dsi_ensemble{suffix}.dse"
    samples_path = out / f"dsi_samples{suffix}.dse"
    prior_path = out / f"prior_samples{suffix}.dse"
    io.write_ensemble(ens_path, ensemble, seed=config.seed, config_hash=chash)
    io.write_sample_matrix(samples_path, samples, seed=config.seed, config_hash=chash)
    io.write_sample_matrix(
        prior_path, ensemble.preds[ensemble.success_mask], seed=config.seed, config_hash=chash
    )

    report = {
        "method": "dsi",
        "config_hash": chash,
        "seed": config.seed,
        "n_members": ensemble.n_members,
        "n_success": ensemble.n_success,
        "n_failed": int(np.sum(ensemble.status == dsi.MemberStatus.FAILED)),
        "n_non_physical": int(np.sum(ensemble.status == dsi.MemberStatus.NON_PHYSICAL)),
        "n_samples": samples.shape[0],
        "simulation_count": ensemble.n_members,
        "kl_retained_fraction": retained_fraction,
        "transform": transform.describe() if transform is not None else None,
        "timing_s": elapsed,
        "samples_file": samples_path.name,
        "prior_samples_file": prior_path.name,
        "ensemble_file": ens_path.name,
    }
    with open(out / f"dsi_report{suffix}.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    report["_ensemble"] = ensemble
    report["_samples"] = samples
    return report


def sweep_ell(config: ExperimentConfig, data: dict, out_dir, workers: int = 1) -> dict:
    """DSI at every ensemble size in the configured sweep list.

    One maximal ensemble is built and leading subsets are reused, so
    the sweep costs max(ell) simulations in total and smaller runs are
    nested within larger ones.
    """
    sizes = sorted(int(v) for v in config.raw["dsi"]["ell_sweep"])
    if not sizes:
        raise ConfigurationError("ell_sweep is empty")
    problem = build_problem(config, "inversion")
    full = dsi.build_ensemble(
        problem.prior_sampler,
        problem.forward,
        problem.predictive,
        n_members=max(sizes),
        seed=_stream_seed(config.seed, _STREAM_ENSEMBLE),
        workers=workers,
    )
    reports = {}
    for ell in sizes:
        reports[ell] = run_dsi(
            config, data, out_dir, workers=workers, ell=ell, ensemble=full.take(ell)
        )
    return reports


def run_mcmc(config: ExperimentConfig, data: dict, out_dir, workers: int = 1) -> dict:
    """Reference posterior predictive via pCN over the KL coefficients."""
    _check_hash(config, data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash
    block = config.raw["mcmc"]

    t0 = time.perf_counter()
    problem = build_problem(config, "inversion")
    noise = bayes.NoiseModel.iid(config.noise_std_pa, data["d_obs_pa"].shape[0])
    log_like = GaussianLogLike(problem=problem, d_obs=data["d_obs_pa"], noise=noise)
    chain_config = mcmc.ChainConfig(
        n_chains=int(block["n_chains"]),
        n_iterations=int(block["n_iterations"]),
        n_params=problem.n_params,
        burn_in=float(block["burn_in"]),
        beta=float(block["beta"]),
        thin=int(block["thin"]),
        seed=config.seed,
        adapt_beta=bool(block["adapt_beta"]),
    )
    result = mcmc.run_chains(chain_config, log_like, workers=workers)
    preds, push_failures = mcmc.push_predictive(result.samples, problem.predictive,
                                                workers=workers)
    elapsed = time.perf_counter() - t0

    samples_path = out / "mcmc_samples.dse"
    io.write_sample_matrix(samples_path, preds, seed=config.seed, config_hash=chash)
    params_path = out / "mcmc_parameter_samples.dse"
    retained = result.samples
    io.write_ensemble(
        params_path,
        dsi.Ensemble(
            params=retained,
            data=np.empty((retained.shape[0], 0)),
            preds=np.empty((retained.shape[0], 0)),
            status=np.zeros(retained.shape[0], dtype=np.uint8),
        ),
        seed=config.seed,
        config_hash=chash,
    )
    n_sims = chain_config.n_chains * (chain_config.n_iterations + 1) + result.samples.shape[0]
    report = {
        "method": "mcmc",
        "config_hash": chash,
        "seed": config.seed,
        "n_chains": chain_config.n_chains,
        "n_iterations": chain_config.n_iterations,
        "n_retained": int(result.samples.shape[0]),
        "acceptance_rate": result.acceptance_rate,
        "proposal_failures": result.failure_count,
        "push_failures": push_failures,
        "max_rhat": float(np.max(result.rhat)),
        "min_ess": float(np.min(result.ess)),
        "final_betas": result.final_betas.tolist(),
        "kl_retained_fraction": problem.basis.retained_fraction,
        "simulation_count": n_sims,
        "timing_s": elapsed,
        "samples_file": samples_path.name,
        "parameter_samples_file": params_path.name,
    }
    with open(out / "mcmc_report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    report["_chain_result"] = result
    report["_samples"] = preds
    return report


def run_map(config: ExperimentConfig, data: dict, out_dir, workers: int = 1) -> dict:
    """MAP estimation plus linearised predictive sampling."""
    _check_hash(config, data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash
    block = config.raw["map"]

    t0 = time.perf_counter()
    problem = build_problem(config, "inversion")
    noise = bayes.NoiseModel.iid(config.noise_std_pa, data["d_obs_pa"].shape[0])
    options = bayes.MapOptions(
        max_iterations=int(block["max_iterations"]),
        grad_tol=float(block["grad_tol"]),
        fd_step=float(block["fd_step"]),
        max_halvings=int(block["max_halvings"]),
        workers=workers,
    )
    posterior = bayes.map_estimate(
        data["d_obs_pa"], problem.forward, noise, problem.n_params, options
    )
    predictive = bayes.linearized_predictive(
        posterior, problem.predictive, h=options.fd_step, workers=workers
    )
    rng = np.random.default_rng(_stream_seed(config.seed, _STREAM_MAP_SAMPLING))
    samples = predictive.draw(rng, int(block["n_samples"]))
    elapsed = time.perf_counter() - t0

    samples_path = out / "map_samples.dse"
    io.write_sample_matrix(samples_path, samples, seed=config.seed, config_hash=chash)
    with open(out / "map_log.jsonl", "w") as fh:
        fh.write("\n".join(posterior.report_lines()) + "\n")
    report = {
        "method": "map",
        "config_hash": chash,
        "seed": config.seed,
        "converged": posterior.converged,
        "iterations": posterior.n_iterations,
        "kl_retained_fraction": problem.basis.retained_fraction,
        "forward_like_solves": posterior.solve_count + 2 * problem.n_params,
        "n_samples": samples.shape[0],
        "simulation_count": posterior.solve_count + 2 * problem.n_params + 1,
        "timing_s": elapsed,
        "samples_file": samples_path.name,
    }
    with open(out / "map_report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    report["_posterior"] = posterior
    report["_predictive"] = predictive
    report["_samples"] = samples
    return report


def _marginal_summary(samples: np.ndarray) -> dict:
    lo, hi = np.percentile(samples, [2.5, 97.5], axis=0)
    return {
        "mean": samples.mean(axis=0),
        "std": samples.std(axis=0, ddof=1),
        "lo95": lo,
        "hi95": hi,
    }


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """W1 between two empirical 1D distributions (quantile integral)."""
    import scipy.stats

    return float(scipy.stats.wasserstein_distance(a, b))


def compare(sample_files: dict, data: dict, out_dir, allow_mixed_hash: bool = False,
            method_reports: dict | None = None) -> dict:
    """Cross-method marginal summaries, W1 distances, truth coverage.

    ``sample_files`` maps method name -> sample matrix path. Plot data
    is emitted as one CSV per figure kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times_days = np.asarray(data["prediction"]["times_days"], dtype=float)
    wells = list(data["prediction"]["well_indices"])
    n_wells, n_times = len(wells), times_days.shape[0]
    p_true = data["p_true_pa"]

    matrices = {}
    hashes = {}
    for name, path in sample_files.items():
        samples, meta = io.read_sample_matrix(path)
        if samples.shape[1] != n_wells * n_times:
            raise ConfigurationError(
                f"{name}: sample dimension {samples.shape[1]} does not match the "
                f"prediction design ({n_wells} wells x {n_times} times)"
            )
        matrices[name] = samples
        hashes[name] = meta["config_hash"]
    if len(set(hashes.values()) | {data["config_hash"]}) > 1 and not allow_mixed_hash:
        raise ConfigurationError(f"mixed config hashes across inputs: {hashes}")

    methods = {}
    final_idx = np.arange(n_wells) * n_times + (n_times - 1)
    for name, samples in matrices.items():
        summary = _marginal_summary(samples)
        covered = (p_true >= summary["lo95"]) & (p_true <= summary["hi95"])
        methods[name] = {
            "n_samples": int(samples.shape[0]),
            "truth_coverage_fraction": float(np.mean(covered)),
            "final_coverage_by_well": covered[final_idx].tolist(),
            "final_mean_mpa": pa_to_mpa(summary["mean"][final_idx]).tolist(),
            "final_std_mpa": pa_to_mpa(summary["std"][final_idx]).tolist(),
            "final_band_width_mpa": pa_to_mpa(
                summary["hi95"][final_idx] - summary["lo95"][final_idx]
            ).tolist(),
        }

    names = sorted(matrices)
    distances = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            per_marginal = np.array(
                [wasserstein1(matrices[a][:, j], matrices[b][:, j])
                 for j in range(n_wells * n_times)]
            )
            distances[f"{a}|{b}"] = {
                "mean_w1_mpa": pa_to_mpa(float(per_marginal.mean())),
                "max_w1_mpa": pa_to_mpa(float(per_marginal.max())),
                "final_w1_mpa": pa_to_mpa(per_marginal[final_idx]).tolist(),
            }

    report = {
        "config_hash": data["config_hash"],
        "prediction_times_days": times_days.tolist(),
        "well_indices": wells,
        "methods": methods,
        "distances": distances,
        "timing": {
            name: (method_reports or {}).get(name, {}).get("timing_s")
            for name in names
        },
        "simulation_counts": {
            name: (method_reports or {}).get(name, {}).get("simulation_count")
            for name in names
        },
    }
    with open(out / "comparison.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)

    _write_trajectory_csv(out / "plot_well_trajectories.csv", matrices, times_days,
                          n_wells, n_times, p_true)
    _write_marginal_csv(out / "plot_final_pressure_marginals.csv", matrices, final_idx,
                        p_true)
    return report


def _write_trajectory_csv(path, matrices, times_days, n_wells, n_times, p_true):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "well", "time_days", "mean_mpa", "lo95_mpa",
                         "hi95_mpa", "truth_mpa"])
        for name, samples in sorted(matrices.items()):
            summary = _marginal_summary(samples)
            for w in range(n_wells):
                for t in range(n_times):
                    j = w * n_times + t
                    writer.writerow([
                        name, w, f"{times_days[t]:.4f}",
                        f"{pa_to_mpa(summary['mean'][j]):.6f}",
                        f"{pa_to_mpa(summary['lo95'][j]):.6f}",
                        f"{pa_to_mpa(summary['hi95'][j]):.6f}",
                        f"{pa_to_mpa(p_true[j]):.6f}",
                    ])


def _write_marginal_csv(path, matrices, final_idx, p_true):
    quantiles = np.linspace(0.01, 0.99, 99)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "well", "quantile", "pressure_mpa", "truth_mpa"])
        for name, samples in sorted(matrices.items()):
            for w, j in enumerate(final_idx):
                values = np.quantile(samples[:, j], quantiles)
                for q, v in zip(quantiles, values):
                    writer.writerow([
                        name, w, f"{q:.2f}", f"{pa_to_mpa(v):.6f}",
                        f"{pa_to_mpa(p_true[j]):.6f}",
                    ])


def write_sweep_csv(path, sweep_reports: dict, data: dict) -> None:
    """Final-time band summary per ensemble size, for the sweep figure."""
    times_days = np.asarray(data["prediction"]["times_days"], dtype=float)
    n_times = times_days.shape[0]
    p_true = data["p_true_pa"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ell", "well", "mean_mpa", "lo95_mpa", "hi95_mpa", "truth_mpa"])
        for ell in sorted(sweep_reports):
            samples = sweep_reports[ell]["_samples"]
            n_wells = samples.shape[1] // n_times
            summary = _marginal_summary(samples)
            for w in range(n_wells):
                j = w * n_times + n_times - 1
                writer.writerow([
                    ell, w,
                    f"{pa_to_mpa(summary['mean'][j]):.6f}",
                    f"{pa_to_mpa(summary['lo95'][j]):.6f}",
                    f"{pa_to_mpa(summary['hi95'][j]):.6f}",
                    f"{pa_to_mpa(p_true[j]):.6f}",
                ])
