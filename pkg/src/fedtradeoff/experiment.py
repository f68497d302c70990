"""Experiment configuration and the end-to-end single-trial pipeline.

One trial = generate data, run the protocol, invert a client's uploaded
gradient, measure leakage / utility loss, estimate the analysis constants on
the trial's own data, and evaluate the bound formulas. The Monte-Carlo bound
verifier and the sweep harness both run this pipeline with per-trial seeds
derived splittably from the master seed, so trials are independent and
appending trials never changes existing ones.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from . import attack as attackmod
from . import bounds as boundsmod
from . import datagen, models, protocol
from . import rng as rngmod
from .errors import ConfigurationError, EstimationError

THREADS_ENV = "FEDTRADEOFF_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


@dataclass(frozen=True)
class MechanismSpec:
    """Serializable mechanism description; materialized per run."""
    kind: str = "none"
    sigma: float = 0.0
    shared_noise: bool = False
    offset_scale: float = 1.0
    exact_norm: float | None = None

    def build(self, param_dim: int, seed: int) -> protocol.ProtectionMechanism:
        if self.kind == "none":
            return protocol.no_protection()
        if self.kind == "randomization":
            return protocol.ProtectionMechanism(
                kind="randomization", sigma=self.sigma,
                shared_noise=self.shared_noise, exact_norm=self.exact_norm)
        if self.kind == "he_codec":
            return protocol.random_he_codec(param_dim, seed, self.offset_scale)
        raise ConfigurationError(f"unknown mechanism kind: {self.kind!r}")


@dataclass
class ExperimentConfig:
    dataset: datagen.DatasetSpec
    model: models.ModelSpec
    fl: protocol.FLRunConfig
    mechanism: MechanismSpec
    attack: attackmod.AttackConfig
    master_seed: int = 0
    n_eval: int = 400
    num_pairs: int = 120
    quantile: float = 0.05
    gamma: float = 0.1
    eta: float = 0.1
    rho: float = 1.0
    big_l: float = 1.0
    attack_round: int = 0
    attack_client: int = 0

    def to_dict(self) -> dict:
        d = {
            "dataset": asdict(self.dataset),
            "model": asdict(self.model),
            "fl": asdict(self.fl),
            "mechanism": asdict(self.mechanism),
            "attack": asdict(self.attack),
        }
        for key in ("master_seed", "n_eval", "num_pairs", "quantile", "gamma",
                    "eta", "rho", "big_l", "attack_round", "attack_client"):
            d[key] = getattr(self, key)
        return d

    def experiment_id(self) -> str:
        """Short stable digest of (config, master_seed); the results-row key."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        try:
            return ExperimentConfig(
                dataset=datagen.DatasetSpec(**d["dataset"]),
                model=models.ModelSpec(**d["model"]),
                fl=protocol.FLRunConfig(**d["fl"]),
                mechanism=MechanismSpec(**d["mechanism"]),
                attack=attackmod.AttackConfig(**d["attack"]),
                **{k: d[k] for k in ("master_seed", "n_eval", "num_pairs", "quantile",
                                     "gamma", "eta", "rho", "big_l", "attack_round",
                                     "attack_client") if k in d},
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad experiment config: {exc}") from exc


@dataclass
class TrialRow:
    """One (trial, sweep point) result; the canonical results-CSV row."""
    experiment_id: str
    sweep_axis: str
    sweep_value: float
    trial_index: int
    seed: int
    mechanism: str
    sigma: float
    eps_p: float
    eps_p_final: float
    eps_u: float
    eps_u_halfwidth: float
    eps_e: int
    delta_up_grad: float
    delta_up_param: float
    delta_two_grad: float
    delta_two_param: float
    privacy_rhs: float
    privacy_precond_ok: bool
    privacy_holds: bool
    utility_rhs: float
    utility_lambda: float
    utility_holds: bool
    c_a: float
    c_b: float
    big_c: float
    big_m: float
    cap_d: float
    c_0: float
    c_2: float
    pair_skip_rate: float

    FIELDS = (
        "experiment_id",
        "sweep_axis", "sweep_value", "trial_index", "seed", "mechanism", "sigma",
        "eps_p", "eps_p_final", "eps_u", "eps_u_halfwidth", "eps_e",
        "delta_up_grad", "delta_up_param", "delta_two_grad", "delta_two_param",
        "privacy_rhs", "privacy_precond_ok", "privacy_holds",
        "utility_rhs", "utility_lambda", "utility_holds",
        "c_a", "c_b", "big_c", "big_m", "cap_d", "c_0", "c_2", "pair_skip_rate",
    )

    def as_list(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def exact_big_m(model_spec: models.ModelSpec, theta: np.ndarray, delta: np.ndarray,
                datasets: list[datagen.ClientDataset]) -> float:
    """max_Z |loss(theta + delta, Z)| over the protected training points."""
    worst = 0.0
    for ds in datasets:
        per = models.per_example_losses(model_spec, theta + delta, ds.x, ds.y)
        worst = max(worst, float(np.max(np.abs(per))))
    return max(worst, 1e-12)


def try_estimate(model_spec, theta, datasets, **kw) -> datagen.ConstantsEstimate | None:
    """Constants estimate, or None when the data admits no usable pair
    (e.g. single-sample clients); callers emit NaN bound columns then."""
    try:
        return datagen.estimate_constants(model_spec, theta, datasets, **kw)
    except EstimationError:
        return None


def run_trial(config: ExperimentConfig, trial_seed: int, *,
              sweep_axis: str = "none", sweep_value: float = 0.0,
              trial_index: int = 0, experiment_id: str | None = None) -> TrialRow:
    """Full pipeline for one seeded trial.

    ``experiment_id`` defaults to this config's digest; sweeps stamp their
    base config's digest on every row so one sweep stays one experiment.
    """
    ds_spec = datagen.DatasetSpec(**{**asdict(config.dataset), "seed": trial_seed})
    datasets = datagen.generate(ds_spec)
    mech = config.mechanism.build(config.model.param_dim, trial_seed)
    fl_cfg = protocol.FLRunConfig(**{**asdict(config.fl), "seed": trial_seed})

    result = protocol.run(config.model, fl_cfg, mech, datasets)
    if result.aborted:
        raise ConfigurationError(f"run aborted: {result.abort_reason}")
    if not (0 <= config.attack_round < len(result.records)):
        raise ConfigurationError(f"attack_round {config.attack_round} outside run")
    if not (0 <= config.attack_client < len(datasets)):
        raise ConfigurationError(f"attack_client {config.attack_client} out of range")
    rec = result.records[config.attack_round]
    client = config.attack_client
    target = datasets[client]

    atk_cfg = attackmod.AttackConfig(**{**asdict(config.attack), "seed": trial_seed})
    trace = attackmod.invert_gradient(
        config.model, rec.theta_decoded, rec.wires[client], target.y, target.size,
        atk_cfg, originals=target.x, cap_d=ds_spec.diameter_cap)
    eps_p = attackmod.privacy_leakage(trace, target.x, ds_spec.diameter_cap)
    eps_p_final = attackmod.privacy_leakage_final(trace, target.x, ds_spec.diameter_cap)

    theta = result.theta_final_shadow
    delta_model = result.theta_final_decoded - theta
    sampler = datagen.fresh_sampler(ds_spec, trial_seed)
    eps_u, half = protocol.measure_utility_loss(
        config.model, theta, delta_model, target, sampler, config.n_eval)

    est = try_estimate(
        config.model, rec.theta_decoded, datasets,
        num_pairs=config.num_pairs, quantile=config.quantile,
        attack_objectives=trace.objectives[1:], seed=trial_seed)

    delta_up = rec.delta_up_grad[client]
    cap_d = ds_spec.diameter_cap
    delta_two_final = float(np.linalg.norm(delta_model))
    big_m = exact_big_m(config.model, theta, delta_model, [target])
    nan = float("nan")
    if est is not None:
        privacy_rhs = boundsmod.privacy_upper_bound(config.gamma, target.size, est.c_a,
                                                 cap_d, delta_up)
        threshold = boundsmod.privacy_precondition_threshold(
            est.c_2, est.c_b, est.c_a, atk_cfg.iters)
        privacy_ok = bool(delta_up >= threshold)
        lam, utility_rhs = boundsmod.minimize_utility_lambda(
            est.big_c, delta_two_final, big_m, config.model.param_dim, cap_d,
            config.eta, target.size)
        consts = (est.c_a, est.c_b, est.big_c, est.cap_d, est.c_0, est.c_2,
                  est.meta["skip_rate"])
    else:
        privacy_rhs, privacy_ok, lam, utility_rhs = nan, False, nan, nan
        consts = (nan,) * 7

    return TrialRow(
        experiment_id=experiment_id or config.experiment_id(),
        sweep_axis=sweep_axis, sweep_value=sweep_value, trial_index=trial_index,
        seed=trial_seed, mechanism=config.mechanism.kind, sigma=config.mechanism.sigma,
        eps_p=eps_p, eps_p_final=eps_p_final, eps_u=eps_u, eps_u_halfwidth=half,
        eps_e=target.size,
        delta_up_grad=delta_up, delta_up_param=rec.delta_up_param[client],
        delta_two_grad=rec.delta_two_grad, delta_two_param=rec.delta_two_param,
        privacy_rhs=privacy_rhs, privacy_precond_ok=privacy_ok,
        privacy_holds=bool(privacy_ok and eps_p <= privacy_rhs),
        utility_rhs=utility_rhs, utility_lambda=lam,
        utility_holds=bool(not np.isnan(utility_rhs) and eps_u <= utility_rhs),
        c_a=consts[0], c_b=consts[1], big_c=consts[2], big_m=big_m, cap_d=consts[3],
        c_0=consts[4], c_2=consts[5], pair_skip_rate=consts[6],
    )


SWEEP_AXES = ("sigma", "m", "T", "delta_up")


def _config_for_sweep_value(config: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "sigma":
        mech = MechanismSpec(kind="randomization", sigma=float(value),
                             shared_noise=config.mechanism.shared_noise)
        return ExperimentConfig(**{**_cfg_dict(config), "mechanism": mech})
    if axis == "m":
        ds = datagen.DatasetSpec(**{**asdict(config.dataset), "per_client_size": int(value)})
        return ExperimentConfig(**{**_cfg_dict(config), "dataset": ds})
    if axis == "T":
        atk = attackmod.AttackConfig(**{**asdict(config.attack), "iters": int(value)})
        return ExperimentConfig(**{**_cfg_dict(config), "attack": atk})
    if axis == "delta_up":
        mech = MechanismSpec(kind="randomization", sigma=1.0,
                             shared_noise=config.mechanism.shared_noise,
                             exact_norm=float(value))
        return ExperimentConfig(**{**_cfg_dict(config), "mechanism": mech})
    raise ConfigurationError(f"unknown sweep axis: {axis!r}")


def _cfg_dict(config: ExperimentConfig) -> dict:
    return {
        "dataset": config.dataset, "model": config.model, "fl": config.fl,
        "mechanism": config.mechanism, "attack": config.attack,
        "master_seed": config.master_seed, "n_eval": config.n_eval,
        "num_pairs": config.num_pairs, "quantile": config.quantile,
        "gamma": config.gamma, "eta": config.eta, "rho": config.rho,
        "big_l": config.big_l, "attack_round": config.attack_round,
        "attack_client": config.attack_client,
    }


def run_sweep(config: ExperimentConfig, axis: str, values: list[float],
              trials: int) -> tuple[list[TrialRow], dict]:
    """Cross product of axis values x trials; fixed row order; summary stats."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis: {axis!r}")
    if len(values) < 2:
        raise ConfigurationError("need at least 2 axis values")
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")

    base_id = config.experiment_id()
    jobs = []
    for si, value in enumerate(values):
        cfg_v = _config_for_sweep_value(config, axis, value)
        for ti in range(trials):
            seed = rngmod.trial_seed(config.master_seed, si, ti)
            jobs.append((si, ti, float(value), cfg_v, seed))

    def work(job):
        si, ti, value, cfg_v, seed = job
        return run_trial(cfg_v, seed, sweep_axis=axis, sweep_value=value,
                         trial_index=ti, experiment_id=base_id)

    n_threads = thread_count()
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    summary = summarize_sweep(axis, values, rows)
    return rows, summary


def summarize_sweep(axis: str, values: list[float], rows: list[TrialRow]) -> dict:
    from scipy import stats

    medians = []
    for v in values:
        eps = [r.eps_p for r in rows if r.sweep_value == float(v)]
        medians.append(float(np.median(eps)))
    non_increasing = all(medians[i + 1] <= medians[i] + 1e-12
                         for i in range(len(medians) - 1))
    xs = [r.sweep_value for r in rows]
    ys = [r.eps_p for r in rows]
    rho, pval = stats.spearmanr(xs, ys)
    return {
        "axis": axis,
        "values": [float(v) for v in values],
        "median_eps_p": medians,
        "median_eps_p_non_increasing": bool(non_increasing),
        "spearman_rho": float(rho),
        "spearman_p": float(pval),
        "median_privacy_rhs": [
            float(np.median([r.privacy_rhs for r in rows if r.sweep_value == float(v)]))
            for v in values
        ],
    }
