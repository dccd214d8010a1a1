"""Monte Carlo sweep runner and CSV output."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channels import draw_channels, load_dataset
from ..estimators import (
    EmConvergenceWarning,
    GaussianPrior,
    decision_directed,
    em_joint_ml,
    lmmse_plain,
    lmmse_projected,
    lmmse_subspace,
    ml_subspace_estimate,
    sample_cov_prior,
)
from ..gmm import gmm_pilot_estimate, gmm_projected_estimate, gmm_subspace_estimate, load_gmm
from ..subspace import estimate_subspace, perfect_subspace
from ..txrx import ConfigError, decorrelate_pilots, transmit
from .config import ExperimentSpec

__all__ = [
    "CSV_HEADER",
    "Priors",
    "TrialContext",
    "SweepRow",
    "SweepResult",
    "ESTIMATORS",
    "load_priors",
    "run_experiment",
    "emit_csv",
    "read_csv",
    "trial_rng",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("axis", "value", "estimator", "nmse", "stderr", "trials", "seconds")


@dataclass
class Priors:
    gaussian: GaussianPrior | None = None
    gmm: object = None
    vae: object = None


@dataclass
class TrialContext:
    """Everything one trial hands to the estimators; shared by all of them."""

    block: object
    Y_p: np.ndarray
    V: np.ndarray
    sigma2: float
    sigma2_eff: float
    priors: Priors
    constellation: str


def _gaussian(ctx):
    if ctx.priors.gaussian is None:
        return GaussianPrior.identity(ctx.Y_p.shape[0])
    return ctx.priors.gaussian


def _em(ctx):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmConvergenceWarning)
        return em_joint_ml(ctx.block, ctx.sigma2).channels


def _vae(name):
    from .. import vae as vae_mod

    return getattr(vae_mod, name)


ESTIMATORS = {
    "ls": lambda c: c.Y_p.copy(),
    "ml": lambda c: ml_subspace_estimate(c.Y_p, c.V),
    "lmmse": lambda c: lmmse_plain(c.Y_p, _gaussian(c), c.sigma2_eff),
    "sub_lmmse": lambda c: lmmse_subspace(c.Y_p, c.V, _gaussian(c), c.sigma2_eff),
    "proj_lmmse": lambda c: lmmse_projected(c.Y_p, c.V, _gaussian(c), c.sigma2_eff),
    "gmm": lambda c: gmm_pilot_estimate(c.Y_p, c.priors.gmm, c.sigma2_eff),
    "sub_gmm": lambda c: gmm_subspace_estimate(c.Y_p, c.V, c.priors.gmm, c.sigma2_eff),
    "proj_gmm": lambda c: gmm_projected_estimate(c.Y_p, c.V, c.priors.gmm, c.sigma2_eff),
    "vae": lambda c: _vae("vae_pilot_estimate")(c.Y_p, c.priors.vae, c.sigma2_eff),
    "sub_vae": lambda c: _vae("vae_subspace_estimate")(c.Y_p, c.V, c.priors.vae, c.sigma2_eff),
    "proj_vae": lambda c: _vae("vae_projected_estimate")(c.Y_p, c.V, c.priors.vae, c.sigma2_eff),
    "em": _em,
    "dd_lmmse": lambda c: decision_directed(
        lambda Y, nv: lmmse_plain(Y, _gaussian(c), nv), c.block, c.constellation
    ),
    "dd_gmm": lambda c: decision_directed(
        lambda Y, nv: gmm_pilot_estimate(Y, c.priors.gmm, nv), c.block, c.constellation
    ),
    "genie": lambda c: c.block.true_H.copy(),
}


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    estimator: str
    nmse: float
    stderr: float
    trials: int
    seconds: float


@dataclass
class SweepResult:
    rows: list
    config: dict | None = None

    def table(self) -> dict:
        """{(value, estimator): nmse}"""
        return {(r.value, r.estimator): r.nmse for r in self.rows}


def load_priors(spec: ExperimentSpec) -> Priors:
    """Read the prior files named in ``spec``; raises OSError/ValueError on failure."""
    priors = Priors()
    if spec.gaussian != "identity":
        priors.gaussian = sample_cov_prior(load_dataset(spec.gaussian))
    if spec.gmm_path:
        priors.gmm = load_gmm(spec.gmm_path)
    if spec.vae_path:
        priors.vae = _vae("load_vae")(spec.vae_path)
    return priors


def _check_dims(priors: Priors, M: int):
    for name in ("gaussian", "gmm"):
        p = getattr(priors, name)
        if p is not None and p.dim != M:
            raise ConfigError(f"{name} prior has M={p.dim}, scenario needs M={M}")
    if priors.vae is not None and priors.vae.num_antennas != M:
        raise ConfigError(f"vae prior has M={priors.vae.num_antennas}, scenario needs M={M}")


def trial_rng(seed: int, axis_index: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, axis_index, trial])))


def _run_trial(spec: ExperimentSpec, priors: Priors, axis_index: int, trial: int, estimators=None):
    """Squared errors (normalized by M J) and wall times for every estimator."""
    estimators = estimators or ESTIMATORS
    sc = spec.scenario_at(spec.sweep_values[axis_index])
    rng = trial_rng(sc.seed, axis_index, trial)
    params = spec.spatial_params if spec.channel_model == "spatial" else None
    if params is not None and params.num_antennas != sc.M:
        params = type(params)(sc.M, spec.num_clusters, spec.angular_spread_deg)
    H = draw_channels(spec.channel_model, sc.M, sc.J, rng, params)
    block = transmit(H, sc, rng)
    if spec.subspace == "perfect":
        V = perfect_subspace(H).basis
    else:
        V = estimate_subspace(block.Y, sc.J).basis
    ctx = TrialContext(
        block=block,
        Y_p=decorrelate_pilots(block),
        V=V,
        sigma2=sc.noise_variance,
        sigma2_eff=sc.sigma2_eff,
        priors=priors,
        constellation=sc.constellation,
    )
    err = np.empty(len(spec.estimators))
    secs = np.zeros(len(spec.estimators))
    for e, label in enumerate(spec.estimators):
        t0 = time.perf_counter()
        H_hat = estimators[label](ctx)
        secs[e] = time.perf_counter() - t0
        err[e] = np.sum(np.abs(H - H_hat) ** 2) / H.size
    return err, secs


_WORKER = {}


def _init_worker(spec, priors):
    _WORKER["spec"] = spec
    _WORKER["priors"] = priors


def _run_chunk(axis_index: int, start: int, stop: int):
    spec, priors = _WORKER["spec"], _WORKER["priors"]
    out = [_run_trial(spec, priors, axis_index, t) for t in range(start, stop)]
    return axis_index, start, np.array([o[0] for o in out]), np.array([o[1] for o in out])


def run_experiment(
    spec: ExperimentSpec,
    priors: Priors | None = None,
    threads: int = 1,
    chunk: int = 50,
    estimators=None,
) -> SweepResult:
    """Run ``spec.trials`` independent trials per sweep value.

    Trial ``t`` at sweep index ``i`` draws all randomness from
    SeedSequence([seed, i, t]), and per-trial errors are stored by index before
    reduction, so serial and parallel runs give identical numbers.
    ``estimators`` optionally overrides the label -> callable registry (serial only).
    """
    if priors is None:
        priors = load_priors(spec)
    for v in spec.sweep_values:
        _check_dims(priors, spec.scenario_at(v).M)
    L, E, A = spec.trials, len(spec.estimators), len(spec.sweep_values)
    errors = np.empty((A, L, E))
    seconds = np.zeros((A, L, E))
    if threads <= 1 or estimators is not None:
        for a in range(A):
            for t in range(L):
                errors[a, t], seconds[a, t] = _run_trial(spec, priors, a, t, estimators)
    else:
        tasks = [(a, s, min(s + chunk, L)) for a in range(A) for s in range(0, L, chunk)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(spec, priors)) as pool:
            futures = [pool.submit(_run_chunk, *task) for task in tasks]
            for fut in futures:
                a, s, err, sec = fut.result()
                errors[a, s : s + err.shape[0]] = err
                seconds[a, s : s + err.shape[0]] = sec
    rows = []
    for a, value in enumerate(spec.sweep_values):
        for e, label in enumerate(spec.estimators):
            per_trial = errors[a, :, e]
            nmse = float(np.sum(per_trial) / L)
            se = float(np.std(per_trial, ddof=1) / np.sqrt(L)) if L > 1 else float("nan")
            secs = float(np.sum(seconds[a, :, e])) if spec.timing else 0.0
            rows.append(SweepRow(spec.sweep_axis, value, label, nmse, se, L, secs))
            log.info("%s=%s %s: NMSE %.6g (se %.2g)", spec.sweep_axis, value, label, nmse, se)
    return SweepResult(rows, config=spec.resolved())


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "{:.12g}".format(float(x))


def emit_csv(result: SweepResult, path) -> None:
    """Write the sweep as CSV; a ``# config:`` comment line precedes the header
    when the result carries its configuration."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if result.config is not None:
            fh.write("# config: " + json.dumps(result.config, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in result.rows:
            writer.writerow(
                [r.axis, _fmt(r.value), r.estimator, _fmt(r.nmse), _fmt(r.stderr), str(r.trials), _fmt(r.seconds)]
            )


def read_csv(path) -> list[dict]:
    """Parse a CSV written by :func:`emit_csv` into typed dicts."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(
            {
                "axis": rec["axis"],
                "value": float(rec["value"]),
                "estimator": rec["estimator"],
                "nmse": float(rec["nmse"]),
                "stderr": float(rec["stderr"]),
                "trials": int(rec["trials"]),
                "seconds": float(rec["seconds"]),
            }
        )
    return rows
