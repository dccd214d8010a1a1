"""Command line entry point: ``semiblind {gen-dataset,fit-prior,run}``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..channels import DatasetFormatError, SpatialModelParams, generate_dataset, load_dataset, save_dataset
from ..txrx import ConfigError
from . import config as cfg
from .experiment import emit_csv, run_experiment

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_IO", "EXIT_NUMERIC"]

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("semiblind")


def _gen_dataset(args) -> None:
    spec = cfg.parse_dataset(cfg.read_config(args.config), args.seed)
    params = SpatialModelParams(spec.M, spec.num_clusters, spec.angular_spread_deg) if spec.model == "spatial" else None
    ds = generate_dataset(spec.model, spec.M, spec.samples, np.random.default_rng(spec.seed), params=params)
    save_dataset(args.out, ds)
    log.info("wrote %d %s channels (M=%d) to %s", spec.samples, spec.model, spec.M, args.out)


def _fit_prior(args) -> None:
    spec = cfg.parse_fit(cfg.read_config(args.config), args.seed)
    ds = load_dataset(spec.dataset)
    if spec.M is not None and ds.num_antennas != spec.M:
        raise ConfigError(f"dataset has M={ds.num_antennas}, config says M={spec.M}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gmm":
        from ..gmm import fit_gmm, save_gmm

        prior = fit_gmm(ds, spec.components, spec.max_iter, spec.tol, rng)
        for it, ll in enumerate(prior.log_likelihood_trace):
            log.info("EM iteration %d: mean log-likelihood %.10g", it, ll)
        save_gmm(args.out, prior)
    else:
        from ..vae import VaeConfig, save_vae, train_vae

        vc = VaeConfig(
            latent_dim=spec.latent_dim,
            hidden=spec.hidden,
            epochs=spec.epochs,
            batch_size=spec.batch_size,
            learning_rate=spec.learning_rate,
            num_users=spec.num_users,
        )
        prior = train_vae(ds, vc, rng)
        hist = np.asarray(prior.training_history)
        per_epoch = np.array_split(hist, vc.epochs)
        for e, h in enumerate(per_epoch):
            log.info("epoch %d: mean ELBO %.6g", e, float(np.mean(h)))
        spec_check = prior.decode_spectrum(rng.standard_normal((256, vc.latent_dim)))[1]
        if not np.all(spec_check > 0):
            raise FloatingPointError("decoder produced a non-positive covariance spectrum")
        save_vae(args.out, prior)
    log.info("wrote %s prior to %s", spec.kind, args.out)


def _run(args) -> None:
    spec = cfg.parse_experiment(cfg.read_config(args.config), args.seed)
    result = run_experiment(spec, threads=args.threads)
    emit_csv(result, args.out)
    log.info("wrote %d rows to %s", len(result.rows), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semiblind", description="Semi-blind channel estimation benchmarks.")
    parser.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("gen-dataset", _gen_dataset, "draw a channel dataset"),
        ("fit-prior", _fit_prior, "fit a GMM or VAE prior to a dataset"),
        ("run", _run, "run a Monte Carlo sweep and write CSV"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--threads", type=int, default=1, help="worker processes (run only)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # malformed prior files surface as ValueError from the loaders
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
