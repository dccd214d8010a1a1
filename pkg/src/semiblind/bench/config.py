"""INI experiment configuration.

Example::

    [scenario]
    M = 64
    J = 8
    N = 200
    snr_db = 0
    seed = 1

    [channel]
    model = iid

    [sweep]
    axis = snr_db
    values = -10, 0, 10, 20

    [estimators]
    labels = ls, lmmse, proj_lmmse
    subspace = estimated

    [run]
    trials = 1000
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..channels import SpatialModelParams
from ..txrx import CONSTELLATIONS, ConfigError, ScenarioConfig

__all__ = [
    "ESTIMATOR_LABELS",
    "SWEEP_AXES",
    "ExperimentSpec",
    "DatasetSpec",
    "FitSpec",
    "read_config",
    "parse_experiment",
    "parse_dataset",
    "parse_fit",
]

ESTIMATOR_LABELS = (
    "ls",
    "ml",
    "lmmse",
    "sub_lmmse",
    "proj_lmmse",
    "gmm",
    "sub_gmm",
    "proj_gmm",
    "vae",
    "sub_vae",
    "proj_vae",
    "em",
    "dd_lmmse",
    "dd_gmm",
    "genie",
)
SWEEP_AXES = ("snr_db", "N", "J", "M")
CHANNEL_MODELS = ("iid", "spatial")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig
    channel_model: str = "iid"
    num_clusters: int = 3
    angular_spread_deg: float = 2.0
    sweep_axis: str = "snr_db"
    sweep_values: tuple = ()
    estimators: tuple = ("ls",)
    subspace: str = "estimated"
    trials: int = 1000
    timing: bool = True
    gmm_path: str | None = None
    vae_path: str | None = None
    gaussian: str = "identity"
    pilots_default: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.channel_model not in CHANNEL_MODELS:
            raise ConfigError(f"unknown channel model {self.channel_model!r}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; expected one of {SWEEP_AXES}")
        if not self.sweep_values:
            raise ConfigError("sweep values must be non-empty")
        diffs = [b - a for a, b in zip(self.sweep_values[:-1], self.sweep_values[1:])]
        if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ConfigError("sweep values must be strictly monotone")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_LABELS]
        if unknown:
            raise ConfigError(f"unknown estimator labels {unknown}")
        if not self.estimators:
            raise ConfigError("no estimators requested")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("duplicate estimator labels")
        if self.subspace not in ("estimated", "perfect"):
            raise ConfigError("subspace must be 'estimated' or 'perfect'")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if any(e.endswith("gmm") for e in self.estimators) and not self.gmm_path:
            raise ConfigError("GMM estimators need [priors] gmm")
        if any(e.endswith("vae") for e in self.estimators) and not self.vae_path:
            raise ConfigError("VAE estimators need [priors] vae")
        if any(e.startswith("dd_") for e in self.estimators) and self.scenario.constellation == "gaussian":
            raise ConfigError("decision-directed estimators need a discrete constellation")
        for v in self.sweep_values:
            self.scenario_at(v)

    @property
    def spatial_params(self) -> SpatialModelParams:
        return SpatialModelParams(self.scenario.M, self.num_clusters, self.angular_spread_deg)

    def scenario_at(self, value) -> ScenarioConfig:
        """Scenario with the sweep axis set to ``value``."""
        sc = self.scenario
        if self.sweep_axis == "snr_db":
            return dataclasses.replace(sc, noise_variance=10.0 ** (-float(value) / 10.0))
        if self.sweep_axis == "J":
            N_p = int(value) if self.pilots_default else sc.N_p
            return dataclasses.replace(sc, J=int(value), N_p=N_p)
        return dataclasses.replace(sc, **{self.sweep_axis: int(value)})

    def resolved(self) -> dict:
        """Plain dict of every setting, used for the CSV config header."""
        sc = dataclasses.asdict(self.scenario)
        out = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("scenario", "pilots_default")}
        out["scenario"] = sc
        out["sweep_values"] = list(self.sweep_values)
        out["estimators"] = list(self.estimators)
        return out


@dataclass(frozen=True)
class DatasetSpec:
    model: str
    M: int
    samples: int
    seed: int
    num_clusters: int = 3
    angular_spread_deg: float = 2.0


@dataclass(frozen=True)
class FitSpec:
    kind: str
    dataset: str
    seed: int
    components: int = 32
    max_iter: int = 100
    tol: float = 1e-6
    epochs: int = 50
    latent_dim: int = 32
    hidden: tuple = (256, 128)
    batch_size: int = 128
    learning_rate: float = 1e-3
    num_users: int = 8
    M: int | None = None


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    parser.base_dir = path.parent
    return parser


def _get(parser, section, key, conv, default=None, required=False):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = parser.get(section, key).strip()
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _list(raw: str):
    return [x for x in raw.replace(",", " ").split() if x]


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _resolve_path(parser, raw):
    if raw is None:
        return None
    p = Path(raw)
    base = getattr(parser, "base_dir", None)
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p)


def _scenario(parser, seed_override=None) -> tuple[ScenarioConfig, bool]:
    s = "scenario"
    if not parser.has_section(s):
        raise ConfigError("missing [scenario] section")
    M = _get(parser, s, "M", int, required=True)
    J = _get(parser, s, "J", int, required=True)
    N = _get(parser, s, "N", int, required=True)
    N_p = _get(parser, s, "N_p", int)
    snr = _get(parser, s, "snr_db", float)
    nv = _get(parser, s, "noise_variance", float)
    if snr is not None and nv is not None:
        raise ConfigError("give either snr_db or noise_variance, not both")
    if nv is None:
        nv = 10.0 ** (-(0.0 if snr is None else snr) / 10.0)
    constellation = _get(parser, s, "constellation", str, "gaussian")
    if constellation not in CONSTELLATIONS:
        raise ConfigError(f"unknown constellation {constellation!r}")
    seed = _get(parser, s, "seed", int, 0) if seed_override is None else int(seed_override)
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    sc = ScenarioConfig(M=M, J=J, N=N, noise_variance=nv, N_p=N_p, constellation=constellation, seed=seed)
    return sc, N_p is None


def parse_experiment(parser, seed_override=None) -> ExperimentSpec:
    scenario, pilots_default = _scenario(parser, seed_override)
    axis = _get(parser, "sweep", "axis", str, "snr_db")
    conv = float if axis == "snr_db" else int
    values = _get(parser, "sweep", "values", lambda r: tuple(conv(v) for v in _list(r)))
    if values is None:
        values = (scenario.snr_db,) if axis == "snr_db" else (getattr(scenario, axis),)
    return ExperimentSpec(
        scenario=scenario,
        channel_model=_get(parser, "channel", "model", str, "iid"),
        num_clusters=_get(parser, "channel", "num_clusters", int, 3),
        angular_spread_deg=_get(parser, "channel", "angular_spread_deg", float, 2.0),
        sweep_axis=axis,
        sweep_values=values,
        estimators=_get(parser, "estimators", "labels", lambda r: tuple(_list(r)), ("ls",)),
        subspace=_get(parser, "estimators", "subspace", str, "estimated"),
        trials=_get(parser, "run", "trials", int, 1000),
        timing=_get(parser, "run", "timing", _bool, True),
        gmm_path=_resolve_path(parser, _get(parser, "priors", "gmm", str)),
        vae_path=_resolve_path(parser, _get(parser, "priors", "vae", str)),
        gaussian=_gaussian_setting(parser),
        pilots_default=pilots_default,
    )


def _gaussian_setting(parser) -> str:
    raw = _get(parser, "priors", "gaussian", str, "identity")
    return raw if raw == "identity" else _resolve_path(parser, raw)


def parse_dataset(parser, seed_override=None) -> DatasetSpec:
    scenario, _ = _scenario(parser, seed_override)
    model = _get(parser, "channel", "model", str, "iid")
    if model not in CHANNEL_MODELS:
        raise ConfigError(f"unknown channel model {model!r}")
    samples = _get(parser, "dataset", "samples", int, 150_000)
    if samples < 1:
        raise ConfigError("[dataset] samples must be positive")
    return DatasetSpec(
        model=model,
        M=scenario.M,
        samples=samples,
        seed=scenario.seed,
        num_clusters=_get(parser, "channel", "num_clusters", int, 3),
        angular_spread_deg=_get(parser, "channel", "angular_spread_deg", float, 2.0),
    )


def parse_fit(parser, seed_override=None) -> FitSpec:
    s = "fit"
    if not parser.has_section(s):
        raise ConfigError("missing [fit] section")
    kind = _get(parser, s, "kind", str, required=True)
    if kind not in ("gmm", "vae"):
        raise ConfigError(f"[fit] kind must be gmm or vae, got {kind!r}")
    seed = _get(parser, s, "seed", int, 0) if seed_override is None else int(seed_override)
    M = _get(parser, "scenario", "M", int) if parser.has_section("scenario") else None
    J = _get(parser, "scenario", "J", int, 8) if parser.has_section("scenario") else 8
    spec = FitSpec(
        kind=kind,
        dataset=_resolve_path(parser, _get(parser, s, "dataset", str, required=True)),
        seed=seed,
        components=_get(parser, s, "components", int, 32),
        max_iter=_get(parser, s, "max_iter", int, 100),
        tol=_get(parser, s, "tol", float, 1e-6),
        epochs=_get(parser, s, "epochs", int, 50),
        latent_dim=_get(parser, s, "latent_dim", int, 32),
        hidden=_get(parser, s, "hidden", lambda r: tuple(int(v) for v in _list(r)), (256, 128)),
        batch_size=_get(parser, s, "batch_size", int, 128),
        learning_rate=_get(parser, s, "learning_rate", float, 1e-3),
        num_users=_get(parser, s, "num_users", int, J),
        M=M,
    )
    if spec.components < 1 or spec.max_iter < 1 or spec.epochs < 1:
        raise ConfigError("components, max_iter and epochs must be positive")
    return spec
