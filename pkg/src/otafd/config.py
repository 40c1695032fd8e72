"""Experiment configuration: JSON schema, validation, and resolution into a TrainingSetup."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError, model_validator

from .channel import DeviceGeometry
from .data import LabeledDataset, PartitionSpec, partition, read_idx, synth_dataset
from .distill import DEFAULT_SLOT_SECONDS, TrainingSetup, stream
from .learner import Architecture
from .privacy import PrivacyRequirement, stringencies


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Uniform(_Strict):
    """Draw each device's value uniformly from [low, high] with the master seed."""

    low: float
    high: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.high < self.low:
            raise ValueError("high must be >= low")
        return self


# A scalar applies to every device, a list gives per-device values.
Draw = Union[float, Uniform, list[float]]


class ChannelConfig(_Strict):
    carrier_hz: PositiveFloat = 915e6
    distance_m: Draw = Uniform(low=100.0, high=500.0)
    pathloss_exp: float = Field(3.0, ge=0)
    noise_var: float = Field(1e-8, ge=0)
    ideal: bool = False


class PrivacyConfig(_Strict):
    enabled: bool = True
    epsilon: Draw = Uniform(low=0.001, high=0.1)
    delta: Draw = Uniform(low=1e-11, high=1e-9)


class HyperConfig(_Strict):
    gamma: float = Field(0.1, ge=0)
    eta0: PositiveFloat = 0.01
    l1: PositiveFloat = 10.0
    l2: PositiveFloat = 1.0
    grad_bound: PositiveFloat = 10.0
    f_max: Union[Literal["initial_loss"], PositiveFloat, list[PositiveFloat]] = "initial_loss"

    @model_validator(mode="after")
    def _step_size(self):
        if self.eta0 > 1.0 / self.l1:
            raise ValueError(f"eta0 must not exceed 1/l1 = {1.0 / self.l1}")
        return self


class SyntheticConfig(_Strict):
    dims: PositiveInt = 16
    per_class: PositiveInt = 200
    test_per_class: PositiveInt = 100
    separation: float = Field(4.0, ge=0)


class IdxConfig(_Strict):
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    limit: PositiveInt | None = None


class PartitionConfig(_Strict):
    mode: Literal["iid", "dirichlet"] = "iid"
    alpha: PositiveFloat = 1.0


class DataConfig(_Strict):
    synthetic: SyntheticConfig | None = SyntheticConfig()
    idx: IdxConfig | None = None
    partition: PartitionConfig = PartitionConfig()

    @model_validator(mode="after")
    def _one_source(self):
        if self.idx is not None:
            self.synthetic = None
        if self.synthetic is None and self.idx is None:
            raise ValueError("either synthetic or idx data must be configured")
        return self


class ModelConfig(_Strict):
    hidden: PositiveInt | None = None
    init_scale: float = Field(0.01, ge=0)


class SeedConfig(_Strict):
    master: int = Field(0, ge=0)
    replications: PositiveInt = 1


class OutputConfig(_Strict):
    dir: str = "out"


class ExperimentConfig(_Strict):
    devices: PositiveInt = 50
    classes: PositiveInt = 10
    channel: ChannelConfig = ChannelConfig()
    power_w: Union[PositiveFloat, list[PositiveFloat]] = 1e-3
    privacy: PrivacyConfig = PrivacyConfig()
    hyper: HyperConfig = HyperConfig()
    rounds: Union[PositiveInt, Literal["auto"]] = "auto"
    rounds_cap: PositiveInt | None = None
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    seeds: SeedConfig = SeedConfig()
    output: OutputConfig = OutputConfig()
    slot_seconds: PositiveFloat = DEFAULT_SLOT_SECONDS

    @model_validator(mode="after")
    def _per_device_lengths(self):
        m = self.devices
        for path, value in (
            ("power_w", self.power_w),
            ("channel.distance_m", self.channel.distance_m),
            ("privacy.epsilon", self.privacy.epsilon),
            ("privacy.delta", self.privacy.delta),
            ("hyper.f_max", self.hyper.f_max),
        ):
            if isinstance(value, list) and len(value) != m:
                raise ValueError(f"{path}: expected {m} per-device values, got {len(value)}")
        return self


def json_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)


def defaults_applied(model: BaseModel, prefix: str = "") -> list[str]:
    """Dotted paths of every field that took its default value."""
    out = []
    for name in type(model).model_fields:
        path = f"{prefix}{name}"
        value = getattr(model, name)
        if name not in model.model_fields_set:
            out.append(path)
        elif isinstance(value, BaseModel) and not isinstance(value, Uniform):
            out.extend(defaults_applied(value, path + "."))
    return out


def _draw(spec, m: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec, Uniform):
        return rng.uniform(spec.low, spec.high, m)
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    return np.full(m, float(spec))


def _load_data(cfg: ExperimentConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    k = cfg.classes
    if cfg.data.idx is not None:
        idx = cfg.data.idx
        train = read_idx(idx.train_images, idx.train_labels)
        test = read_idx(idx.test_images, idx.test_labels)
        if idx.limit is not None:
            train = train.subset(np.arange(min(idx.limit, len(train))))
        if int(train.labels.max()) > k:
            raise ConfigError(f"classes: data has labels up to {int(train.labels.max())}, config says {k}")
        return train, test
    syn = cfg.data.synthetic
    train = synth_dataset(k, syn.dims, syn.per_class, syn.separation, stream(seed, 0, 2, 0))
    test = synth_dataset(k, syn.dims, syn.test_per_class, syn.separation, stream(seed, 0, 2, 1))
    return train, test


def resolve(cfg: ExperimentConfig, seed: int) -> tuple[TrainingSetup, dict]:
    """Build the TrainingSetup for one replication seed and its audit digest.

    Per-device distances, epsilons and deltas are drawn once from `seed` and
    recorded, so randomized setups stay reproducible.
    """
    m, k = cfg.devices, cfg.classes
    distances = _draw(cfg.channel.distance_m, m, stream(seed, 0, 1, 0))
    epsilons = _draw(cfg.privacy.epsilon, m, stream(seed, 0, 1, 1))
    deltas = _draw(cfg.privacy.delta, m, stream(seed, 0, 1, 2))
    powers = np.broadcast_to(np.asarray(cfg.power_w, dtype=float), (m,)).copy()

    train, test = _load_data(cfg, seed)
    spec = PartitionSpec(m, cfg.data.partition.mode, cfg.data.partition.alpha, seed=int(stream(seed, 0, 2, 2).integers(2**31)))
    try:
        devices, part, _ = partition(train, spec, k)
        geoms = None if cfg.channel.ideal else [
            DeviceGeometry(float(d), cfg.channel.carrier_hz, cfg.channel.pathloss_exp) for d in distances
        ]
        if cfg.privacy.enabled:
            reqs = [PrivacyRequirement(float(e), float(dl), len(ds)) for e, dl, ds in zip(epsilons, deltas, devices)]
            rho = stringencies(reqs)
        else:
            rho = np.zeros(m)
    except ValueError as err:
        raise ConfigError(str(err)) from None

    f_max = None if cfg.hyper.f_max == "initial_loss" else np.broadcast_to(np.asarray(cfg.hyper.f_max, dtype=float), (m,))
    arch = Architecture(train.features.shape[1], k, cfg.model.hidden)
    setup = TrainingSetup(
        devices=devices,
        test=test,
        num_classes=k,
        arch=arch,
        powers=powers,
        stringencies=rho,
        noise_var=cfg.channel.noise_var,
        geometries=geoms,
        gamma=cfg.hyper.gamma,
        eta0=cfg.hyper.eta0,
        rounds=cfg.rounds,
        l1=cfg.hyper.l1,
        l2=cfg.hyper.l2,
        grad_bound=cfg.hyper.grad_bound,
        f_max=f_max,
        rounds_cap=cfg.rounds_cap,
        init_scale=cfg.model.init_scale,
        slot_seconds=cfg.slot_seconds,
    )
    digest = {
        "config": cfg.model_dump(mode="json"),
        "defaults_applied": defaults_applied(cfg),
        "seed": seed,
        "draws": {
            "distance_m": distances.tolist(),
            "epsilon": epsilons.tolist(),
            "delta": deltas.tolist(),
            "rho": rho.tolist(),
        },
        "class_counts": part.counts.tolist(),
    }
    return setup, digest


def digest_hash(digest: dict) -> str:
    blob = json.dumps(digest, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
