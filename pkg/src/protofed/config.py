"""Experiment configuration: defaults, strict JSON parsing, validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError, ParseError
from .losses import CMA_KINDS, LossToggles, LossWeights

ALGORITHM_NAMES = ("mfcpl", "mfcpl_unimodal", "fedavg", "fedprox", "fedproto")


@dataclass
class ExperimentConfig:
    """Everything a run needs, flat so files and flag overrides stay simple.

    dataset is either "synthetic" (the built-in generator, shaped by the
    n_samples/n_classes/... fields below) or a path to a manifest.json
    written by the data exporter.
    """
    algorithm: str = "mfcpl"
    dataset: str = "synthetic"
    seed: int = 0
    rounds: int = 200
    local_epochs: int = 1
    batch_size: int = 16
    lr: float = 0.05
    weight_decay: float = 1e-5
    participation: float = 0.25
    n_clients: int = 20
    beta: float = 0.5
    q: float = 0.5
    u: float = 0.0
    min_samples: int = 8
    alpha_reg: float = 1.0
    alpha_con: float = 2.0
    alpha_align: float = 0.1
    tau: float = 0.1
    cma_kind: str = "l2"
    use_cmpr: bool = True
    use_cmpc: bool = True
    use_cma: bool = True
    mu: float = 0.01
    proj_dim: int = 64
    eval_mask_q: float | None = None
    n_samples: int = 1200
    n_classes: int = 4
    n_modalities: int = 2
    latent_dim: int = 16
    feat_dim: int = 20
    view_size: int = 0          # 0 = generator default (overlapping windows)
    class_sep: float = 1.0
    noise_sigma: float = 1.0

    def toggles(self) -> LossToggles:
        return LossToggles(cmpr=self.use_cmpr, cmpc=self.use_cmpc, cma=self.use_cma)

    def weights(self) -> LossWeights:
        return LossWeights(alpha_reg=self.alpha_reg, alpha_con=self.alpha_con,
                           alpha_align=self.alpha_align, tau=self.tau)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.algorithm in ALGORITHM_NAMES,
             f"algorithm must be one of {ALGORITHM_NAMES}, got '{self.algorithm}'")
        need(self.dataset == "synthetic" or self.dataset.endswith(".json"),
             f"dataset must be 'synthetic' or a manifest path, got '{self.dataset}'")
        need(self.rounds >= 1, "rounds must be >= 1")
        need(self.local_epochs >= 1, "local_epochs must be >= 1")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.lr > 0, "lr must be positive")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(0 < self.participation <= 1, "participation must lie in (0, 1]")
        need(self.n_clients >= 1, "n_clients must be >= 1")
        need(self.min_samples >= 1, "min_samples must be >= 1")
        need(self.beta > 0, "beta must be positive")
        need(0 <= self.q <= 1, "q must lie in [0, 1]")
        need(0 <= self.u < 1, "u must lie in [0, 1)")
        need(self.tau > 0, "tau must be positive")
        for name in ("alpha_reg", "alpha_con", "alpha_align", "mu"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        need(self.cma_kind in CMA_KINDS,
             f"cma_kind must be one of {CMA_KINDS}, got '{self.cma_kind}'")
        need(self.proj_dim >= 1, "proj_dim must be >= 1")
        if self.eval_mask_q is not None:
            need(0 <= self.eval_mask_q <= 1, "eval_mask_q must lie in [0, 1]")
        need(self.n_classes >= 2, "n_classes must be >= 2")
        need(self.n_modalities >= 1, "n_modalities must be >= 1")
        need(self.n_samples >= self.n_classes, "n_samples must cover every class")
        need(self.latent_dim >= 2, "latent_dim must be >= 2")
        need(self.feat_dim >= 1, "feat_dim must be >= 1")
        need(0 <= self.view_size <= self.latent_dim,
             "view_size must lie in [0, latent_dim]")
        need(self.class_sep > 0, "class_sep must be positive")
        need(self.noise_sigma >= 0, "noise_sigma must be >= 0")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    if name == "eval_mask_q":
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"eval_mask_q must be a number or null, got {value!r}")
    want = _FIELDS[name].type
    if want == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name} must be true or false, got {value!r}")
    if want == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if want == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if want == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    raise ConfigError(f"unhandled field type for {name}")   # pragma: no cover


def config_from_dict(payload: dict) -> ExperimentConfig:
    """Build a validated config; unknown keys are an error, not a warning."""
    if not isinstance(payload, dict):
        raise ConfigError(f"config must be a JSON object, got {type(payload).__name__}")
    unknown = sorted(set(payload) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {name: _coerce(name, value) for name, value in payload.items()}
    return ExperimentConfig(**kwargs).validate()


def config_from_file(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(payload)
