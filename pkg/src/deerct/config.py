"""Experiment configuration: a flat, validated ``key = value`` (TOML) file."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import tomli

from .model import VARIANTS

# (lambda_al, lambda_sl) tuned per variant
VARIANT_LOSS_WEIGHTS = {
    "deer": (0.0025, 0.8),
    "deer-nowgan": (0.0, 0.8),
    "deer-lite": (0.0025, 0.8),
    "deer-sino": (0.002, 0.65),
    "deer-fbp": (0.0025, 0.65),
}


@dataclass
class ExperimentConfig:
    n: int = 64
    nv_few: int = 15
    nv_dense: int = 30
    n_det: int = 64
    variant: str = "deer-nowgan"
    lambda_al: float = 0.0
    lambda_sl: float = 0.8
    lambda_gp: float = 10.0
    clip_c: float = 0.01
    lr_base: float = 1e-4
    lr_disc: float = 1e-4
    lr_pretrain: float = 1e-3
    bp_lr_ratio: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    batch_pretrain: int = 5
    batch_joint: int = 3
    epochs_pretrain: int = 10
    epochs_joint: int = 50
    seed: int = 0
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    padding: str = "same"
    final_activation: str = "linear"
    unet_bias: bool = False
    ssim_window: str = "uniform"
    out_dir: str = "runs/deer"

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "ExperimentConfig":
        if variant not in VARIANT_LOSS_WEIGHTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        al, sl = VARIANT_LOSS_WEIGHTS[variant]
        base = {"variant": variant, "lambda_al": al, "lambda_sl": sl}
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ValueError(f"invalid config: {msg}")

        types = {f.name: f.type for f in fields(self)}
        for name, typ in types.items():
            val = getattr(self, name)
            if typ == "int":
                need(isinstance(val, int) and not isinstance(val, bool), f"{name} must be an integer")
            elif typ == "float":
                need(isinstance(val, (int, float)) and not isinstance(val, bool), f"{name} must be a number")
                setattr(self, name, float(val))
            elif typ == "bool":
                need(isinstance(val, bool), f"{name} must be true or false")
            elif typ == "str":
                need(isinstance(val, str), f"{name} must be a string")
        need(8 <= self.n <= 4096, f"n={self.n} outside [8, 4096]")
        need(1 <= self.nv_few <= 10000, f"nv_few={self.nv_few} must be >= 1")
        need(1 <= self.nv_dense <= 10000, f"nv_dense={self.nv_dense} must be >= 1")
        need(1 <= self.n_det <= 8192, f"n_det={self.n_det} must be >= 1")
        need(self.variant in VARIANTS, f"variant {self.variant!r} not in {VARIANTS}")
        for name in ("lambda_al", "lambda_sl", "lambda_gp", "clip_c"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        for name in ("lr_base", "lr_disc", "lr_pretrain", "bp_lr_ratio"):
            need(getattr(self, name) > 0, f"{name} must be > 0")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)")
        need(self.batch_pretrain >= 1 and self.batch_joint >= 1, "batch sizes must be >= 1")
        need(self.epochs_pretrain >= 0 and self.epochs_joint >= 0, "epoch counts must be >= 0")
        need(self.seed >= 0, "seed must be >= 0")
        need(1 <= self.n_train < 1_000_000, "n_train must lie in [1, 1e6)")
        need(0 <= self.n_val < 1_000_000 and 0 <= self.n_test < 1_000_000, "n_val/n_test must lie in [0, 1e6)")
        need(self.padding in ("same", "valid"), "padding must be 'same' or 'valid'")
        need(self.final_activation in ("linear", "relu"), "final_activation must be 'linear' or 'relu'")
        need(self.ssim_window in ("uniform", "gaussian"), "ssim_window must be 'uniform' or 'gaussian'")

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_toml(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {json.dumps(v) if isinstance(v, (str, bool)) else repr(v)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh))

    def hash(self) -> str:
        """Digest of every setting except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def geometry(self) -> dict:
        return {"n": self.n, "nv_few": self.nv_few, "nv_dense": self.nv_dense, "n_det": self.n_det}
