"""Run configuration: every hyperparameter of the pipeline, all defaulted.

Configs serialize to flat ``key=value`` text. Unknown keys are rejected so
typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

__all__ = ["TrainConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # representation sizes
    latent_dim: int = 64
    d_fusion: int = 64
    proj_dim: int = 32

    # disentanglement
    alpha: float = 0.4
    gamma1: float = 0.3
    gamma2: float = 0.3
    triplets_per_anchor: int = 2

    # shared spectral branch
    window_k: int = 5
    tau_low: float = 1.0
    tau_high: float = 1.0
    nce_temperature: float = 0.5

    # private hypergraph branch
    w_same: int = 3
    w_cross: int = 1
    jacobi_alpha: float = 0.0
    jacobi_beta: float = 0.0
    jacobi_order_R: int = 3
    beta_cons: float = 0.3

    # fusion transformer
    n_heads: int = 2
    n_layers: int = 2

    # loss weights
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 1.0

    # optimization
    steps: int = 300
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    # numerical caps
    eig_size_cap: int = 1500

    # ablation switches
    disable_decoupler: bool = False
    disable_shared_branch: bool = False
    disable_private_branch: bool = False
    disable_transformer_fusion: bool = False

    def validate(self):
        if self.d_fusion % self.n_heads != 0:
            raise ConfigError(f"d_fusion={self.d_fusion} must be divisible by n_heads={self.n_heads}")
        flags = [
            self.disable_decoupler,
            self.disable_shared_branch,
            self.disable_private_branch,
            self.disable_transformer_fusion,
        ]
        if all(flags):
            raise ConfigError("at most 3 of 4 ablation flags may be set; the model needs a path to logits")
        for name in ("latent_dim", "d_fusion", "proj_dim", "window_k", "jacobi_order_R", "n_heads", "n_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("tau_low", "tau_high", "nce_temperature", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("alpha",):
            if getattr(self, name) <= 0:
                raise ConfigError("alpha must be > 0")
        for name in ("gamma1", "gamma2", "beta_cons", "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.jacobi_alpha <= -1 or self.jacobi_beta <= -1:
            raise ConfigError("jacobi_alpha and jacobi_beta must be > -1")
        if self.w_same < 0 or self.w_cross < 0 or self.steps < 0:
            raise ConfigError("w_same, w_cross, steps must be >= 0")
        return self

    def ablation_flags(self):
        return {
            "disable_decoupler": self.disable_decoupler,
            "disable_shared_branch": self.disable_shared_branch,
            "disable_private_branch": self.disable_private_branch,
            "disable_transformer_fusion": self.disable_transformer_fusion,
        }

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"line {line_no}: unknown config key {key!r}")
            kwargs[key] = _parse_value(fields[key].type, key, value, line_no)
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _parse_value(type_name, key, value, line_no):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "bool":
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse {key}={value!r} as {kind}") from None
    raise ConfigError(f"line {line_no}: unsupported config field type {kind} for {key}")
