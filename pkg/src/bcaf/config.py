"""Training configuration and its plain-text file format.

Config files are UTF-8 ``key = value`` lines; ``#`` starts a comment.
Every TrainConfig field has a key, unknown keys are rejected, and
``--set key=value`` overrides from the CLI take precedence.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet

from bcaf.errors import ConfigError

VARIANTS = ("BAN", "JAN", "BAN-SA", "BAN-CA")
ABLATABLE = ("icn", "ban", "can")

# layer counts reported for each attention variant on the two benchmark
# dataset configurations
VARIANT_LAYER_COUNTS = {
    "meld": {"BAN": 5, "JAN": 3, "BAN-SA": 7, "BAN-CA": 7},
    "iemocap": {"BAN": 3, "JAN": 4, "BAN-SA": 5, "BAN-CA": 6},
}


@dataclass
class TrainConfig:
    # objective weights
    alpha: float = 0.3
    beta: float = 0.3
    mu: float = 0.1
    # optimizer
    lr: float = 1e-4
    l2: float = 1e-4
    decoupled_l2: bool = False
    # regularization / schedule
    dropout: float = 0.3
    patience: int = 15
    max_epochs: int = 300
    batch_size: int = 8
    seed: int = 0
    # architecture
    variant: str = "BAN"
    num_layers: int = 1
    d_model: int = 1024
    d_latent: int = 0  # 0 -> d_model // 2
    d_ff: int = 0  # 0 -> 4 * d_model
    num_heads: int = 1
    positional: str = "none"
    # behavioural switches
    symmetric_joint: bool = False
    connection_normalized: bool = True
    connection_loss_clip: float = 0.0
    decoder_final_relu: bool = False
    combine_heads: bool = False
    ablations: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("alpha", "beta", "mu"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; choose from {VARIANTS}"
            )
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.d_model < 2:
            raise ConfigError(f"d_model must be >= 2, got {self.d_model}")
        if self.positional not in ("none", "sinusoidal"):
            raise ConfigError(f"positional must be none|sinusoidal, got {self.positional}")
        bad = set(self.ablations) - set(ABLATABLE)
        if bad:
            raise ConfigError(f"unknown ablations {sorted(bad)}; valid: {ABLATABLE}")
        if self.latent_dim >= self.d_model:
            raise ConfigError(
                f"d_latent ({self.latent_dim}) must be < d_model ({self.d_model})"
            )
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"num_heads ({self.num_heads}) must divide d_model ({self.d_model})"
            )

    @property
    def latent_dim(self) -> int:
        return self.d_latent if self.d_latent > 0 else self.d_model // 2

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff > 0 else 4 * self.d_model

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    # -- text format ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, frozenset):
                v = ",".join(sorted(v))
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key == "ablations":
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return frozenset(items)
    return raw


def parse_config_text(text: str, overrides: dict | None = None) -> TrainConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"override: unknown config key {key!r}")
        values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
    return TrainConfig(**values)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), overrides)
