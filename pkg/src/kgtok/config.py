"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .anchors import STRATEGIES
from .encoder import DECODERS
from .tokenizer import TIE_POLICIES
from .training import LOSSES, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # vocabulary / tokenization
    num_anchors: int = 20
    anchors_per_node: int = 5
    context_size: int = 4
    tie_policy: str = "canonical"
    anchor_strategy: str = "mixed"
    # encoder / decoder
    dim: int = 32
    encoder_hidden: int = 0  # 0 -> 2 * dim
    encoder_layers: int = 2
    dropout: float = 0.1
    decoder: str = "distmult"
    # training
    loss: str = "nssal"
    margin: float = 6.0
    adv_temperature: float = 1.0
    num_negatives: int = 32
    label_smoothing: float = 0.0
    lr: float = 5e-3
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    # files
    train: str = ""
    valid: str = ""
    test: str = ""
    out: str = "run"

    def __post_init__(self):
        checks = [
            (self.num_anchors >= 0, "num_anchors must be >= 0"),
            (self.anchors_per_node >= 0, "anchors_per_node must be >= 0"),
            (self.context_size >= 0, "context_size must be >= 0"),
            (self.anchors_per_node <= self.num_anchors or self.num_anchors == 0,
             "anchors_per_node cannot exceed num_anchors"),
            (self.tie_policy in TIE_POLICIES, f"tie_policy must be one of {TIE_POLICIES}"),
            (self.anchor_strategy in STRATEGIES, f"anchor_strategy must be one of {STRATEGIES}"),
            (self.decoder in DECODERS, f"decoder must be one of {DECODERS}"),
            (self.loss in LOSSES, f"loss must be one of {LOSSES}"),
            (self.encoder_layers == 2, "only the 2-layer MLP encoder is supported"),
            (self.dim > 0 and self.encoder_hidden >= 0, "dims must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.loss, margin=self.margin, adv_temperature=self.adv_temperature,
            num_negatives=self.num_negatives, label_smoothing=self.label_smoothing,
            dropout=self.dropout, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            seed=sub_seed(self.seed, "train"),
        )

    @property
    def hidden(self) -> int:
        return self.encoder_hidden or 2 * self.dim

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def require_files(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"config key '{name}' is required")
            if not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key '{key}' expects {kind}, got {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Relative paths resolve against ``base_dir``."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        values[key] = _coerce(key, raw)
    if base_dir is not None:
        for key in ("train", "valid", "test", "out"):
            if key in values and values[key] and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


def sub_seed(seed: int, name: str) -> int:
    """Independent named seed derived from the run seed."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1
