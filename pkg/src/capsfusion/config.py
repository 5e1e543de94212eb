"""Training / model configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    dropout: float = 0.4
    learning_rate: float = 1e-3
    seed: int = 42
    seq_len: int = 64  # n
    embed_dim: int = 64  # k
    hidden: int = 64  # H, per direction
    caps_in: Optional[int] = None  # N_in; None -> seq_len capsules of dim 2H
    caps_out: int = 4  # N_out
    caps_dim: int = 8  # d_out
    feat_hidden: int = 16  # H_f
    routing_iters: int = 3
    u_max: float = 2.0
    use_features: bool = True
    train_ratio: float = 0.8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.seq_len >= 1, "seq_len must be >= 1"),
            (min(self.embed_dim, self.hidden, self.caps_out, self.caps_dim, self.feat_hidden) >= 1,
             "model dimensions must be >= 1"),
            (self.routing_iters >= 1, "routing_iters must be >= 1"),
            (self.u_max > 0, "u_max must be > 0"),
            (0.0 < self.train_ratio < 1.0, "train_ratio must be in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        n_in = self.n_in
        if n_in < 1 or (self.seq_len * 2 * self.hidden) % n_in:
            raise ConfigError(
                f"caps_in={n_in} does not divide the encoder output {self.seq_len}x{2 * self.hidden}"
            )

    @property
    def n_in(self) -> int:
        return self.seq_len if self.caps_in is None else self.caps_in

    @property
    def d_in(self) -> int:
        return self.seq_len * 2 * self.hidden // self.n_in

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
