"""Training configuration: a single JSON document with fail-fast parsing.

Unknown keys are rejected at every nesting level so typos surface
immediately.  The published hyperparameter grid (M in {1,2,4,8,16,32},
s in {0,1,2,4,8,16}, 3-6 layers, lr 0.001, <= 300 epochs) is advisory:
off-grid values are flagged, not refused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import GraphIOError, ValidationError

_GRID_M = {1, 2, 4, 8, 16, 32}
_GRID_S = {0, 1, 2, 4, 8, 16}
_GRID_LAYERS = {3, 4, 5, 6}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"unknown config key(s) in {where}: {sorted(unknown)}")


@dataclass
class PEConfig:
    mode: str = "none"  # none | rwse | lappe
    k: int = 8          # RWSE steps / LapPE eigenvector count

    @classmethod
    def from_dict(cls, obj: dict) -> "PEConfig":
        _check_keys(obj, {"mode", "k"}, "pe")
        cfg = cls(**obj)
        if cfg.mode not in ("none", "rwse", "lappe"):
            raise ValidationError(f"pe.mode must be none|rwse|lappe, got {cfg.mode!r}")
        if cfg.mode != "none" and cfg.k < 1:
            raise ValidationError("pe.k must be >= 1")
        return cfg

    @property
    def dim(self) -> int:
        return 0 if self.mode == "none" else self.k


@dataclass
class EncoderConfig:
    kind: str = "rwf"   # rwf | mpnn
    window: int = 4     # RWF flag window / conv kernel size
    rounds: int = 2     # MPNN rounds

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderConfig":
        _check_keys(obj, {"kind", "window", "rounds"}, "encoder")
        cfg = cls(**obj)
        if cfg.kind not in ("rwf", "mpnn"):
            raise ValidationError(f"encoder.kind must be rwf|mpnn, got {cfg.kind!r}")
        if cfg.window < 1 or cfg.rounds < 1:
            raise ValidationError("encoder.window and encoder.rounds must be >= 1")
        return cfg


@dataclass
class MpnnConfig:
    enabled: bool = False
    rounds: int = 2

    @classmethod
    def from_dict(cls, obj: dict) -> "MpnnConfig":
        _check_keys(obj, {"enabled", "rounds"}, "mpnn")
        cfg = cls(**obj)
        if cfg.rounds not in (1, 2):
            raise ValidationError("mpnn.rounds must be 1 or 2")
        return cfg


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_dict(cls, obj: dict) -> "AdamConfig":
        _check_keys(obj, {"beta1", "beta2", "eps"}, "adam")
        return cls(**obj)


@dataclass
class TrainConfig:
    M: int = 8
    m: int = 2
    s: int = 1
    n_token_layers: int = 1
    n_node_layers: int = 1
    d_model: int = 16
    d_state: int = 16
    conv_width: int = 4
    expansion: int = 2
    ordering: str = "degree"  # degree | ppr | identity
    pe: PEConfig = field(default_factory=PEConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    mpnn: MpnnConfig = field(default_factory=MpnnConfig)
    task: str = "graph_class"  # node_class | graph_class | graph_reg
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    val_fraction: float = 0.2
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.m < 0:
            raise ValidationError("m must be >= 0")
        if self.m >= 1 and self.s < 1:
            raise ValidationError(
                "s = 0 with m >= 1 is undefined; use m = 0 for node tokens")
        if self.m >= 1 and self.n_token_layers < 1:
            raise ValidationError("m >= 1 requires at least one token layer")
        if self.m == 0 and self.n_token_layers != 0:
            raise ValidationError("m = 0 requires n_token_layers = 0")
        if self.m >= 1 and self.M < 1:
            raise ValidationError("M must be >= 1")
        if self.n_node_layers < 0:
            raise ValidationError("n_node_layers must be >= 0")
        if self.m == 0 and self.n_node_layers < 1:
            raise ValidationError("m = 0 requires at least one node layer")
        for name in ("d_model", "d_state", "conv_width", "expansion"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.ordering not in ("degree", "ppr", "identity"):
            raise ValidationError(f"unknown ordering {self.ordering!r}")
        if self.task not in ("node_class", "graph_class", "graph_reg"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in [0, 1)")

    @property
    def d_inner(self) -> int:
        return self.expansion * self.d_model

    @property
    def seq_len(self) -> int:
        """Token-sequence length per node in subgraph mode."""
        return self.s * self.m + 1

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        _check_keys(obj, allowed, "config")
        obj = dict(obj)
        for key, sub in (("pe", PEConfig), ("encoder", EncoderConfig),
                         ("mpnn", MpnnConfig), ("adam", AdamConfig)):
            if key in obj:
                if not isinstance(obj[key], dict):
                    raise ValidationError(f"config key '{key}' must be an object")
                obj[key] = sub.from_dict(obj[key])
        return cls(**obj)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise GraphIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise GraphIOError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def grid_warnings(self) -> list[str]:
        """Notes for values outside the published search grid."""
        notes = []
        if self.M not in _GRID_M:
            notes.append(f"M={self.M} is off the search grid {sorted(_GRID_M)}")
        if self.m >= 1 and self.s not in _GRID_S:
            notes.append(f"s={self.s} is off the search grid {sorted(_GRID_S)}")
        total_layers = self.n_token_layers + self.n_node_layers
        if total_layers not in _GRID_LAYERS:
            notes.append(
                f"{total_layers} total layers is off the search grid "
                f"{sorted(_GRID_LAYERS)}")
        if self.lr != 0.001:
            notes.append(f"lr={self.lr} differs from the grid value 0.001")
        if self.epochs > 300:
            notes.append(f"epochs={self.epochs} exceeds the grid maximum 300")
        return notes
