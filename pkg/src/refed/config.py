import hashlib
import json
from dataclasses import asdict, dataclass, field

MODES = ("refed", "only_source", "only_target", "source_target", "finetune")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "refed"
    epochs: int = 200
    lr: float = 1e-4
    batch_size: int = None
    tau: float = 0.07
    dropout: float = 0.5
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    normalize_embeddings: bool = True
    pooling: bool = False
    seed: int = 0
    # finetune: epochs spent on source before switching to target
    finetune_source_epochs: int = None
    reset_optimizer_between_phases: bool = True
    source_val_fraction: float = 0.2
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size is None:
            self.batch_size = 512 if self.mode == "refed" else 256
        if self.finetune_source_epochs is None:
            self.finetune_source_epochs = self.epochs // 2
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if not 0 <= self.finetune_source_epochs <= self.epochs:
            raise ConfigError("finetune_source_epochs must lie in [0, epochs]")
        if not 0.0 < self.source_val_fraction < 1.0:
            raise ConfigError("source_val_fraction must be in (0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        if "mode" in kw and "batch_size" not in kw:
            d["batch_size"] = None
        if "epochs" in kw and "finetune_source_epochs" not in kw:
            d["finetune_source_epochs"] = None
        return RunConfig.from_dict(d)
