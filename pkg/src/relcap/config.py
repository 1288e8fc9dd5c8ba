"""Run configuration with a laptop-sized ``desk`` profile and a full-size ``paper`` profile."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ContractError
from .geometry import DEFAULT_RELATIONS

FUSIONS = ("dma", "add", "explicit", "implicit")


@dataclass
class Config:
    profile: str = "desk"
    dtype: str = "float64"
    # dimensions
    v: int = 16               # region feature size
    d: int = 32               # GCN / encoder / decoder hidden size
    att_dim: int = 32         # additive attention size
    heads: int = 4
    blocks: int = 2
    embed: int = 32           # word embedding size
    k_max: int = 8
    gcn_layers: int = 1
    # graph
    relations: tuple = DEFAULT_RELATIONS
    filter_edges: bool = True
    labeler: str = "scripted"
    unordered_labels: bool = False
    # model variant
    fusion: str = "dma"
    # vocabulary
    min_freq: int = 5
    max_len: int = 16
    # optimization
    pretrain_lr: float = 1e-3
    pretrain_epochs: int = 20
    pretrain_tasks: tuple = ("mim", "mrm")
    separate_task_passes: bool = False
    mask_prob: float = 0.10
    xe_lr: float = 5e-3
    xe_epochs: int = 30
    xe_steps: int = 0         # if > 0, overrides epochs with a step budget
    scst_lr: float = 5e-4
    scst_decay_epochs: float = 50.0
    scst_steps: int = 200
    scst_samples: int = 5     # sampled captions per image and step
    batch_size: int = 4
    beam: int = 3
    clip_norm: float = 5.0
    seed: int = 0
    # synthetic data
    n_samples: int = 50
    image_w: float = 640.0
    image_h: float = 480.0
    feature_noise: float = 0.25

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.profile not in ("desk", "paper"):
            raise ContractError(f"unknown profile {self.profile!r}")
        if self.fusion not in FUSIONS:
            raise ContractError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.d % self.heads:
            raise ContractError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.gcn_layers not in (1, 2):
            raise ContractError("gcn_layers must be 1 or 2")
        if self.labeler not in ("scripted", "hash"):
            raise ContractError(f"unknown labeler {self.labeler!r}")
        if self.scst_samples < 1:
            raise ContractError("scst_samples must be >= 1")
        for task in self.pretrain_tasks:
            if task not in ("mim", "mrm"):
                raise ContractError(f"unknown pretraining task {task!r}")

    @classmethod
    def for_profile(cls, profile: str = "desk", **overrides) -> "Config":
        if profile not in PROFILES:
            raise ContractError(f"unknown profile {profile!r}")
        base = dict(PROFILES[profile])
        base.update(overrides)
        return cls(profile=profile, **base)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, profile: str | None = None) -> "Config":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"config line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key.replace("-", "_")] = val
        prof = profile or raw.pop("profile", "desk")
        raw.pop("profile", None)
        return cls.for_profile(prof, **coerce(raw))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


def coerce(raw: dict) -> dict:
    """Convert string values to the types of the matching Config fields."""
    types = {f.name: f.default if f.default is not dataclasses.MISSING else None
             for f in fields(Config)}
    out = {}
    for key, val in raw.items():
        if key not in types:
            raise ContractError(f"unknown config key {key!r}")
        proto = types[key]
        if isinstance(val, str):
            if isinstance(proto, bool):
                low = val.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ContractError(f"{key}: expected a boolean, got {val!r}")
                val = low in ("true", "1", "yes")
            elif isinstance(proto, int):
                val = int(val)
            elif isinstance(proto, float):
                val = float(val)
            elif isinstance(proto, tuple):
                val = tuple(s.strip() for s in val.split(",") if s.strip())
        out[key] = val
    return out


PROFILES = {
    "desk": {},
    "paper": dict(
        v=2048, d=512, att_dim=512, heads=8, blocks=6, embed=512, k_max=36,
        pretrain_lr=2e-4, xe_lr=2e-4, scst_lr=1e-4, batch_size=10,
        xe_epochs=30, dtype="float32",
    ),
}
