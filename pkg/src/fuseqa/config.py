"""Run configuration shared by training, distillation and the CLI."""

from dataclasses import asdict, dataclass, fields

MODES = ("multimodal", "distill-text", "distill-audio",
         "conventional-text", "conventional-audio")
STUDENT_INPUTS = ("intra", "inter")


@dataclass
class TrainConfig:
    d: int = 32
    n_heads: int = 4
    d_ff: int = 0            # 0 -> 4*d
    dropout: float = 0.1
    max_len: int = 384
    vocab_size: int = 64
    audio_dim: int = 128
    fusion_depth: int = 1
    student_hidden: int = 0  # 0 -> 2*d
    batch_size: int = 12
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    mode: str = "multimodal"
    student_input: str = "intra"
    logit_mse_weight: float = 1.0
    logit_mse_backprop: bool = True

    def __post_init__(self):
        if self.d <= 0 or self.n_heads <= 0 or self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} must be a positive multiple of n_heads={self.n_heads}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.student_input not in STUDENT_INPUTS:
            raise ValueError(f"unknown student_input {self.student_input!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff else 4 * self.d

    @property
    def student_width(self) -> int:
        return self.student_hidden if self.student_hidden else 2 * self.d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **overrides) -> "TrainConfig":
        merged = self.to_dict()
        merged.update(overrides)
        return TrainConfig.from_dict(merged)
