from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from molpretrain.errors import CheckpointError, ConfigError

MAX_POSITION = 512


@dataclass(frozen=True)
class ModelConfig:
    """Transformer hyperparameters.

    ``mtr_task_count`` is the number of regression targets of the multi-task
    head; with 0 the model has no regression head.
    """

    vocab_size: int
    hidden_size: int = 64
    num_attention_heads: int = 4
    num_hidden_layers: int = 2
    intermediate_size: int = 256
    dropout: float = 0.1
    max_position: int = MAX_POSITION
    mtr_task_count: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_attention_heads

    def validate(self) -> None:
        for name in ("vocab_size", "hidden_size", "num_attention_heads", "num_hidden_layers", "intermediate_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must cover the five special tokens and at least one symbol")
        if self.hidden_size % self.num_attention_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by num_attention_heads {self.num_attention_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_position != MAX_POSITION:
            raise ConfigError(f"max_position must be {MAX_POSITION}")
        if self.mtr_task_count < 0:
            raise ConfigError("mtr_task_count must be >= 0")

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> ModelConfig:
        types = {f.name: f.type for f in fields(cls)}
        values: dict[str, int | float] = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ConfigError(f"model config line {number}: unexpected {line!r}")
            values[key] = float(value) if types[key] == "float" else int(value)
        return cls(**values)  # type: ignore[arg-type]

    @classmethod
    def load(cls, path: str | Path) -> ModelConfig:
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"missing model config {path}")
        return cls.from_text(path.read_text())


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named parameter shapes in checkpoint order, a pure function of ``config``."""
    h, i, v = config.hidden_size, config.intermediate_size, config.vocab_size
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("embeddings.word", (v, h)),
        ("embeddings.position", (config.max_position, h)),
    ]
    for layer in range(config.num_hidden_layers):
        p = f"layer.{layer}."
        shapes += [
            (p + "ln1.gamma", (h,)),
            (p + "ln1.beta", (h,)),
            (p + "attn.qkv.weight", (h, 3 * h)),
            (p + "attn.qkv.bias", (3 * h,)),
            (p + "attn.out.weight", (h, h)),
            (p + "attn.out.bias", (h,)),
            (p + "ln2.gamma", (h,)),
            (p + "ln2.beta", (h,)),
            (p + "ffn.in.weight", (h, i)),
            (p + "ffn.in.bias", (i,)),
            (p + "ffn.out.weight", (i, h)),
            (p + "ffn.out.bias", (h,)),
        ]
    shapes += [
        ("final_ln.gamma", (h,)),
        ("final_ln.beta", (h,)),
        ("mlm.weight", (h, v)),
        ("mlm.bias", (v,)),
    ]
    if config.mtr_task_count:
        shapes += [
            ("mtr.weight", (h, config.mtr_task_count)),
            ("mtr.bias", (config.mtr_task_count,)),
        ]
    return shapes


def layer_param_count(config: ModelConfig) -> int:
    """Parameters of one encoder layer: ``4H^2 + 2HI + 9H + I``."""
    h, i = config.hidden_size, config.intermediate_size
    return 4 * h * h + 2 * h * i + 9 * h + i


def param_count(config: ModelConfig) -> int:
    """Exact parameter count in closed form.

    Parameters
    ----------
    config : ModelConfig
        Validated configuration

    Returns
    -------
    int
        Number of scalar parameters
    """
    h, v, d = config.hidden_size, config.vocab_size, config.mtr_task_count
    embeddings = v * h + config.max_position * h
    heads = 2 * h + h * v + v + (h * d + d if d else 0)
    return embeddings + config.num_hidden_layers * layer_param_count(config) + heads
