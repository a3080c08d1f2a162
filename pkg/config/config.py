from io import StringIO
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.data.synthetic import TaskSpec
from src.errors import ConfigError


def _parse_list(value: str, cast=float) -> list:
    return [cast(item.strip()) for item in str(value).split(",") if item.strip()]


class TrainConfig(BaseSettings):
    """Every knob of a run. Files are flat ``key = value`` text; env overrides use ``S5_``."""

    model_config = SettingsConfigDict(env_prefix="S5_", extra="forbid", validate_assignment=False)

    # Synthetic task
    task_kind: str = Field(default="sparse")
    classes: int = Field(default=4)
    frames: int = Field(default=12)
    frame_height: int = Field(default=32)
    frame_width: int = Field(default=32)
    patch: int = Field(default=8)
    planted_count: int = Field(default=16)
    noise_std: float = Field(default=1.0)
    train_size: int = Field(default=2000)
    val_size: int = Field(default=500)
    test_size: int = Field(default=500)
    data_path: str = Field(default="data/sparse.s5ds")
    out_dir: str = Field(default="runs")

    # Model
    d_emb: int = Field(default=64)
    state_dim: int = Field(default=16)
    strides: str = Field(default="2,2,2")
    dropout: float = Field(default=0.2)
    dt_min: float = Field(default=1e-3)
    dt_max: float = Field(default=1e-1)
    input_frames: Optional[int] = Field(default=None)

    # Token selection
    eta: float = Field(default=0.5)
    selection: str = Field(default="learned")
    mask_input: str = Field(default="s4")
    rho_g: float = Field(default=1.0)
    gumbel_eps: float = Field(default=1e-10)
    m_s4: float = Field(default=0.01)
    deterministic_topk: bool = Field(default=False)
    eval_sampling: bool = Field(default=True)

    # Optimization (lr resolves to 1e-3 * batch_size / 16 when unset)
    lr: Optional[float] = Field(default=None)
    weight_decay: float = Field(default=0.01)
    batch_size: int = Field(default=16)
    epochs: int = Field(default=30)
    plateau_factor: float = Field(default=0.2)
    plateau_patience_epochs: int = Field(default=1)
    min_lr: float = Field(default=1e-7)
    beta1: float = Field(default=0.9)
    beta2: float = Field(default=0.999)
    adam_eps: float = Field(default=1e-8)

    # Contrastive pretraining (pretrain_lr resolves to 1e-4 * pretrain_batch_size / 256)
    pretrain_epochs: int = Field(default=60)
    pretrain_batch_size: int = Field(default=16)
    pretrain_lr: Optional[float] = Field(default=None)
    pretrain_weight_decay: float = Field(default=0.05)
    warmup_fraction: float = Field(default=0.13)
    rho_nce: float = Field(default=0.2)
    m_key: float = Field(default=0.99)
    tau_long: int = Field(default=3)
    tau_short: int = Field(default=2)
    clip_frames: int = Field(default=4)
    pretrain_eta: float = Field(default=0.5)
    head_hidden: int = Field(default=64)
    head_out: int = Field(default=32)
    pretrained_checkpoint: Optional[str] = Field(default=None)

    # Ablation grid (comma separated; stride pairs as long:short)
    ablate_axes: str = Field(default="eta,frames,tau,lsmcl,pretrain_eta,selection")
    ablate_etas: str = Field(default="0,0.2,0.5,0.8,0.9")
    ablate_frames: str = Field(default="12,6,3")
    ablate_tau_pairs: str = Field(default="2:2,3:2,3:1")
    ablate_pretrain_etas: str = Field(default="0.3,0.5,0.7")
    ablate_selections: str = Field(default="learned,random,none")
    ablate_seeds: str = Field(default="0")

    # Runtime
    seed: int = Field(default=0)
    workers: int = Field(default=2)
    bench_steps: int = Field(default=3)
    debug_numerics: bool = Field(default=False)
    record_timing: bool = Field(default=False)

    # Logging
    log_level: str = Field(default="INFO")
    log_file: str = Field(default="logs/s5.log")

    @field_validator("input_frames", "lr", "pretrain_lr", "pretrained_checkpoint", mode="before")
    @classmethod
    def blank_is_none(cls, v):
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @field_validator("task_kind", "selection", "mask_input", mode="before")
    @classmethod
    def normalize_choice(cls, v):
        return v.strip().lower() if isinstance(v, str) else v

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_level(cls, v):
        return v.strip().upper() if isinstance(v, str) else v

    @model_validator(mode="after")
    def resolve_learning_rates(self):
        if self.lr is None:
            self.lr = 1e-3 * self.batch_size / 16
        if self.pretrain_lr is None:
            self.pretrain_lr = 1e-4 * self.pretrain_batch_size / 256
        return self

    @property
    def stride_list(self) -> List[int]:
        return _parse_list(self.strides, int)

    @property
    def blocks(self) -> int:
        return len(self.stride_list)

    @property
    def model_frames(self) -> int:
        return self.input_frames if self.input_frames is not None else self.frames

    @property
    def tokens(self) -> int:
        return (self.frame_height // self.patch) * (self.frame_width // self.patch) * self.model_frames

    def grid(self, name: str) -> list:
        """Parsed ablation axis values."""
        raw = getattr(self, f"ablate_{name}")
        if name == "tau_pairs":
            return [tuple(int(v) for v in pair.split(":")) for pair in _parse_list(raw, str)]
        if name in ("frames", "seeds"):
            return _parse_list(raw, int)
        if name in ("selections", "axes"):
            return _parse_list(raw, str)
        return _parse_list(raw, float)

    def task_spec(self) -> TaskSpec:
        return TaskSpec(self.task_kind, self.classes, self.frames, self.frame_height,
                        self.frame_width, self.patch, self.planted_count, self.noise_std,
                        self.train_size, self.val_size, self.test_size)

    def validate_config(self, source: str = "<config>"):
        """Validate configuration settings"""
        errors = []

        # Check positive sizes
        for key in ("classes", "frames", "frame_height", "frame_width", "patch", "planted_count",
                    "d_emb", "state_dim", "batch_size", "epochs", "pretrain_epochs",
                    "pretrain_batch_size", "tau_long", "tau_short", "clip_frames",
                    "head_hidden", "head_out", "plateau_patience_epochs", "bench_steps"):
            if getattr(self, key) <= 0:
                errors.append(f"{key} must be positive")
        for key in ("lr", "pretrain_lr", "rho_g", "rho_nce", "dt_min", "dt_max", "min_lr",
                    "gumbel_eps", "adam_eps"):
            if getattr(self, key) <= 0:
                errors.append(f"{key} must be positive")
        for key in ("weight_decay", "pretrain_weight_decay", "noise_std", "seed", "workers",
                    "train_size", "val_size", "test_size"):
            if getattr(self, key) < 0:
                errors.append(f"{key} must be non-negative")

        # Check ratios
        for key in ("eta", "pretrain_eta", "dropout", "warmup_fraction"):
            if not 0.0 <= getattr(self, key) < 1.0:
                errors.append(f"{key} must be in [0, 1)")
        for key in ("m_s4", "m_key"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                errors.append(f"{key} must be in [0, 1]")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                errors.append(f"{key} must be in [0, 1)")
        if not 0.0 < self.plateau_factor < 1.0:
            errors.append("plateau_factor must be in (0, 1)")
        if self.dt_min > self.dt_max:
            errors.append("dt_min must not exceed dt_max")
        if self.tau_short > self.tau_long:
            errors.append("tau_short must not exceed tau_long")

        # Check choices
        if self.task_kind not in ("sparse", "long_range"):
            errors.append("task_kind must be sparse or long_range")
        if self.selection not in ("learned", "random", "none"):
            errors.append("selection must be learned, random or none")
        if self.mask_input not in ("s4", "tokens"):
            errors.append("mask_input must be s4 or tokens")

        # Check model shape
        try:
            strides = self.stride_list
        except ValueError:
            strides = []
            errors.append("strides must be comma separated integers")
        if not strides or any(s < 1 for s in strides):
            errors.append("strides must list at least one positive stride")
        elif self.d_emb % (2 ** len(strides)):
            errors.append(f"d_emb must stay even through {len(strides)} halving blocks")
        if self.patch > 0 and (self.frame_height % self.patch or self.frame_width % self.patch):
            errors.append("frame_height and frame_width must be divisible by patch")
        if self.input_frames is not None and not 0 < self.input_frames <= self.frames:
            errors.append("input_frames must be in [1, frames]")
        if self.clip_frames * self.tau_long > self.frames:
            errors.append("clip_frames * tau_long must not exceed frames")
        if self.clip_frames > self.model_frames:
            errors.append("clip_frames must not exceed the model input frames")

        # Check ablation grids parse
        for axis in ("etas", "frames", "tau_pairs", "pretrain_etas", "selections", "seeds", "axes"):
            try:
                self.grid(axis)
            except ValueError:
                errors.append(f"ablate_{axis} is malformed")

        if errors:
            raise ConfigError(f"Configuration errors in {source}: {', '.join(errors)}")

    def replace(self, **changes: Any) -> "TrainConfig":
        """Validated copy with ``changes`` applied (used by ablation cells)."""
        values = self.model_dump()
        # learning rates derived from batch sizes follow the new batch sizes
        if values["lr"] == 1e-3 * self.batch_size / 16:
            values.pop("lr")
        if values["pretrain_lr"] == 1e-4 * self.pretrain_batch_size / 256:
            values.pop("pretrain_lr")
        return build_config(values | changes, "<override>")

    def to_text(self) -> str:
        """Config echo: one ``key = value`` line per set field."""
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def build_config(values: Dict[str, Any], source: str = "<config>") -> TrainConfig:
    try:
        cfg = TrainConfig(**values)
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigError(f"Configuration errors in {source}: {'; '.join(problems)}")
    cfg.validate_config(source)
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    raw = dotenv_values(stream=StringIO(text))
    missing = [key for key, value in raw.items() if value is None]
    if missing:
        raise ConfigError(f"Configuration errors in {source}: keys without a value: {', '.join(missing)}")
    return build_config({key.strip().lower(): value for key, value in raw.items()}, source)


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> TrainConfig:
    """Defaults, then the file at ``path``, then explicit ``overrides`` (CLI flags)."""
    if path is None:
        return build_config(dict(overrides), "<defaults>")
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"Config file {path} is not UTF-8: {e}")
    cfg = parse_config_text(text, str(path))
    return cfg.replace(**overrides) if overrides else cfg
