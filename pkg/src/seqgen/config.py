"""Flat ``key=value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .decoding import DecodeConfig
from .models import TrainConfig
from .rl import PpoConfig
from .tasks import SyntheticTask

OUTPUT_ROOT_ENV = "SEQGEN_OUTPUT_ROOT"
RESOLVED_NAME = "resolved_config.txt"


@dataclass(frozen=True)
class RunConfig:
    # task
    task: str = "cipher_reverse"
    vocab_size: int = 32
    min_len: int = 5
    max_len: int = 20
    n_pairs: int = 20000
    identity_cipher: bool = False
    task_seed: int = 0
    # model
    d_model: int = 64
    n_layers: int = 2
    d_ff: int = 128
    train_steps: int = 1000
    batch_size: int = 64
    lr: float = 1e-3
    model_seed: int = 0
    # decoding
    strategy: str = "preset:easy_first"
    T: str = "L"
    schedule: str = "linear_time"
    beam_K: int = 1
    beam_Kp: int = 1
    beam_Kpp: int = 1
    n_length_candidates: int = 1
    rescoring: str = "pseudo_ll"
    length_term: bool = True
    symbols: str = "greedy"
    seed: int = 0
    energy_kind: str = "pseudo_ll"
    # policy training
    ppo_clip_epsilon: float = 0.2
    ppo_gamma: float = 0.9
    ppo_history_k: int = 0
    ppo_generation_batch: int = 16
    ppo_buffer_capacity: int = 1000
    ppo_update_batch: int = 128
    ppo_value_weight: float = 0.5
    ppo_epochs: int = 4
    ppo_iterations: int = 1000
    ppo_lr: float = 1e-3
    ppo_hidden: int = 128
    ppo_gae: bool = False
    ppo_normalize_advantages: bool = True
    ppo_seed: int = 0
    # files and execution
    data_dir: str = "data"
    model: str = "models/masked_lm.npz"
    ar_model: str = "models/ar.npz"
    policy: str = "models/policy.npz"
    output_dir: str = "runs/default"
    split: str = "test"
    limit: int = 0
    workers: int = 1
    clusters: int = 5
    record_wall_time: bool = True

    # -- construction --------------------------------------------------------

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key: str, value):
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        kind = types[key]
        if not isinstance(value, str):
            return value
        v = value.strip()
        if kind == "bool":
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key}: cannot read {value!r} as a boolean")
        if kind == "int":
            return int(v)
        if kind == "float":
            return float(v)
        return v

    def with_overrides(self, values: dict) -> "RunConfig":
        unknown = sorted(set(values) - set(self.keys()))
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        return replace(self, **{k: self.coerce(k, v) for k, v in values.items()})

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            k, v = line.split("=", 1)
            values[k.strip()] = v
        return cls().with_overrides(values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    # -- views ---------------------------------------------------------------

    def synthetic_task(self) -> SyntheticTask:
        return SyntheticTask(self.task, self.vocab_size, self.min_len, self.max_len, self.task_seed, self.identity_cipher)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            steps=self.train_steps,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.model_seed,
            max_length=self.max_len,
        )

    def decode_config(self) -> DecodeConfig:
        T = int(self.T) if self.T.isdigit() else self.T
        return DecodeConfig(
            T=T,
            schedule=self.schedule,
            beam_K=self.beam_K,
            beam_Kp=self.beam_Kp,
            beam_Kpp=self.beam_Kpp,
            n_length_candidates=self.n_length_candidates,
            rescoring=self.rescoring,
            length_term=self.length_term,
            symbols=self.symbols,
            seed=self.seed,
        )

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(
            clip_epsilon=self.ppo_clip_epsilon,
            gamma=self.ppo_gamma,
            history_k=self.ppo_history_k,
            generation_batch=self.ppo_generation_batch,
            buffer_capacity=self.ppo_buffer_capacity,
            update_batch=self.ppo_update_batch,
            value_weight=self.ppo_value_weight,
            epochs=self.ppo_epochs,
            iterations=self.ppo_iterations,
            lr=self.ppo_lr,
            hidden=self.ppo_hidden,
            gae=self.ppo_gae,
            normalize_advantages=self.ppo_normalize_advantages,
            seed=self.ppo_seed,
        )


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_path(path: str) -> Path:
    """Relative paths live under the output root (``$SEQGEN_OUTPUT_ROOT``, default the working directory)."""
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def write_resolved(cfg: RunConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_NAME
    path.write_text(cfg.to_text(), encoding="utf-8")
    return path
