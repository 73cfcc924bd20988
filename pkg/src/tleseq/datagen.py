"""Synthetic sequence-to-sequence tasks and run configuration.

Three toy tasks over a shared alphabet: copy (target equals input),
reverse, and noisy-copy (the target is the clean string; the *input* is
corrupted by random substitutions).  Each split draws from its own PRNG
stream, so train/valid/test stay disjoint in randomness even though they
share a seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .sequences import Alphabet, OutputSequence, SamplePair, save_dataset
from .training import TrainConfig

__all__ = ["RunConfig", "TASKS", "make_split", "gen_data", "parse_run_config",
           "load_run_config", "run_config_items"]

TASKS = ("copy", "reverse", "noisy-copy")

_SPLIT_STREAMS = {"train": 1, "valid": 2, "test": 3}


@dataclass(frozen=True)
class RunConfig:
    task: str = "copy"
    substitution_rate: float = 0.2      # noisy-copy only
    alphabet_size: int = 8
    min_length: int = 3
    max_length: int = 10
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    seed: int = 0
    eval_beams: tuple[int, ...] = (1, 10)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.alphabet_size < 2:
            raise ConfigError("alphabet_size must be at least 2")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError("need 1 <= min_length <= max_length")
        if min(self.n_train, self.n_valid, self.n_test) < 1:
            raise ConfigError("every split needs at least one sample")
        if not 0.0 <= self.substitution_rate <= 1.0:
            raise ConfigError("substitution_rate must lie in [0, 1]")
        if not self.eval_beams or min(self.eval_beams) < 1:
            raise ConfigError("eval_beams must be positive integers")

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet.of_size(self.alphabet_size)

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}[split]


def _corrupt(tokens: np.ndarray, rate: float, k: int, rng) -> np.ndarray:
    """Substitute each position with probability `rate` by a different symbol."""
    hit = rng.random(tokens.shape[0]) < rate
    # shift by 1..k-1 mod k: never maps a token to itself
    shift = rng.integers(1, k, size=tokens.shape[0])
    return np.where(hit, (tokens + shift) % k, tokens)


def make_split(config: RunConfig, split: str) -> list[SamplePair]:
    """Deterministic sample list for one of train/valid/test."""
    if split not in _SPLIT_STREAMS:
        raise ConfigError(f"unknown split {split!r}")
    rng = np.random.default_rng([config.seed, _SPLIT_STREAMS[split]])
    k = config.alphabet_size
    alpha = config.alphabet
    pairs = []
    for _ in range(config.split_size(split)):
        length = int(rng.integers(config.min_length, config.max_length + 1))
        clean = rng.integers(0, k, size=length)
        if config.task == "copy":
            inp, tgt = clean, clean
        elif config.task == "reverse":
            inp, tgt = clean, clean[::-1]
        else:
            inp, tgt = _corrupt(clean, config.substitution_rate, k, rng), clean
        pairs.append(SamplePair(
            tuple(int(t) for t in inp),
            OutputSequence.complete(tuple(int(t) for t in tgt), alpha),
        ))
    return pairs


def gen_data(config: RunConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write train/valid/test files; returns split -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    alpha = config.alphabet
    paths = {}
    for split in _SPLIT_STREAMS:
        path = out_dir / f"{split}.tsv"
        save_dataset(path, make_split(config, split), alpha, alpha)
        paths[split] = path
    return paths


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------

_RUN_KEYS = {
    "task": str,
    "substitution_rate": float,
    "alphabet_size": int,
    "min_length": int,
    "max_length": int,
    "n_train": int,
    "n_valid": int,
    "n_test": int,
    "seed": int,
}

_TRAIN_KEYS = {
    "batch_size": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "grad_clip": float,
    "max_epochs": int,
    "patience": int,
    "clip_value": float,
    "csv_timing": None,   # parsed as bool below
    "verify_bound": None,
}

_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def _parse_bool(raw: str, key: str, where: str) -> bool:
    try:
        return _BOOL_WORDS[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: {key} must be true/false, got {raw!r}") from None


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys are errors."""
    run_kwargs: dict = {}
    train_kwargs: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{source}:{lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected key=value, got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in run_kwargs or key in train_kwargs:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if key == "eval_beams":
            try:
                run_kwargs[key] = tuple(int(b) for b in raw.replace(",", " ").split())
            except ValueError:
                raise ConfigError(f"{where}: eval_beams must be integers") from None
        elif key in _RUN_KEYS:
            try:
                run_kwargs[key] = _RUN_KEYS[key](raw)
            except ValueError:
                raise ConfigError(
                    f"{where}: bad value {raw!r} for {key}"
                ) from None
        elif key in _TRAIN_KEYS:
            conv = _TRAIN_KEYS[key]
            if conv is None:
                train_kwargs[key] = _parse_bool(raw, key, where)
            else:
                try:
                    train_kwargs[key] = conv(raw)
                except ValueError:
                    raise ConfigError(
                        f"{where}: bad value {raw!r} for {key}"
                    ) from None
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    if "seed" in run_kwargs:
        train_kwargs.setdefault("seed", run_kwargs["seed"])
    return RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_run_config(path.read_text(encoding="utf-8"), source=str(path))


def run_config_items(config: RunConfig) -> dict:
    """Every knob as a flat JSON-friendly dict (for run manifests)."""
    items = {k: getattr(config, k) for k in _RUN_KEYS}
    items["eval_beams"] = list(config.eval_beams)
    for k in _TRAIN_KEYS:
        items[f"train.{k}"] = getattr(config.train, k)
    items["train.seed"] = config.train.seed
    return items
