"""Alphabets, output sequences, and small-output-space enumeration.

Tokens are small integer indices into an alphabet.  The content symbols
occupy indices 0..K-1 and the end-of-sequence marker gets index K, so an
"extended" vector over the alphabet has K+1 entries with the terminator
last.  Text form is space-separated symbols with a literal `$`.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import BudgetError, ConfigError

END_SYMBOL = "$"

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class Alphabet:
    """Ordered content symbols plus the implicit terminator at index len(symbols)."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigError("alphabet symbols must be distinct")
        if END_SYMBOL in self.symbols:
            raise ConfigError(f"{END_SYMBOL!r} is reserved for the terminator")
        if any(not s or any(ch.isspace() for ch in s) for s in self.symbols):
            raise ConfigError("alphabet symbols must be non-empty and contain no whitespace")

    @classmethod
    def of_size(cls, k: int) -> "Alphabet":
        if k < 1:
            raise ConfigError("alphabet needs at least one symbol")
        syms = tuple(_LETTERS[i] if i < len(_LETTERS) else f"t{i}" for i in range(k))
        return cls(syms)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def extended_size(self) -> int:
        return len(self.symbols) + 1

    @property
    def end_index(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        if symbol == END_SYMBOL:
            return self.end_index
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise ConfigError(f"unknown symbol {symbol!r}") from None

    def symbol(self, index: int) -> str:
        if index == self.end_index:
            return END_SYMBOL
        if 0 <= index < len(self.symbols):
            return self.symbols[index]
        raise ConfigError(f"token index {index} out of range for |C|={self.size}")

    def encode(self, symbols: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(s) for s in symbols)

    def decode(self, tokens: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.symbol(int(t)) for t in tokens)


@dataclass(frozen=True)
class OutputSequence:
    """A candidate output: token indices plus whether it has been closed off.

    A terminated sequence carries the terminator as its last token; a prefix
    carries content tokens only.  `validate` checks that discipline, so
    malformed instances are representable but rejected.
    """

    tokens: tuple[int, ...]
    terminated: bool
    end_index: int

    @classmethod
    def prefix(cls, content: Iterable[int], alphabet: Alphabet) -> "OutputSequence":
        return cls(tuple(int(t) for t in content), False, alphabet.end_index)

    @classmethod
    def complete(cls, content: Iterable[int], alphabet: Alphabet) -> "OutputSequence":
        toks = tuple(int(t) for t in content) + (alphabet.end_index,)
        return cls(toks, True, alphabet.end_index)

    @property
    def content(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.terminated else self.tokens

    @property
    def content_length(self) -> int:
        return len(self.content)

    def content_array(self) -> np.ndarray:
        return np.asarray(self.content, dtype=np.int64)

    def append(self, token: int) -> "OutputSequence":
        """Extend by one token; appending the end index terminates."""
        if self.terminated:
            raise ValueError("cannot extend a terminated sequence")
        token = int(token)
        return OutputSequence(self.tokens + (token,), token == self.end_index, self.end_index)


def validate(seq: OutputSequence) -> bool:
    """True iff tokens are in range and the terminator sits exactly where claimed."""
    if any(not 0 <= t <= seq.end_index for t in seq.tokens):
        return False
    ends = [i for i, t in enumerate(seq.tokens) if t == seq.end_index]
    if seq.terminated:
        return ends == [len(seq.tokens) - 1]
    return not ends


@dataclass(frozen=True)
class SamplePair:
    """One supervised example: input tokens and their terminated ground truth."""

    input_tokens: tuple[int, ...]
    ground_truth: OutputSequence

    def __post_init__(self):
        if not self.input_tokens:
            raise ConfigError("input must be non-empty")
        if not self.ground_truth.terminated:
            raise ConfigError("ground truth must be terminated")


def output_space_size(n_symbols: int, max_len: int) -> int:
    if n_symbols == 1:
        return max_len + 1
    return (n_symbols ** (max_len + 1) - 1) // (n_symbols - 1)


def enumerate_outputs(
    alphabet: Alphabet, max_len: int, budget: int = 1_000_000
) -> Iterator[OutputSequence]:
    """All terminated outputs with at most max_len content tokens.

    Order is fixed: by length, then lexicographic by token index, so any
    oracle built on top is deterministic.  The size check runs eagerly, before
    the first sequence is produced.
    """
    if max_len < 0:
        raise ConfigError("max_len must be nonnegative")
    total = output_space_size(alphabet.size, max_len)
    if total > budget:
        raise BudgetError(f"enumeration of {total} sequences exceeds budget {budget}")

    def gen():
        for length in range(max_len + 1):
            for combo in itertools.product(range(alphabet.size), repeat=length):
                yield OutputSequence.complete(combo, alphabet)

    return gen()


# ---------------------------------------------------------------------------
# Text form and dataset files
# ---------------------------------------------------------------------------

def format_sequence(seq: OutputSequence, alphabet: Alphabet) -> str:
    return " ".join(alphabet.decode(seq.tokens))


def parse_sequence(text: str, alphabet: Alphabet) -> OutputSequence:
    parts = text.split()
    tokens = alphabet.encode(parts)
    terminated = bool(tokens) and tokens[-1] == alphabet.end_index
    seq = OutputSequence(tokens, terminated, alphabet.end_index)
    if not validate(seq):
        raise ConfigError(f"malformed sequence {text!r}")
    return seq


def save_dataset(
    path: str | Path,
    pairs: Iterable[SamplePair],
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
) -> None:
    """One sample per line: input symbols, a tab, target symbols sans terminator."""
    lines = []
    for p in pairs:
        left = " ".join(input_alphabet.decode(p.input_tokens))
        right = " ".join(output_alphabet.decode(p.ground_truth.content))
        lines.append(f"{left}\t{right}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def file_digest(path: str | Path) -> str:
    """Hex sha256 of a file's bytes (dataset identity for run manifests)."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(
    path: str | Path,
    input_alphabet: Alphabet,
    output_alphabet: Alphabet,
) -> list[SamplePair]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.count("\t") != 1:
            raise ConfigError(f"{path}:{lineno}: expected exactly one tab")
        left, right = line.split("\t")
        try:
            inp = input_alphabet.encode(left.split())
            gt = OutputSequence.complete(output_alphabet.encode(right.split()), output_alphabet)
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
        pairs.append(SamplePair(inp, gt))
    return pairs
