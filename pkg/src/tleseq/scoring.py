"""Score functions over (input, prefix) pairs and the decoders on top of them.

A Scorer maps (input, prefix) to a real vector over the extended alphabet:
one entry per content token plus the terminator last.  Low is good; every
search here minimizes the running sum of per-step entries.  Models trained
on per-step probabilities still fit this mold through NormalizedView, which
turns raw entries into per-step negative log-probabilities.

Tie-breaking is fixed everywhere: the lowest token index wins within a
step, and earlier-created hypotheses win between hypotheses, so decodes are
reproducible across platforms.
"""

from __future__ import annotations

import heapq
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import BudgetError, ConfigError, UnterminatedError
from .sequences import OutputSequence, output_space_size

TokenSeq = Sequence[int]

__all__ = [
    "Scorer",
    "TabulatedScorer",
    "OptimisticScorer",
    "NormalizedView",
    "Hypothesis",
    "DecoderSpec",
    "score_sum",
    "score_normalized",
    "greedy_search",
    "beam_search",
    "exact_search",
]


class Scorer(ABC):
    """Deterministic per-step score vectors over the extended alphabet."""

    @property
    @abstractmethod
    def extended_size(self) -> int:
        """Number of entries per vector: content symbols + 1 for the terminator."""

    @abstractmethod
    def deltas(self, input_tokens: TokenSeq, prefix: tuple[int, ...]) -> np.ndarray:
        """Score vector at this prefix; index extended_size-1 is the terminator."""

    @property
    def end_index(self) -> int:
        return self.extended_size - 1


class TabulatedScorer(Scorer):
    """Explicit (input, prefix) -> vector map; total on its declared domain.

    A table covering a single input uses None as the input key and matches
    any input.  Missing entries raise KeyError rather than inventing values.
    """

    def __init__(self, table: Mapping, extended_size: int):
        self._table = dict(table)
        self._size = int(extended_size)

    @property
    def extended_size(self) -> int:
        return self._size

    def deltas(self, input_tokens, prefix):
        prefix = tuple(int(t) for t in prefix)
        key = (tuple(int(t) for t in input_tokens), prefix) if input_tokens is not None else None
        if key is not None and key in self._table:
            return np.asarray(self._table[key], dtype=np.float64)
        if (None, prefix) in self._table:
            return np.asarray(self._table[(None, prefix)], dtype=np.float64)
        if prefix in self._table:
            return np.asarray(self._table[prefix], dtype=np.float64)
        raise KeyError(f"no table entry for prefix {prefix}")

    @classmethod
    def single_input(cls, prefix_table: Mapping, extended_size: int) -> "TabulatedScorer":
        return cls(dict(prefix_table), extended_size)


class OptimisticScorer(Scorer):
    """The perfect scorer: per-step vectors equal to the oracle targets.

    Holds one ground truth per input (or a single catch-all) and computes
    the target vector at any prefix on demand.
    """

    def __init__(self, gt_by_input: Mapping, extended_size: int):
        self._gt = {k: np.asarray(v, dtype=np.int64) for k, v in gt_by_input.items()}
        self._size = int(extended_size)

    @classmethod
    def for_ground_truth(cls, gt: OutputSequence) -> "OptimisticScorer":
        return cls({None: gt.content_array()}, gt.end_index + 1)

    @classmethod
    def for_dataset(cls, pairs) -> "OptimisticScorer":
        table = {tuple(p.input_tokens): p.ground_truth.content_array() for p in pairs}
        size = pairs[0].ground_truth.end_index + 1
        return cls(table, size)

    @property
    def extended_size(self) -> int:
        return self._size

    def deltas(self, input_tokens, prefix):
        from . import kernels

        key = tuple(int(t) for t in input_tokens) if input_tokens is not None else None
        gt = self._gt.get(key, self._gt.get(None))
        if gt is None:
            raise KeyError(f"no ground truth registered for input {key}")
        row = kernels.prefix_row(np.asarray(prefix, dtype=np.int64), gt)
        return kernels.delta_row(row, gt, self._size - 1)


class NormalizedView(Scorer):
    """Per-step negative log-probabilities of a wrapped scorer.

    Entry c becomes logsumexp(v) - v[c], so the smallest entry is the most
    probable token and summed entries equal score_normalized of the wrapped
    scorer.  Lets the same argmin searches decode probability-trained models.
    """

    def __init__(self, base: Scorer):
        self._base = base

    @property
    def extended_size(self) -> int:
        return self._base.extended_size

    def deltas(self, input_tokens, prefix):
        v = self._base.deltas(input_tokens, prefix)
        m = float(v.max())
        lse = m + np.log(np.exp(v - m).sum())
        return lse - v


@dataclass(frozen=True)
class Hypothesis:
    """A beam entry: the prefix so far and the running sum of its step scores."""

    prefix: OutputSequence
    partial_score: float
    completed: bool


def score_sum(scorer: Scorer, input_tokens: TokenSeq, y: OutputSequence) -> float:
    """Sum of per-step entries along y, terminator step included."""
    if not y.terminated:
        raise UnterminatedError("score_sum needs a terminated sequence")
    total = 0.0
    prefix: tuple[int, ...] = ()
    for tok in y.tokens:
        total += float(scorer.deltas(input_tokens, prefix)[tok])
        if tok != y.end_index:
            prefix = prefix + (tok,)
    return total


def score_normalized(scorer: Scorer, input_tokens: TokenSeq, y: OutputSequence) -> float:
    """Sum of per-step negative log-probabilities along y (softmax over each vector)."""
    return score_sum(NormalizedView(scorer), input_tokens, y)


def greedy_search(scorer: Scorer, input_tokens: TokenSeq, max_len: int) -> OutputSequence:
    """Append the best-scoring token step by step; stop on the terminator.

    After max_len content tokens the terminator is forced, so the result is
    always terminated.
    """
    end = scorer.end_index
    prefix: tuple[int, ...] = ()
    for _ in range(max_len):
        c = int(np.argmin(scorer.deltas(input_tokens, prefix)))
        if c == end:
            return OutputSequence(prefix + (end,), True, end)
        prefix = prefix + (c,)
    return OutputSequence(prefix + (end,), True, end)


def beam_search(
    scorer: Scorer, input_tokens: TokenSeq, beam_width: int, max_len: int
) -> OutputSequence:
    """Breadth-first beam over running score sums.

    Each step ranks every single-token continuation of the active set and
    keeps the best beam_width; continuations that chose the terminator move
    to a completed pool.  The search stops once no active hypothesis scores
    better than the best completed one (step scores may be negative, so this
    is a policy, not a proof of optimality); max_len is the hard backstop,
    at which survivors are closed off with a forced terminator.
    """
    if beam_width < 1:
        raise ConfigError("beam width must be >= 1")
    end = scorer.end_index
    # (prefix tuple, score); list order encodes creation order for tie-breaks
    active: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    completed: list[tuple[float, int, tuple[int, ...]]] = []
    serial = 0

    for _ in range(max_len):
        if not active:
            break
        pool: list[tuple[float, int, tuple[int, ...], int]] = []
        for prefix, score in active:
            v = scorer.deltas(input_tokens, prefix)
            for c in range(scorer.extended_size):
                pool.append((score + float(v[c]), serial, prefix, c))
                serial += 1
        pool = heapq.nsmallest(beam_width, pool)
        active = []
        for s, ser, prefix, c in pool:
            if c == end:
                completed.append((s, ser, prefix))
            else:
                active.append((prefix + (c,), s))
        if completed:
            best = min(completed)[0]
            if all(s >= best for _, s in active):
                active = []
                break

    for prefix, score in active:
        v = scorer.deltas(input_tokens, prefix)
        completed.append((score + float(v[end]), serial, prefix))
        serial += 1

    _, _, best_prefix = min(completed)
    return OutputSequence(best_prefix + (end,), True, end)


def exact_search(
    scorer: Scorer, input_tokens: TokenSeq, max_len: int, budget: int = 1_000_000
) -> OutputSequence:
    """True minimizer of score_sum over every output up to max_len content tokens.

    Walks the prefix tree breadth-first with accumulated partial sums, so
    each prefix is scored once.  Ties go to the earlier sequence in
    length-then-lexicographic order.
    """
    end = scorer.end_index
    n_content = scorer.extended_size - 1
    total = output_space_size(n_content, max_len)
    if total > budget:
        raise BudgetError(f"exact search over {total} sequences exceeds budget {budget}")

    best_score = np.inf
    best_prefix: tuple[int, ...] | None = None
    frontier: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for length in range(max_len + 1):
        nxt: list[tuple[tuple[int, ...], float]] = []
        for prefix, partial in frontier:
            v = scorer.deltas(input_tokens, prefix)
            s = partial + float(v[end])
            if s < best_score:
                best_score = s
                best_prefix = prefix
            if length < max_len:
                for c in range(n_content):
                    nxt.append((prefix + (c,), partial + float(v[c])))
        frontier = nxt

    assert best_prefix is not None
    return OutputSequence(best_prefix + (end,), True, end)


@dataclass(frozen=True)
class DecoderSpec:
    """Which decoder to run and with what parameters.

    max_len None means "derive from the ground truth": twice its content
    length plus five, the decoding cap used throughout training and eval.
    """

    kind: str
    beam_width: int = 1
    max_len: int | None = None

    _KINDS = ("greedy", "beam", "exact")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown decoder {self.kind!r}; expected one of {self._KINDS}")
        if self.beam_width < 1:
            raise ConfigError("beam width must be >= 1")

    @classmethod
    def parse(cls, text: str, max_len: int | None = None) -> "DecoderSpec":
        """Accepts "greedy", "exact", "beam:<B>" (or "beam" for width 10)."""
        text = text.strip()
        if text.startswith("beam"):
            _, _, b = text.partition(":")
            return cls("beam", int(b) if b else 10, max_len)
        return cls(text, 1, max_len)

    def resolve_max_len(self, gt: OutputSequence | None) -> int:
        if self.max_len is not None:
            return self.max_len
        if gt is None:
            raise ConfigError("decoder needs an explicit max_len without a ground truth")
        return 2 * gt.content_length + 5

    def decode(
        self, scorer: Scorer, input_tokens: TokenSeq, gt: OutputSequence | None = None
    ) -> OutputSequence:
        cap = self.resolve_max_len(gt)
        if self.kind == "greedy":
            return greedy_search(scorer, input_tokens, cap)
        if self.kind == "beam":
            return beam_search(scorer, input_tokens, self.beam_width, cap)
        return exact_search(scorer, input_tokens, cap)
