"""Edit-distance task loss and its per-token decomposition.

The quantity driving everything here is the optimistic loss of a prefix p
against a ground truth g: the smallest edit distance achievable by any
completion of p.  It equals min_k lev(p, g[:k]), the minimum of one DP row,
so appending a token updates it in O(|g|).  The per-token target for a
candidate token c is the change of that minimum; for the end token it is
the gap between stopping now and the best possible completion.

Known ranges (proved by the row update being 1-Lipschitz and monotone):
content-token targets are 0 or 1, the end-token target is >= 0.  Targets
along any terminated sequence telescope to its task loss, and along the
ground truth itself they sum to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import BudgetError, UnterminatedError
from .sequences import Alphabet, OutputSequence, enumerate_outputs

DEFAULT_TERMINAL_CLIP = 5.0

__all__ = [
    "DEFAULT_TERMINAL_CLIP",
    "edit_distance",
    "task_loss",
    "optimistic_loss",
    "OptimisticRow",
    "extend_row",
    "delta_targets",
    "DeltaTargets",
    "sequence_delta_targets",
    "clip_terminal",
    "oracle_optimistic_loss",
]


def _as_tokens(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.int64, copy=False)
    if isinstance(x, str):
        return np.array([ord(ch) for ch in x], dtype=np.int64)
    return np.array([int(t) for t in x], dtype=np.int64)


def edit_distance(a: str | Sequence[int] | np.ndarray, b: str | Sequence[int] | np.ndarray) -> int:
    """Levenshtein distance (unit-cost insert/delete/substitute)."""
    return int(kernels.levenshtein(_as_tokens(a), _as_tokens(b)))


def task_loss(gt: OutputSequence, y: OutputSequence) -> int:
    """Edit distance between content tokens; both sequences must be terminated."""
    if not gt.terminated or not y.terminated:
        raise UnterminatedError("task loss is defined on terminated sequences")
    return edit_distance(gt.content_array(), y.content_array())


@dataclass(frozen=True, eq=False)
class OptimisticRow:
    """DP row for one prefix against a fixed ground truth.

    row[k] = lev(prefix, gt[:k]); its minimum is the optimistic loss of the
    prefix.  Immutable: extending returns a fresh instance.  end_index < 0
    means "unknown alphabet", skipping the terminator check on extend.
    """

    gt: np.ndarray
    row: np.ndarray
    prefix_len: int
    end_index: int = -1

    @classmethod
    def initial(cls, gt: OutputSequence | np.ndarray) -> "OptimisticRow":
        if isinstance(gt, OutputSequence):
            g = gt.content_array()
            end = gt.end_index
        else:
            g = _as_tokens(gt)
            end = -1
        return cls(g, np.arange(g.shape[0] + 1), 0, end)

    def extend(self, token: int) -> "OptimisticRow":
        return extend_row(self, token)

    @property
    def minimum(self) -> int:
        return int(self.row.min())

    @property
    def full_distance(self) -> int:
        """Distance of the prefix to the whole ground truth (the last cell)."""
        return int(self.row[-1])


def extend_row(r: OptimisticRow, token: int) -> OptimisticRow:
    """Row for prefix+token.  The token must be a content symbol."""
    token = int(token)
    if token < 0 or token == r.end_index:
        raise ValueError("rows extend by content tokens only, never the terminator")
    return OptimisticRow(r.gt, kernels.extend_row(r.row, r.gt, token), r.prefix_len + 1, r.end_index)


def optimistic_loss(gt: OutputSequence, prefix: OutputSequence) -> int:
    """Best task loss achievable by any completion of the prefix.

    Terminated input has no completions left, so this reduces to the task
    loss itself.
    """
    if prefix.terminated:
        return task_loss(gt, prefix)
    row = kernels.prefix_row(prefix.content_array(), gt.content_array())
    return int(row.min())


def delta_targets(gt: OutputSequence, prefix: OutputSequence) -> np.ndarray:
    """Unclipped per-token targets at one prefix, over the extended alphabet.

    Entry c < K: change of the optimistic loss when appending content token
    c.  Entry K: cost of terminating now, relative to the best completion.
    """
    if prefix.terminated:
        raise UnterminatedError("targets are defined at prefixes, not closed sequences")
    row = kernels.prefix_row(prefix.content_array(), gt.content_array())
    return kernels.delta_row(row, gt.content_array(), gt.end_index)


@dataclass(frozen=True, eq=False)
class DeltaTargets:
    """Targets at every prefix position along one terminated sequence.

    matrix[j] holds the unclipped target vector at the prefix of the first j
    tokens; there are content_length+1 rows, the last being the step that
    emits the terminator.
    """

    matrix: np.ndarray

    @property
    def positions(self) -> int:
        return self.matrix.shape[0]

    @property
    def terminal_unclipped(self) -> float:
        return float(self.matrix[-1, -1])

    def clipped(self, clip_value: float = DEFAULT_TERMINAL_CLIP) -> np.ndarray:
        return clip_terminal(self.matrix, clip_value)


def sequence_delta_targets(gt: OutputSequence, y: OutputSequence) -> DeltaTargets:
    if not y.terminated:
        raise UnterminatedError("need a terminated sequence to walk its prefixes")
    mat = kernels.delta_matrix(gt.content_array(), y.content_array(), gt.end_index)
    return DeltaTargets(mat)


def clip_terminal(targets: np.ndarray, clip_value: float = DEFAULT_TERMINAL_CLIP) -> np.ndarray:
    """Cap the end-token entry (last column) at clip_value; copy, not in place."""
    if clip_value <= 0:
        raise ValueError("clip_value must be positive")
    out = np.array(targets, dtype=np.float64, copy=True)
    out[..., -1] = np.minimum(out[..., -1], clip_value)
    return out


def oracle_optimistic_loss(
    gt: OutputSequence,
    prefix: OutputSequence,
    max_extra: int,
    budget: int = 1_000_000,
) -> int:
    """Brute-force check value: try every continuation of bounded length.

    Enumerates all completions with at most max_extra additional content
    tokens and returns the best task loss.  With max_extra >= |gt| this
    matches optimistic_loss, since an optimal completion never needs more
    tokens than the ground truth has left.
    """
    alphabet = Alphabet.of_size(gt.end_index)
    p = prefix.content
    best: int | None = None
    for cont in enumerate_outputs(alphabet, max_extra, budget=budget):
        cand = OutputSequence.complete(p + cont.content, alphabet)
        d = task_loss(gt, cand)
        if best is None or d < best:
            best = d
    if best is None:
        raise BudgetError("empty continuation enumeration")
    return best
