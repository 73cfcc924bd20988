"""Surrogate losses and risks, computable on any scorer.

Naming scheme for the per-token family: min_min variants compare scores on
ground truth and a supplied decode; ed_ variants regress per-step entries
onto the oracle targets from editdist.  The greedy family decodes with
greedy search internally and differs in which tokens enter the sum:
ed_greedy takes the chosen token plus the oracle-best one, ed_greedy1 takes
every token with absolute differences, ed_greedy2 squares them (and clips
the terminator target, which is what the training loop optimizes).

All of these are reference implementations: clear, per-sample, unbatched.
The training loop has its own batched path and is tested against these.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .editdist import DEFAULT_TERMINAL_CLIP, task_loss
from .errors import UnterminatedError
from .scoring import DecoderSpec, Scorer, greedy_search, score_normalized, score_sum
from .sequences import Alphabet, OutputSequence, SamplePair, enumerate_outputs

__all__ = [
    "empirical_risk",
    "RiskReport",
    "risk_report",
    "loss_ce_global",
    "loss_ce_factorized",
    "loss_hinge",
    "loss_min_min",
    "margin_term",
    "loss_ed_min_min",
    "loss_ed_greedy",
    "loss_ed_greedy1",
    "loss_ed_greedy2",
    "SURROGATES",
]


def _oracle_targets(gt: OutputSequence, prefix: tuple[int, ...], clip_value) -> np.ndarray:
    row = kernels.prefix_row(np.asarray(prefix, dtype=np.int64), gt.content_array())
    t = kernels.delta_row(row, gt.content_array(), gt.end_index)
    if clip_value is not None:
        t[-1] = min(t[-1], clip_value)
    return t


def _walk(y: OutputSequence):
    """Yield (prefix, token) for each step of a terminated sequence."""
    if not y.terminated:
        raise UnterminatedError("per-step walk needs a terminated sequence")
    prefix: tuple[int, ...] = ()
    for tok in y.tokens:
        yield prefix, int(tok)
        if tok != y.end_index:
            prefix = prefix + (int(tok),)


def empirical_risk(scorer: Scorer, dataset: Sequence[SamplePair], decoder: DecoderSpec) -> float:
    """Average task loss of the decoder's predictions over the dataset."""
    total = 0
    for pair in dataset:
        pred = decoder.decode(scorer, pair.input_tokens, pair.ground_truth)
        total += task_loss(pair.ground_truth, pred)
    return total / len(dataset)


def loss_ce_global(scorer: Scorer, input_tokens, gt: OutputSequence, max_len: int,
                   budget: int = 1_000_000) -> float:
    """Score of the ground truth minus the log-partition over all outputs.

    Treats summed scores as unnormalized negative log-probabilities over the
    whole (enumerable) output space.
    """
    alphabet = Alphabet.of_size(gt.end_index)
    scores = np.array(
        [score_sum(scorer, input_tokens, y)
         for y in enumerate_outputs(alphabet, max_len, budget=budget)]
    )
    m = scores.max()
    lse = m + np.log(np.exp(scores - m).sum())
    return score_sum(scorer, input_tokens, gt) - lse


def loss_ce_factorized(scorer: Scorer, input_tokens, gt: OutputSequence) -> float:
    """Per-step cross-entropy: negative log-softmax of each ground-truth token."""
    return score_normalized(scorer, input_tokens, gt)


def loss_hinge(scorer: Scorer, input_tokens, gt: OutputSequence, max_len: int,
               budget: int = 1_000_000) -> float:
    """Structured hinge: worst margin violation over the enumerated output space."""
    alphabet = Alphabet.of_size(gt.end_index)
    f_gt = score_sum(scorer, input_tokens, gt)
    worst = -np.inf
    for y in enumerate_outputs(alphabet, max_len, budget=budget):
        v = f_gt - score_sum(scorer, input_tokens, y) + task_loss(gt, y)
        if v > worst:
            worst = v
    return max(0.0, worst)


def loss_min_min(scorer: Scorer, input_tokens, gt: OutputSequence,
                 yhat: OutputSequence) -> float:
    """|F(gt)| + |task_loss(gt, yhat) - F(yhat)| with F the summed score."""
    f_gt = score_sum(scorer, input_tokens, gt)
    f_hat = score_sum(scorer, input_tokens, yhat)
    return abs(f_gt) + abs(task_loss(gt, yhat) - f_hat)


def margin_term(scorer: Scorer, input_tokens, gt: OutputSequence,
                yhat: OutputSequence) -> float:
    """How far the decode's score overshoots the ground truth's: max(F(yhat)-F(gt), 0)."""
    f_gt = score_sum(scorer, input_tokens, gt)
    f_hat = score_sum(scorer, input_tokens, yhat)
    return max(f_hat - f_gt, 0.0)


def loss_ed_min_min(scorer: Scorer, input_tokens, gt: OutputSequence,
                    yhat: OutputSequence, clip_value: float | None = None) -> float:
    """Per-token upper bound on the min-min loss.

    Sums |chosen-entry minus oracle target| along the ground truth and along
    the supplied decode.  Targets are unclipped unless clip_value is given.
    """
    total = 0.0
    for seq in (gt, yhat):
        for prefix, tok in _walk(seq):
            t = _oracle_targets(gt, prefix, clip_value)
            d = scorer.deltas(input_tokens, prefix)
            total += abs(float(d[tok]) - float(t[tok]))
    return total


def loss_ed_greedy(scorer: Scorer, input_tokens, gt: OutputSequence,
                   max_len: int | None = None, clip_value: float | None = None) -> float:
    """Per-step bound along the greedy decode.

    Each step pays the regression error on the token actually chosen plus
    the absolute score of the oracle-best token (whose target is zero).
    """
    cap = 2 * gt.content_length + 5 if max_len is None else max_len
    yhat = greedy_search(scorer, input_tokens, cap)
    total = 0.0
    for prefix, tok in _walk(yhat):
        t = _oracle_targets(gt, prefix, clip_value)
        d = scorer.deltas(input_tokens, prefix)
        c_min = int(np.argmin(t))
        total += abs(float(d[tok]) - float(t[tok])) + abs(float(d[c_min]))
    return total


def loss_ed_greedy1(scorer: Scorer, input_tokens, gt: OutputSequence,
                    max_len: int | None = None, clip_value: float | None = None) -> float:
    """Like loss_ed_greedy but summing regression errors over every token."""
    cap = 2 * gt.content_length + 5 if max_len is None else max_len
    yhat = greedy_search(scorer, input_tokens, cap)
    total = 0.0
    for prefix, _ in _walk(yhat):
        t = _oracle_targets(gt, prefix, clip_value)
        d = scorer.deltas(input_tokens, prefix)
        total += float(np.abs(d - t).sum())
    return total


def loss_ed_greedy2(scorer: Scorer, input_tokens, gt: OutputSequence,
                    max_len: int | None = None,
                    clip_value: float | None = DEFAULT_TERMINAL_CLIP) -> float:
    """Squared-error variant of loss_ed_greedy1; this is the trained objective.

    The terminator target is clipped by default, matching the training loop.
    """
    cap = 2 * gt.content_length + 5 if max_len is None else max_len
    yhat = greedy_search(scorer, input_tokens, cap)
    total = 0.0
    for prefix, _ in _walk(yhat):
        t = _oracle_targets(gt, prefix, clip_value)
        d = scorer.deltas(input_tokens, prefix)
        total += float(((d - t) ** 2).sum())
    return total


SURROGATES = ("min_min", "ed_min_min", "ed_greedy", "ed_greedy1", "ed_greedy2", "ce")


@dataclass(frozen=True)
class RiskReport:
    """Dataset-level summary: task-loss risk, surrogate risk, margin, per-sample rows."""

    empirical_risk: float
    surrogate_risk: float
    margin_term: float
    per_sample: tuple[tuple[float, float, float], ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "empirical_risk": self.empirical_risk,
                "surrogate_risk": self.surrogate_risk,
                "margin_term": self.margin_term,
                "per_sample": [
                    {"task_loss": a, "surrogate": b, "margin": c} for a, b, c in self.per_sample
                ],
            },
            indent=2,
        )


def risk_report(
    scorer: Scorer,
    dataset: Sequence[SamplePair],
    decoder: DecoderSpec,
    surrogate: str = "ed_greedy",
    clip_value: float | None = None,
) -> RiskReport:
    """Decode every sample once and aggregate task loss, surrogate, and margin."""
    if surrogate not in SURROGATES:
        raise ValueError(f"unknown surrogate {surrogate!r}; expected one of {SURROGATES}")
    rows = []
    for pair in dataset:
        gt = pair.ground_truth
        x = pair.input_tokens
        yhat = decoder.decode(scorer, x, gt)
        tl = float(task_loss(gt, yhat))
        cap = decoder.resolve_max_len(gt)
        if surrogate == "min_min":
            s = loss_min_min(scorer, x, gt, yhat)
        elif surrogate == "ed_min_min":
            s = loss_ed_min_min(scorer, x, gt, yhat, clip_value)
        elif surrogate == "ed_greedy":
            s = loss_ed_greedy(scorer, x, gt, cap, clip_value)
        elif surrogate == "ed_greedy1":
            s = loss_ed_greedy1(scorer, x, gt, cap, clip_value)
        elif surrogate == "ed_greedy2":
            s = loss_ed_greedy2(scorer, x, gt, cap)
        else:
            s = loss_ce_factorized(scorer, x, gt)
        rows.append((tl, float(s), margin_term(scorer, x, gt, yhat)))
    n = len(rows)
    return RiskReport(
        empirical_risk=sum(r[0] for r in rows) / n,
        surrogate_risk=sum(r[1] for r in rows) / n,
        margin_term=sum(r[2] for r in rows) / n,
        per_sample=tuple(rows),
    )
