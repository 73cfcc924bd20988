"""Randomized executable checks of the bound inequalities.

Each verifier draws many small instances (tiny alphabet, short ground
truth, a full score table over every prefix up to a depth cap) and measures
how far each claimed inequality is from being violated.  Violations are
signed: bound-dominated-quantity minus bound, so anything above tolerance
is a counterexample, reproducible from (seed, trial index) alone.

Generated tables terminate by construction: at the depth cap the
terminator entry is set strictly below the content entries.  Decoders
therefore always stop by choosing the terminator as the argmin, never by
the forced cap, which is the regime the per-step bound speaks about.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .editdist import optimistic_loss, oracle_optimistic_loss, task_loss
from .losses import (
    loss_ed_greedy,
    loss_ed_greedy1,
    loss_ed_min_min,
    loss_min_min,
    margin_term,
)
from .scoring import TabulatedScorer, beam_search, exact_search, greedy_search, score_sum
from .sequences import Alphabet, OutputSequence

__all__ = [
    "InstanceGenerator",
    "VerifyInstance",
    "ViolationReport",
    "verify_min_min_bound",
    "verify_greedy_bound",
    "verify_orderings",
    "verify_delta_oracle",
    "run_all_verifiers",
]


@lru_cache(maxsize=64)
def _prefixes(n_symbols: int, depth: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for length in range(depth + 1):
        out.extend(itertools.product(range(n_symbols), repeat=length))
    return tuple(out)


@dataclass(frozen=True)
class VerifyInstance:
    trial: int
    alphabet: Alphabet
    gt: OutputSequence
    scorer: TabulatedScorer
    max_len: int


@dataclass(frozen=True)
class InstanceGenerator:
    """Reproducible stream of (ground truth, total score table) instances.

    Tables cover every prefix up to max_len = |gt| + extra_len.  The
    "uniform" distribution draws entries from [-2, 6]; negatives are
    deliberate, exercising the margin clamp and the beam stopping rule.
    "perturbed" adds centered noise to the oracle targets instead.
    """

    seed: int = 0
    min_symbols: int = 2
    max_symbols: int = 4
    min_gt_len: int = 1
    max_gt_len: int = 5
    extra_len: int = 1
    distribution: str = "uniform"
    noise_scale: float = 0.5

    def __post_init__(self):
        if self.distribution not in ("uniform", "perturbed"):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    def rng(self, trial: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, trial])

    def instance(self, trial: int) -> VerifyInstance:
        rng = self.rng(trial)
        k = int(rng.integers(self.min_symbols, self.max_symbols + 1))
        glen = int(rng.integers(self.min_gt_len, self.max_gt_len + 1))
        alphabet = Alphabet.of_size(k)
        gt = OutputSequence.complete([int(v) for v in rng.integers(0, k, glen)], alphabet)
        depth = glen + self.extra_len
        prefixes = _prefixes(k, depth)
        if self.distribution == "uniform":
            rows = rng.uniform(-2.0, 6.0, (len(prefixes), k + 1))
        else:
            rows = np.empty((len(prefixes), k + 1))
            g = gt.content_array()
            for i, p in enumerate(prefixes):
                row = kernels.prefix_row(np.asarray(p, dtype=np.int64), g)
                rows[i] = kernels.delta_row(row, g, k)
            rows += rng.normal(0.0, self.noise_scale, rows.shape)
        # natural termination at the depth cap: terminator strictly wins there
        margins = rng.uniform(0.1, 1.0, len(prefixes))
        for i, p in enumerate(prefixes):
            if len(p) == depth:
                rows[i, -1] = rows[i, :-1].min() - margins[i]
        scorer = TabulatedScorer(dict(zip(prefixes, rows)), k + 1)
        return VerifyInstance(trial, alphabet, gt, scorer, depth)


@dataclass(frozen=True)
class ViolationReport:
    """Per-inequality worst violation over a batch of trials.

    violations maps check name to the largest signed violation seen
    (negative means the inequality held with room); worst_trial records
    where it happened.
    """

    trials: int
    seed: int
    violations: dict
    worst_trial: dict

    def max_violation(self) -> float:
        return max(self.violations.values())

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_violation() <= tol

    def to_json(self) -> str:
        return json.dumps(
            {
                "trials": self.trials,
                "seed": self.seed,
                "checks": {
                    name: {"violation": self.violations[name],
                           "worst_trial": self.worst_trial[name]}
                    for name in sorted(self.violations)
                },
            },
            indent=2,
        )

    def table(self) -> str:
        width = max(len(n) for n in self.violations)
        lines = [f"{'check'.ljust(width)}  {'violation':>13}  trial"]
        for name in sorted(self.violations):
            lines.append(
                f"{name.ljust(width)}  {self.violations[name]:>13.3e}  "
                f"{self.worst_trial[name]}"
            )
        return "\n".join(lines)


class _Tracker:
    def __init__(self, *names):
        self.v = {n: -np.inf for n in names}
        self.t = {n: -1 for n in names}

    def see(self, name, violation, trial):
        if violation > self.v[name]:
            self.v[name] = float(violation)
            self.t[name] = trial

    def report(self, trials, seed) -> ViolationReport:
        return ViolationReport(trials, seed, dict(self.v), dict(self.t))


def _oracle_row(gt: OutputSequence, prefix) -> np.ndarray:
    g = gt.content_array()
    row = kernels.prefix_row(np.asarray(prefix, dtype=np.int64), g)
    return kernels.delta_row(row, g, gt.end_index)


def verify_min_min_bound(gen: InstanceGenerator, trials: int) -> ViolationReport:
    """Task loss of any decode is covered by score error terms plus the margin.

    For each instance and each decoder (greedy, beam of 4, exact):
    L(gt, yhat) <= |F(gt)| + |L(gt, yhat) - F(yhat)| + max(F(yhat) - F(gt), 0).
    Also checks that the exact decoder's margin term is exactly zero.
    """
    tr = _Tracker("bound_greedy", "bound_beam4", "bound_exact", "margin_zero_under_exact")
    for i in range(trials):
        inst = gen.instance(i)
        sc, gt, cap = inst.scorer, inst.gt, inst.max_len
        f_gt = score_sum(sc, None, gt)
        decodes = {
            "bound_greedy": greedy_search(sc, None, cap),
            "bound_beam4": beam_search(sc, None, 4, cap),
            "bound_exact": exact_search(sc, None, cap),
        }
        for name, yhat in decodes.items():
            l = task_loss(gt, yhat)
            f_hat = score_sum(sc, None, yhat)
            bound = abs(f_gt) + abs(l - f_hat) + max(f_hat - f_gt, 0.0)
            tr.see(name, l - bound, i)
        tr.see("margin_zero_under_exact",
               abs(margin_term(sc, None, gt, decodes["bound_exact"])), i)
    return tr.report(trials, gen.seed)


def verify_greedy_bound(gen: InstanceGenerator, trials: int) -> ViolationReport:
    """The greedy decode's task loss is covered by the per-step surrogate.

    Checks, with unclipped targets: the instance-level inequality
    L(gt, greedy) <= loss_ed_greedy, the per-step inequality
    delta_o(chosen) <= |delta(chosen) - delta_o(chosen)| + |delta(best)|,
    and that per-step targets telescope exactly to the task loss.
    """
    tr = _Tracker("greedy_risk_bound", "per_step_bound", "telescoping_exact")
    for i in range(trials):
        inst = gen.instance(i)
        sc, gt, cap = inst.scorer, inst.gt, inst.max_len
        yhat = greedy_search(sc, None, cap)
        l = task_loss(gt, yhat)
        surrogate = loss_ed_greedy(sc, None, gt, cap, clip_value=None)
        tr.see("greedy_risk_bound", l - surrogate, i)

        prefix: tuple[int, ...] = ()
        total_delta = 0.0
        for tok in yhat.tokens:
            t = _oracle_row(gt, prefix)
            d = sc.deltas(None, prefix)
            c_min = int(np.argmin(t))
            step_bound = abs(float(d[tok]) - float(t[tok])) + abs(float(d[c_min]))
            tr.see("per_step_bound", float(t[tok]) - step_bound, i)
            total_delta += float(t[tok])
            if tok != gt.end_index:
                prefix = prefix + (tok,)
        tr.see("telescoping_exact", abs(total_delta - l), i)
    return tr.report(trials, gen.seed)


def verify_orderings(gen: InstanceGenerator, trials: int) -> ViolationReport:
    """Looseness ordering between the surrogate variants.

    With yhat = greedy decode: loss_min_min <= loss_ed_min_min holds for
    every scorer (triangle inequality through the targets).  The second
    check, loss_ed_greedy <= loss_ed_greedy1, is a distributional claim,
    not an identity: when the greedy choice coincides with the oracle-best
    token its score enters the two-term sum twice, so a scorer that is
    nearly oracle everywhere else can order the other way.  The uniform
    table distribution keeps that regime improbable; a found counterexample
    is reported like any other violation.
    """
    tr = _Tracker("min_min_vs_ed", "greedy_vs_greedy1")
    for i in range(trials):
        inst = gen.instance(i)
        sc, gt, cap = inst.scorer, inst.gt, inst.max_len
        yhat = greedy_search(sc, None, cap)
        lo = loss_min_min(sc, None, gt, yhat)
        hi = loss_ed_min_min(sc, None, gt, yhat, clip_value=None)
        tr.see("min_min_vs_ed", lo - hi, i)
        g = loss_ed_greedy(sc, None, gt, cap, clip_value=None)
        g1 = loss_ed_greedy1(sc, None, gt, cap, clip_value=None)
        tr.see("greedy_vs_greedy1", g - g1, i)
    return tr.report(trials, gen.seed)


def verify_delta_oracle(gen: InstanceGenerator, trials: int) -> ViolationReport:
    """The incremental targets agree with brute-force continuation search.

    Per trial: optimistic_loss equals the enumeration minimum on a random
    (gt, prefix); content targets lie in {0, 1}; the terminator target is
    nonnegative; and targets along a random terminated sequence sum exactly
    to its task loss.
    """
    tr = _Tracker("matches_enumeration", "content_delta_range",
                  "terminal_nonneg", "telescoping_exact")
    for i in range(trials):
        rng = gen.rng(i)
        k = int(rng.integers(gen.min_symbols, gen.max_symbols + 1))
        glen = int(rng.integers(gen.min_gt_len, gen.max_gt_len + 1))
        alphabet = Alphabet.of_size(k)
        gt = OutputSequence.complete([int(v) for v in rng.integers(0, k, glen)], alphabet)
        plen = int(rng.integers(0, glen + gen.extra_len + 1))
        prefix = OutputSequence.prefix([int(v) for v in rng.integers(0, k, plen)], alphabet)

        fast = optimistic_loss(gt, prefix)
        slow = oracle_optimistic_loss(gt, prefix, glen)
        tr.see("matches_enumeration", abs(fast - slow), i)

        t = _oracle_row(gt, prefix.content)
        content = t[:-1]
        off_set = np.minimum(np.abs(content), np.abs(content - 1.0))
        tr.see("content_delta_range", float(off_set.max()), i)
        tr.see("terminal_nonneg", float(-t[-1]), i)

        ylen = int(rng.integers(0, glen + gen.extra_len + 1))
        y = OutputSequence.complete([int(v) for v in rng.integers(0, k, ylen)], alphabet)
        total = 0.0
        walk: tuple[int, ...] = ()
        for tok in y.tokens:
            total += float(_oracle_row(gt, walk)[tok])
            if tok != y.end_index:
                walk = walk + (tok,)
        tr.see("telescoping_exact", abs(total - task_loss(gt, y)), i)
    return tr.report(trials, gen.seed)


def run_all_verifiers(gen: InstanceGenerator, trials: int) -> dict[str, ViolationReport]:
    return {
        "min_min_bound": verify_min_min_bound(gen, trials),
        "greedy_bound": verify_greedy_bound(gen, trials),
        "orderings": verify_orderings(gen, trials),
        "delta_oracle": verify_delta_oracle(gen, trials),
    }
