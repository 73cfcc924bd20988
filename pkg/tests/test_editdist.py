import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tleseq.editdist import (
    DEFAULT_TERMINAL_CLIP,
    OptimisticRow,
    clip_terminal,
    delta_targets,
    edit_distance,
    extend_row,
    optimistic_loss,
    oracle_optimistic_loss,
    sequence_delta_targets,
    task_loss,
)
from tleseq.errors import UnterminatedError
from tleseq.sequences import Alphabet, OutputSequence, enumerate_outputs


def ref_lev(a, b):
    """Full-matrix reference, kept deliberately separate from the package."""
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[m][n]


ABC = Alphabet(("a", "b", "c"))
ABCX = Alphabet(("a", "b", "c", "x"))

tokens = st.lists(st.integers(0, 2), max_size=8)


def seq(text, alphabet=ABC):
    return OutputSequence.complete(alphabet.encode(text), alphabet)


def pre(text, alphabet=ABC):
    return OutputSequence.prefix(alphabet.encode(text), alphabet)


class TestEditDistance:
    def test_identity(self):
        assert edit_distance("abc", "abc") == 0

    def test_pure_insertions(self):
        assert edit_distance("", "abc") == 3

    def test_kitten_sitting(self):
        assert edit_distance("kitten", "sitting") == 3

    @given(tokens, tokens)
    def test_matches_reference(self, a, b):
        assert edit_distance(a, b) == ref_lev(a, b)

    @given(tokens, tokens, tokens)
    def test_metric(self, a, b, c):
        assert edit_distance(a, b) >= 0
        assert (edit_distance(a, b) == 0) == (a == b)
        assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


class TestTaskLoss:
    def test_equal(self):
        assert task_loss(seq("abc"), seq("abc")) == 0

    def test_empty_candidate(self):
        assert task_loss(seq("abc"), seq("")) == 3

    def test_one_substitution(self):
        assert task_loss(seq("abc", ABCX), seq("axc", ABCX)) == 1

    def test_requires_termination(self):
        with pytest.raises(UnterminatedError):
            task_loss(seq("ab"), pre("ab"))
        with pytest.raises(UnterminatedError):
            task_loss(pre("ab"), seq("ab"))


class TestOptimisticLoss:
    # row over gt prefixes is the certificate for these three
    def test_empty_prefix(self):
        assert optimistic_loss(seq("abc"), pre("")) == 0

    def test_gt_prefix(self):
        assert optimistic_loss(seq("abc"), pre("ab")) == 0

    def test_off_by_one(self):
        gt, p = seq("abc", ABCX), pre("ax", ABCX)
        r = OptimisticRow.initial(gt)
        for c in p.content:
            r = extend_row(r, c)
        assert list(r.row) == [2, 1, 1, 2]
        assert optimistic_loss(gt, p) == 1

    def test_terminated_prefix_is_task_loss(self):
        assert optimistic_loss(seq("abc"), seq("ab")) == 1

    @given(tokens, tokens)
    def test_monotone_in_prefix(self, g, p):
        gt = OutputSequence.complete(g, ABC)
        for cut in range(len(p)):
            a = optimistic_loss(gt, OutputSequence.prefix(p[:cut], ABC))
            b = optimistic_loss(gt, OutputSequence.prefix(p[:cut + 1], ABC))
            assert b >= a

    @given(tokens)
    def test_empty_prefix_always_zero(self, g):
        assert optimistic_loss(OutputSequence.complete(g, ABC), pre("")) == 0

    @settings(max_examples=40)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=4),
           st.lists(st.integers(0, 1), max_size=3))
    def test_against_enumeration_oracle(self, g, p):
        a = Alphabet(("a", "b"))
        gt = OutputSequence.complete(g, a)
        prefix = OutputSequence.prefix(p, a)
        assert optimistic_loss(gt, prefix) == oracle_optimistic_loss(
            gt, prefix, max_extra=len(g))


class TestExtendRow:
    def test_first_token_match(self):
        r = extend_row(OptimisticRow.initial(seq("abc")), 0)
        assert list(r.row) == [1, 0, 1, 2]
        assert r.minimum == 0

    def test_first_token_mismatch(self):
        r = extend_row(OptimisticRow.initial(seq("abc")), 1)
        assert list(r.row) == [1, 1, 1, 2]
        assert r.minimum == 1

    def test_repeat_past_gt(self):
        gt = seq("a", Alphabet(("a",)))
        r = extend_row(extend_row(OptimisticRow.initial(gt), 0), 0)
        assert list(r.row) == [2, 1]

    def test_rejects_end_token(self):
        with pytest.raises(ValueError):
            extend_row(OptimisticRow.initial(seq("abc")), ABC.end_index)

    @given(tokens, st.lists(st.integers(0, 2), min_size=1, max_size=6))
    def test_equals_fresh_dp(self, g, p):
        gt = OutputSequence.complete(g, ABC)
        r = OptimisticRow.initial(gt)
        for c in p:
            r = extend_row(r, c)
        expect = [ref_lev(p, g[:k]) for k in range(len(g) + 1)]
        assert list(r.row) == expect
        # |row[k] - row[k-1]| <= 1 along the ground truth axis
        assert all(abs(int(r.row[k]) - int(r.row[k - 1])) <= 1
                   for k in range(1, len(g) + 1))


class TestDeltaTargets:
    def test_empty_prefix_of_abc(self):
        d = delta_targets(seq("abc"), pre(""))
        assert list(d) == [0, 1, 1, 3]

    def test_full_prefix_terminal_zero(self):
        d = delta_targets(seq("abc"), pre("abc"))
        assert d[-1] == 0

    def test_single_symbol_gt(self):
        a = Alphabet(("a", "b"))
        d = delta_targets(OutputSequence.complete([0], a),
                          OutputSequence.prefix([1], a))
        assert list(d) == [0, 1, 0]   # appending a recovers; stopping also costs 0

    @given(tokens, tokens)
    def test_range(self, g, p):
        d = delta_targets(OutputSequence.complete(g, ABC), OutputSequence.prefix(p, ABC))
        assert set(d[:-1]) <= {0.0, 1.0}
        assert d[-1] >= 0
        assert d.min() == 0   # some action is always free under the optimistic loss

    @given(tokens, tokens)
    def test_telescoping(self, g, p):
        """Unclipped deltas along any terminated path sum to the task loss."""
        gt = OutputSequence.complete(g, ABC)
        y = OutputSequence.complete(p, ABC)
        total = sequence_delta_targets(gt, y)
        picks = [total.matrix[j, y.tokens[j]] for j in range(len(y.tokens))]
        assert sum(picks) == task_loss(gt, y)

    @given(tokens)
    def test_zero_along_ground_truth(self, g):
        gt = OutputSequence.complete(g, ABC)
        m = sequence_delta_targets(gt, gt).matrix
        assert sum(m[j, gt.tokens[j]] for j in range(len(gt.tokens))) == 0

    def test_matrix_rows_match_pointwise(self):
        gt, y = seq("abc", ABCX), seq("axb", ABCX)
        m = sequence_delta_targets(gt, y).matrix
        for j in range(m.shape[0]):
            np.testing.assert_array_equal(
                m[j], delta_targets(gt, OutputSequence.prefix(y.content[:j], ABCX)))


class TestClip:
    @pytest.mark.parametrize("value,expect", [(3.0, 3.0), (12.0, 5.0), (0.0, 0.0)])
    def test_terminal_cases(self, value, expect):
        row = np.array([0.0, 1.0, value])
        out = clip_terminal(row, 5.0)
        assert out[-1] == expect
        assert list(out[:-1]) == [0.0, 1.0]

    def test_copies(self):
        row = np.array([0.0, 9.0])
        clip_terminal(row, 5.0)
        assert row[-1] == 9.0

    def test_rejects_nonpositive_clip(self):
        with pytest.raises(ValueError):
            clip_terminal(np.zeros(2), 0.0)

    def test_default_is_five(self):
        assert DEFAULT_TERMINAL_CLIP == 5.0
        assert clip_terminal(np.array([0.0, 8.0]))[-1] == 5.0


class TestContinuationOracle:
    def test_gt_suffix(self):
        a = Alphabet(("a", "b"))
        assert oracle_optimistic_loss(seq("ab", a), pre("a", a), 2) == 0

    def test_swapped(self):
        a = Alphabet(("a", "b"))
        assert oracle_optimistic_loss(seq("ab", a), pre("ba", a), 2) == 1

    def test_no_continuation_allowed(self):
        a = Alphabet(("a", "b"))
        assert oracle_optimistic_loss(seq("ab", a), pre("", a), 0) == 2
