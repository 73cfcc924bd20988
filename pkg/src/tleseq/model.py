"""Recurrent encoder-decoder scorer at desk scale.

The encoder is a gated recurrent cell over input embeddings; its final
state is the context z.  The decoder starts from tanh(affine(z)), consumes
(previous-token embedding, z) each step, and projects its state to one real
per extended-alphabet symbol.  Those projections are the per-step scores:
raw regression outputs in TLE mode, logits for the softmax head in CE mode.

Every forward exists twice: a numpy-only fast path for decoding and
metrics, and a tape-recorded path for training gradients.  The fast path
memoizes encoder outputs and decoder states per (input, prefix), so beam
search pays one cell step per new prefix; `invalidate` must be called after
any parameter update.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .autodiff import ParameterSet, Tape, Tensor, load_checkpoint, save_checkpoint
from .editdist import DEFAULT_TERMINAL_CLIP
from .scoring import Scorer

__all__ = ["ModelConfig", "NeuralScorer", "save_model", "load_model"]

_GATES = ("u", "r", "c")


@dataclass(frozen=True)
class ModelConfig:
    input_size: int
    output_size: int          # content symbols; the scorer emits output_size+1 reals
    embed_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        for field in ("input_size", "output_size", "embed_dim", "hidden_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.input_size, self.output_size, self.embed_dim, self.hidden_dim, self.seed],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a: np.ndarray) -> "ModelConfig":
        vals = [int(v) for v in a]
        return cls(*vals)


class NeuralScorer(Scorer):
    """Scorer backed by the encoder-decoder parameters.

    Output embedding table has output_size+2 rows: content tokens, the
    terminator (present for layout, never fed back), and a learned
    beginning-of-sequence row used at the first decoder step.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParameterSet()
        rng = np.random.default_rng(config.seed)
        E, H, K = config.embed_dim, config.hidden_dim, config.output_size

        def w(name, shape):
            return self.params.add(name, rng.uniform(-0.1, 0.1, shape))

        def b(name, n):
            return self.params.add(name, np.zeros(n))

        # creation order is fixed: it defines what a seed means
        w("enc_emb", (config.input_size, E))
        for g in _GATES:
            w(f"enc_W{g}", (E, H))
            w(f"enc_U{g}", (H, H))
            b(f"enc_b{g}", H)
        w("dec_init_W", (H, H))
        b("dec_init_b", H)
        w("dec_emb", (K + 2, E))
        for g in _GATES:
            w(f"dec_W{g}", (E, H))
            w(f"dec_C{g}", (H, H))
            w(f"dec_U{g}", (H, H))
            b(f"dec_b{g}", H)
        w("proj_W", (H, K + 1))
        b("proj_b", K + 1)

        self._z_cache: dict = {}
        self._state_cache: dict = {}

    # -- Scorer interface ---------------------------------------------------

    @property
    def extended_size(self) -> int:
        return self.config.output_size + 1

    @property
    def bos_index(self) -> int:
        return self.config.output_size + 1

    def invalidate(self) -> None:
        """Drop memoized states; required after any parameter change."""
        self._z_cache.clear()
        self._state_cache.clear()

    def deltas(self, input_tokens, prefix) -> np.ndarray:
        key = tuple(int(t) for t in input_tokens)
        state = self._state(key, tuple(int(t) for t in prefix))
        return self._np_project(state[None, :])[0]

    @staticmethod
    def softmax_head(delta_vector: np.ndarray) -> np.ndarray:
        """Log-probabilities from a score vector: v - logsumexp(v)."""
        v = np.asarray(delta_vector, dtype=np.float64)
        m = v.max(axis=-1, keepdims=True)
        return v - (m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True)))

    # -- numpy fast path ----------------------------------------------------

    def _p(self, name: str) -> np.ndarray:
        return self.params[name].data

    def _np_enc_step(self, e: np.ndarray, h: np.ndarray) -> np.ndarray:
        p = self._p
        u = _sigmoid(e @ p("enc_Wu") + h @ p("enc_Uu") + p("enc_bu"))
        r = _sigmoid(e @ p("enc_Wr") + h @ p("enc_Ur") + p("enc_br"))
        c = np.tanh(e @ p("enc_Wc") + (r * h) @ p("enc_Uc") + p("enc_bc"))
        return u * c + (1.0 - u) * h

    def _np_dec_step(self, e: np.ndarray, z: np.ndarray, h: np.ndarray) -> np.ndarray:
        p = self._p
        u = _sigmoid(e @ p("dec_Wu") + z @ p("dec_Cu") + h @ p("dec_Uu") + p("dec_bu"))
        r = _sigmoid(e @ p("dec_Wr") + z @ p("dec_Cr") + h @ p("dec_Ur") + p("dec_br"))
        c = np.tanh(e @ p("dec_Wc") + z @ p("dec_Cc") + (r * h) @ p("dec_Uc") + p("dec_bc"))
        return u * c + (1.0 - u) * h

    def _np_project(self, h: np.ndarray) -> np.ndarray:
        return h @ self._p("proj_W") + self._p("proj_b")

    def encode(self, input_tokens) -> np.ndarray:
        """Context vector for one input; cached until invalidate()."""
        key = tuple(int(t) for t in input_tokens)
        if not key:
            raise ValueError("cannot encode an empty input")
        z = self._z_cache.get(key)
        if z is None:
            z = self.encode_batch([key])[0]
            self._z_cache[key] = z
        return z

    def encode_batch(self, inputs: list) -> np.ndarray:
        B = len(inputs)
        H = self.config.hidden_dim
        lens = np.array([len(x) for x in inputs])
        if (lens == 0).any():
            raise ValueError("cannot encode an empty input")
        lmax = int(lens.max())
        idx = np.zeros((B, lmax), dtype=np.int64)
        for i, x in enumerate(inputs):
            idx[i, : len(x)] = x
        emb = self._p("enc_emb")
        h = np.zeros((B, H))
        for t in range(lmax):
            hn = self._np_enc_step(emb[idx[:, t]], h)
            alive = (t < lens)[:, None]
            h = np.where(alive, hn, h)
        return h

    def _state(self, key: tuple, prefix: tuple) -> np.ndarray:
        """Decoder state after consuming BOS then the prefix tokens."""
        cache = self._state_cache
        hit = cache.get((key, prefix))
        if hit is not None:
            return hit
        z = self.encode(key)[None, :]
        h = cache.get((key, ()))
        if h is None:
            s0 = np.tanh(z @ self._p("dec_init_W") + self._p("dec_init_b"))
            h = self._np_dec_step(self._p("dec_emb")[self.bos_index][None, :], z, s0)[0]
            cache[(key, ())] = h
        for j in range(1, len(prefix) + 1):
            sub = prefix[:j]
            nxt = cache.get((key, sub))
            if nxt is None:
                e = self._p("dec_emb")[prefix[j - 1]][None, :]
                nxt = self._np_dec_step(e, z, h[None, :])[0]
                cache[(key, sub)] = nxt
            h = nxt
        return h

    def delta_vector(self, z: np.ndarray, state: np.ndarray, prev_token: int | None):
        """One decoder step from an explicit state; returns (new state, scores)."""
        tok = self.bos_index if prev_token is None else int(prev_token)
        e = self._p("dec_emb")[tok][None, :]
        nh = self._np_dec_step(e, z[None, :], state[None, :])[0]
        return nh, self._np_project(nh[None, :])[0]

    def initial_state(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z[None, :] @ self._p("dec_init_W") + self._p("dec_init_b"))[0]

    def greedy_decode_batch(self, inputs: list, caps: list, normalized: bool = False) -> list:
        """Greedy content decodes for a whole batch, one cell step per position.

        caps[i] bounds content length; the terminator is forced there.
        Matches greedy_search token for token (on the NormalizedView when
        normalized is set: smallest negative log-probability is the largest
        raw score, with identical tie-breaking).
        """
        B = len(inputs)
        K = self.config.output_size
        z = self.encode_batch(inputs)
        h = np.tanh(z @ self._p("dec_init_W") + self._p("dec_init_b"))
        fed = np.full(B, self.bos_index, dtype=np.int64)
        alive = np.ones(B, dtype=bool)
        caps_arr = np.asarray(caps, dtype=np.int64)
        outs: list[list[int]] = [[] for _ in range(B)]
        emb = self._p("dec_emb")
        for step in range(int(caps_arr.max()) + 1):
            if not alive.any():
                break
            hn = self._np_dec_step(emb[fed], z, h)
            h = np.where(alive[:, None], hn, h)
            scores = self._np_project(h)
            choice = np.argmax(scores, axis=1) if normalized else np.argmin(scores, axis=1)
            choice = np.where(step >= caps_arr, K, choice)
            for i in np.nonzero(alive)[0]:
                if choice[i] == K:
                    alive[i] = False
                else:
                    outs[i].append(int(choice[i]))
            fed = np.where(alive & (choice != K), choice, self.bos_index)
        return [tuple(o) for o in outs]

    # -- batched objectives (no tape) ---------------------------------------

    def _teacher_rows(self, inputs: list, contents: list):
        """Decoder score rows for forced sequences: (B, Tmax, K+1), plus masks."""
        B = len(inputs)
        K = self.config.output_size
        z = self.encode_batch(inputs)
        steps = np.array([len(c) + 1 for c in contents])
        tmax = int(steps.max())
        fed = np.full((B, tmax), self.bos_index, dtype=np.int64)
        for i, c in enumerate(contents):
            fed[i, 1 : len(c) + 1] = c
        h = np.tanh(z @ self._p("dec_init_W") + self._p("dec_init_b"))
        emb = self._p("dec_emb")
        rows = np.zeros((B, tmax, K + 1))
        for j in range(tmax):
            active = (j < steps)[:, None]
            hn = self._np_dec_step(emb[fed[:, j]], z, h)
            h = np.where(active, hn, h)
            rows[:, j, :] = self._np_project(h)
        mask = np.arange(tmax)[None, :] < steps[:, None]
        return rows, mask, steps

    def ce_objective_batch(self, pairs) -> float:
        """Mean per-sample sum of token negative log-probabilities (teacher forced)."""
        inputs = [p.input_tokens for p in pairs]
        contents = [p.ground_truth.content for p in pairs]
        rows, mask, steps = self._teacher_rows(inputs, contents)
        K = self.config.output_size
        tgt = np.zeros(mask.shape, dtype=np.int64)
        for i, c in enumerate(contents):
            tgt[i, : len(c)] = c
            tgt[i, len(c)] = K
        logp = self.softmax_head(rows)
        picked = np.take_along_axis(logp, tgt[:, :, None], axis=2)[:, :, 0]
        return float(-(picked * mask).sum() / len(pairs))

    def greedy2_objective_batch(self, pairs, clip_value: float = DEFAULT_TERMINAL_CLIP,
                                caps: list | None = None) -> float:
        """Mean per-sample squared regression error along fresh greedy decodes."""
        inputs = [p.input_tokens for p in pairs]
        if caps is None:
            caps = [2 * p.ground_truth.content_length + 5 for p in pairs]
        decodes = self.greedy_decode_batch(inputs, caps)
        K = self.config.output_size
        rows, mask, steps = self._teacher_rows(inputs, decodes)
        total = 0.0
        for i, p in enumerate(pairs):
            t = kernels.delta_matrix(
                p.ground_truth.content_array(),
                np.asarray(decodes[i], dtype=np.int64),
                K,
            )
            t[:, -1] = np.minimum(t[:, -1], clip_value)
            d = rows[i, : steps[i], :]
            total += float(((d - t) ** 2).sum())
        return total / len(pairs)

    # -- tape-recorded paths ------------------------------------------------

    def _tape_encode(self, tape: Tape, inputs: list) -> Tensor:
        B = len(inputs)
        H = self.config.hidden_dim
        lens = np.array([len(x) for x in inputs])
        lmax = int(lens.max())
        idx = np.zeros((B, lmax), dtype=np.int64)
        for i, x in enumerate(inputs):
            idx[i, : len(x)] = x
        p = self.params
        h = Tensor(np.zeros((B, H)))
        for t in range(lmax):
            e = tape.gather_rows(p["enc_emb"], idx[:, t])
            hn = self._tape_gru(tape, h, (
                (e, p["enc_Wu"]), (h, p["enc_Uu"])), (
                (e, p["enc_Wr"]), (h, p["enc_Ur"])), (
                (e, p["enc_Wc"]),), (p["enc_Uc"],),
                p["enc_bu"], p["enc_br"], p["enc_bc"])
            m = Tensor(((t < lens)[:, None]).astype(np.float64))
            h = tape.add(tape.mul(m, hn), tape.mul(Tensor(1.0 - m.data), h))
        return h

    def _tape_gru(self, tape, h, u_terms, r_terms, c_pre_terms, c_rec_w, bu, br, bc):
        def affine(terms, bias):
            acc = None
            for x, w_ in terms:
                part = tape.matmul(x, w_)
                acc = part if acc is None else tape.add(acc, part)
            return tape.add(acc, bias)

        u = tape.sigmoid(affine(u_terms, bu))
        r = tape.sigmoid(affine(r_terms, br))
        gated = tape.mul(r, h)
        cand_pre = affine(tuple(c_pre_terms) + ((gated, c_rec_w[0]),), bc)
        c = tape.tanh(cand_pre)
        keep = tape.sub(Tensor(np.ones(u.data.shape)), u)
        return tape.add(tape.mul(u, c), tape.mul(keep, h))

    def _tape_dec_step(self, tape: Tape, e: Tensor, z: Tensor, h: Tensor) -> Tensor:
        p = self.params
        return self._tape_gru(tape, h, (
            (e, p["dec_Wu"]), (z, p["dec_Cu"]), (h, p["dec_Uu"])), (
            (e, p["dec_Wr"]), (z, p["dec_Cr"]), (h, p["dec_Ur"])), (
            (e, p["dec_Wc"]), (z, p["dec_Cc"])), (p["dec_Uc"],),
            p["dec_bu"], p["dec_br"], p["dec_bc"])

    def _tape_decoder_rows(self, tape: Tape, inputs: list, contents: list):
        """Score rows per step on tape; yields (step, rows Tensor (B,K+1), mask)."""
        B = len(inputs)
        p = self.params
        z = self._tape_encode(tape, inputs)
        s = tape.tanh(tape.add(tape.matmul(z, p["dec_init_W"]), p["dec_init_b"]))
        steps = np.array([len(c) + 1 for c in contents])
        tmax = int(steps.max())
        fed = np.full((B, tmax), self.bos_index, dtype=np.int64)
        for i, c in enumerate(contents):
            fed[i, 1 : len(c) + 1] = c
        out = []
        for j in range(tmax):
            e = tape.gather_rows(p["dec_emb"], fed[:, j])
            sn = self._tape_dec_step(tape, e, z, s)
            active = ((j < steps)[:, None]).astype(np.float64)
            s = tape.add(
                tape.mul(Tensor(active), sn), tape.mul(Tensor(1.0 - active), s)
            )
            rows = tape.add(tape.matmul(s, p["proj_W"]), p["proj_b"])
            out.append((j, rows, (j < steps).astype(np.float64)))
        return out

    def greedy2_loss_on_tape(self, tape: Tape, inputs: list, decodes: list,
                             targets: list) -> Tensor:
        """Mean over the batch of summed squared errors against fixed targets.

        decodes are frozen content tuples (the non-differentiable step);
        targets[i] is the matching (len+1, K+1) matrix, already clipped.
        """
        B = len(inputs)
        tmax = max(len(c) + 1 for c in decodes)
        K = self.config.output_size
        padded = np.zeros((B, tmax, K + 1))
        for i, t in enumerate(targets):
            padded[i, : t.shape[0], :] = t
        total = Tensor(np.zeros(1))
        for j, rows, mask in self._tape_decoder_rows(tape, inputs, decodes):
            diff = tape.sub(rows, Tensor(padded[:, j, :]))
            sq = tape.square(diff)
            masked = tape.mul(Tensor(mask[:, None]), sq)
            total = tape.add(total, tape.sum(masked))
        return tape.scalar_mul(total, 1.0 / B)

    def ce_loss_on_tape(self, tape: Tape, pairs) -> Tensor:
        """Mean over the batch of teacher-forced token cross-entropies."""
        B = len(pairs)
        inputs = [p.input_tokens for p in pairs]
        contents = [p.ground_truth.content for p in pairs]
        K = self.config.output_size
        steps = np.array([len(c) + 1 for c in contents])
        tmax = int(steps.max())
        tgt = np.zeros((B, tmax), dtype=np.int64)
        for i, c in enumerate(contents):
            tgt[i, : len(c)] = c
            tgt[i, len(c)] = K
        total = Tensor(np.zeros(1))
        for j, rows, mask in self._tape_decoder_rows(tape, inputs, contents):
            logp = tape.sub(rows, tape.logsumexp(rows))
            picked = tape.take_columns(logp, tgt[:, j])
            masked = tape.mul(Tensor(mask), picked)
            total = tape.add(total, tape.sum(masked))
        return tape.scalar_mul(total, -1.0 / B)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def save_model(path: str | Path, scorer: NeuralScorer) -> None:
    arrays = {"__config__": scorer.config.as_array()}
    arrays.update(scorer.params.state_dict())
    save_checkpoint(path, arrays)


def load_model(path: str | Path) -> NeuralScorer:
    arrays = load_checkpoint(path)
    if "__config__" not in arrays:
        raise ValueError("checkpoint lacks a config record")
    config = ModelConfig.from_array(arrays.pop("__config__"))
    scorer = NeuralScorer(config)
    scorer.params.load_state(arrays)
    scorer.invalidate()
    return scorer
