"""Edit-distance DP kernels: numba-jitted loops with a pure-numpy fallback.

These inner loops dominate runtime when computing per-token regression
targets during training and when brute-forcing continuation minima in the
verification suite.  The jitted path is the default; set

    TLESEQ_NO_NUMBA=1

to select the vectorized numpy fallback (used automatically when numba is
not importable).  Both backends are exact integer DP and must agree
bit-for-bit; `benchmarks/bench_kernels.py` compares their throughput.

All token sequences are int64 arrays.  A DP "row" for a prefix p against a
reference g is the vector row[k] = levenshtein(p, g[:k]), k = 0..len(g).
Appending one token updates the row in O(len(g)); the numpy fallback
resolves the carry dependency new[k-1] -> new[k] with a prefix-min scan:
new[k] = k + cummin(m - k) where m[k] = min(old[k]+1, old[k-1]+cost).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "levenshtein",
    "prefix_row",
    "extend_row",
    "delta_row",
    "delta_matrix",
    "lev_batch",
    "get_backend",
    "available_backends",
]


# ---------------------------------------------------------------------------
# Loop implementations (plain python, compiled by numba when enabled)
# ---------------------------------------------------------------------------

def _loop_levenshtein(a, b):
    n = a.shape[0]
    m = b.shape[0]
    row = np.arange(m + 1)
    for i in range(n):
        prev = row[0]
        row[0] = i + 1
        for j in range(1, m + 1):
            cur = row[j]
            cost = 0 if a[i] == b[j - 1] else 1
            best = row[j] + 1
            if row[j - 1] + 1 < best:
                best = row[j - 1] + 1
            if prev + cost < best:
                best = prev + cost
            row[j] = best
            prev = cur
    return row[m]


def _loop_extend_row(row, gt, c):
    g = gt.shape[0]
    new = np.empty(g + 1, dtype=np.int64)
    new[0] = row[0] + 1
    for k in range(1, g + 1):
        cost = 0 if gt[k - 1] == c else 1
        best = row[k] + 1
        if row[k - 1] + cost < best:
            best = row[k - 1] + cost
        if new[k - 1] + 1 < best:
            best = new[k - 1] + 1
        new[k] = best
    return new


def _loop_prefix_row(prefix, gt):
    row = np.arange(gt.shape[0] + 1)
    for i in range(prefix.shape[0]):
        row = _loop_extend_row(row, gt, prefix[i])
    return row


def _loop_delta_row(row, gt, n_symbols):
    g = gt.shape[0]
    base = row[0]
    for k in range(1, g + 1):
        if row[k] < base:
            base = row[k]
    out = np.empty(n_symbols + 1, dtype=np.float64)
    for c in range(n_symbols):
        prev = row[0] + 1
        best = prev
        for k in range(1, g + 1):
            cost = 0 if gt[k - 1] == c else 1
            v = row[k] + 1
            if row[k - 1] + cost < v:
                v = row[k - 1] + cost
            if prev + 1 < v:
                v = prev + 1
            prev = v
            if v < best:
                best = v
        out[c] = best - base
    out[n_symbols] = row[g] - base
    return out


def _loop_delta_matrix(gt, tokens, n_symbols):
    g = gt.shape[0]
    t = tokens.shape[0]
    out = np.empty((t + 1, n_symbols + 1), dtype=np.float64)
    row = np.arange(g + 1)
    for j in range(t + 1):
        out[j] = _loop_delta_row(row, gt, n_symbols)
        if j < t:
            row = _loop_extend_row(row, gt, tokens[j])
    return out


def _loop_lev_batch(cands, lengths, gt):
    n = cands.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _loop_levenshtein(cands[i, : lengths[i]], gt)
    return out


# ---------------------------------------------------------------------------
# Vectorized numpy fallback
# ---------------------------------------------------------------------------

def _numpy_extend_row(row, gt, c):
    g = gt.shape[0]
    m = np.empty(g + 1, dtype=np.int64)
    m[0] = row[0] + 1
    if g:
        m[1:] = np.minimum(row[1:] + 1, row[:-1] + (gt != c))
    k = np.arange(g + 1)
    return k + np.minimum.accumulate(m - k)


def _numpy_prefix_row(prefix, gt):
    row = np.arange(gt.shape[0] + 1)
    for c in prefix:
        row = _numpy_extend_row(row, gt, c)
    return row


def _numpy_levenshtein(a, b):
    return int(_numpy_prefix_row(a, b)[-1])


def _numpy_delta_row(row, gt, n_symbols):
    g = gt.shape[0]
    base = int(row.min())
    syms = np.arange(n_symbols)[:, None]
    m = np.empty((n_symbols, g + 1), dtype=np.int64)
    m[:, 0] = row[0] + 1
    if g:
        m[:, 1:] = np.minimum(row[1:] + 1, row[:-1] + (gt[None, :] != syms))
    k = np.arange(g + 1)
    new_rows = k + np.minimum.accumulate(m - k, axis=1)
    out = np.empty(n_symbols + 1, dtype=np.float64)
    out[:n_symbols] = new_rows.min(axis=1) - base
    out[n_symbols] = row[g] - base
    return out


def _numpy_delta_matrix(gt, tokens, n_symbols):
    t = tokens.shape[0]
    out = np.empty((t + 1, n_symbols + 1), dtype=np.float64)
    row = np.arange(gt.shape[0] + 1)
    for j in range(t + 1):
        out[j] = _numpy_delta_row(row, gt, n_symbols)
        if j < t:
            row = _numpy_extend_row(row, gt, tokens[j])
    return out


def _numpy_lev_batch(cands, lengths, gt):
    # One DP over the whole batch: rows[i] tracks candidate i against gt,
    # frozen once position t passes lengths[i].
    n, width = cands.shape
    g = gt.shape[0]
    rows = np.tile(np.arange(g + 1), (n, 1))
    k = np.arange(g + 1)
    for t in range(width):
        active = t < lengths
        if not active.any():
            break
        m = np.empty_like(rows)
        m[:, 0] = rows[:, 0] + 1
        if g:
            cost = (cands[:, t, None] != gt[None, :]).astype(np.int64)
            m[:, 1:] = np.minimum(rows[:, 1:] + 1, rows[:, :-1] + cost)
        new = k + np.minimum.accumulate(m - k, axis=1)
        rows = np.where(active[:, None], new, rows)
    return rows[:, g].copy()


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

_NUMPY_IMPL = {
    "levenshtein": _numpy_levenshtein,
    "prefix_row": _numpy_prefix_row,
    "extend_row": _numpy_extend_row,
    "delta_row": _numpy_delta_row,
    "delta_matrix": _numpy_delta_matrix,
    "lev_batch": _numpy_lev_batch,
}

_NUMBA_IMPL = None


def _build_numba_impl():
    global _NUMBA_IMPL
    if _NUMBA_IMPL is not None:
        return _NUMBA_IMPL
    from numba import njit

    jit = njit(cache=True)
    lev = jit(_loop_levenshtein)
    ext = jit(_loop_extend_row)

    @jit
    def prefix_row(prefix, gt):
        row = np.arange(gt.shape[0] + 1)
        for i in range(prefix.shape[0]):
            row = ext(row, gt, prefix[i])
        return row

    delta = jit(_loop_delta_row)

    @jit
    def delta_matrix(gt, tokens, n_symbols):
        g = gt.shape[0]
        t = tokens.shape[0]
        out = np.empty((t + 1, n_symbols + 1), dtype=np.float64)
        row = np.arange(g + 1)
        for j in range(t + 1):
            out[j] = delta(row, gt, n_symbols)
            if j < t:
                row = ext(row, gt, tokens[j])
        return out

    @jit
    def lev_batch(cands, lengths, gt):
        n = cands.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            out[i] = lev(cands[i, : lengths[i]], gt)
        return out

    _NUMBA_IMPL = {
        "levenshtein": lev,
        "prefix_row": prefix_row,
        "extend_row": ext,
        "delta_row": delta,
        "delta_matrix": delta_matrix,
        "lev_batch": lev_batch,
    }
    return _NUMBA_IMPL


def _numba_requested() -> bool:
    if os.environ.get("TLESEQ_NO_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def available_backends() -> tuple[str, ...]:
    try:
        import numba  # noqa: F401
    except ImportError:
        return ("numpy",)
    return ("numba", "numpy")


def get_backend(name: str) -> dict:
    """Return the kernel table for an explicit backend (for benchmarks/tests)."""
    if name == "numpy":
        return dict(_NUMPY_IMPL)
    if name == "numba":
        return dict(_build_numba_impl())
    raise ValueError(f"unknown backend {name!r}")


if _numba_requested():
    BACKEND = "numba"
    _active = _build_numba_impl()
else:
    BACKEND = "numpy"
    _active = _NUMPY_IMPL

levenshtein = _active["levenshtein"]
prefix_row = _active["prefix_row"]
extend_row = _active["extend_row"]
delta_row = _active["delta_row"]
delta_matrix = _active["delta_matrix"]
lev_batch = _active["lev_batch"]
