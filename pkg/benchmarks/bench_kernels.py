"""Compare the jitted and pure-numpy edit-distance kernels.

Run as a script:  python3 benchmarks/bench_kernels.py [--repeats 5]

Times the hot kernels on sizes that matter in practice: short toy-task
sequences (the acceptance workload) and longer ones where the DP cost
actually shows.  The numba backend pays a one-off compile on first call,
which is excluded by the warmup pass.
"""

import argparse
import time

import numpy as np

from tleseq.kernels import available_backends, get_backend


def _cases(rng):
    """name -> (callable name, args) factories at two scales."""
    def seqs(n, k=8):
        return rng.integers(0, k, size=n).astype(np.int64)

    short_a, short_b = seqs(10), seqs(12)
    long_a, long_b = seqs(200), seqs(220)
    gt = seqs(10)
    tokens = seqs(14)
    row = np.arange(11, dtype=np.int64)
    cands = rng.integers(0, 8, size=(64, 25)).astype(np.int64)
    lengths = rng.integers(5, 25, size=64).astype(np.int64)

    return [
        ("levenshtein 10x12", "levenshtein", (short_a, short_b), 2000),
        ("levenshtein 200x220", "levenshtein", (long_a, long_b), 20),
        ("prefix_row 14/10", "prefix_row", (tokens, gt), 2000),
        ("delta_row k=8", "delta_row", (row, gt, 8), 2000),
        ("delta_matrix 14x9", "delta_matrix", (gt, tokens, 8), 500),
        ("lev_batch 64x25", "lev_batch", (cands, lengths, gt), 200),
    ]


def _time(fn, args, iters):
    t0 = time.perf_counter()
    for _ in range(iters):
        fn(*args)
    return (time.perf_counter() - t0) / iters


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="take the best of this many timing rounds")
    args = parser.parse_args()

    backends = {name: get_backend(name) for name in available_backends()}
    print(f"backends: {', '.join(backends)}")
    rng = np.random.default_rng(7)
    cases = _cases(rng)

    # warmup: triggers jit compilation and checks agreement while at it
    for _, op, call_args, _ in cases:
        outs = [np.asarray(impl[op](*call_args)) for impl in backends.values()]
        for other in outs[1:]:
            np.testing.assert_array_equal(outs[0], other)

    names = list(backends)
    name_w = max(len(c[0]) for c in cases)
    header = f"{'case'.ljust(name_w)}  " + "".join(f"{b:>12}" for b in names)
    if len(names) == 2:
        header += f"  {names[1]}/{names[0]}"
    print(header)
    for label, op, call_args, iters in cases:
        best = []
        for impl in backends.values():
            best.append(min(_time(impl[op], call_args, iters)
                            for _ in range(args.repeats)))
        line = f"{label.ljust(name_w)}  " + "".join(f"{t * 1e6:>10.1f}us" for t in best)
        if len(best) == 2:
            line += f"{best[1] / best[0]:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
