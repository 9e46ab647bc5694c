"""Timing comparison between the pure-numpy kernels and the compiled
extension on the two hot paths: local mini-batch training and streaming
window scoring.

Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fedanom.backends import pure

try:
    from fedanom.backends import _fastpath
except ImportError:
    _fastpath = None


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_training(backend, repeats):
    rng = np.random.default_rng(0)
    d, h, n = 5, 16, 1600
    size = h * d + 2 * h + 1
    values = rng.standard_normal(size) * 0.3
    x = rng.standard_normal((n, d))
    y = (rng.random(n) < 0.05).astype(np.float64)
    order = np.stack(
        [np.random.default_rng(e).permutation(n) for e in range(3)]
    ).astype(np.int64)

    def run():
        backend.train_epochs(
            values.copy(), d, h, x, y, 1e-4, 0.02, 32, order
        )

    return time_call(run, repeats)


def bench_scoring(backend, repeats):
    rng = np.random.default_rng(1)
    m, cap = 16, 256
    warm = rng.standard_normal((cap, m))
    stream = rng.standard_normal((400, m))

    def run():
        buf = np.zeros((cap, m))
        s1 = np.zeros(m)
        s2 = np.zeros((m, m))
        head, count = backend.window_feed(buf, s1, s2, 0, 0, warm)
        backend.score_stream(
            buf, s1, s2, head, count, stream, 40.0, 0.35, 1e-9
        )

    return time_call(run, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repetitions; best run is reported")
    args = parser.parse_args()

    backends = [pure] + ([_fastpath] if _fastpath is not None else [])
    if _fastpath is None:
        print("note: compiled extension unavailable, timing pure only")

    results = {}
    for case, fn in (("train", bench_training), ("score", bench_scoring)):
        for backend in backends:
            results[(case, backend.NAME)] = fn(backend, args.repeats)

    print(f"{'case':<8}{'backend':<10}{'best (ms)':>12}{'speedup':>10}")
    for case in ("train", "score"):
        base = results[(case, "pure")]
        for backend in backends:
            t = results[(case, backend.NAME)]
            print(
                f"{case:<8}{backend.NAME:<10}{t * 1e3:>12.3f}"
                f"{base / t:>10.2f}x"
            )


if __name__ == "__main__":
    main()
