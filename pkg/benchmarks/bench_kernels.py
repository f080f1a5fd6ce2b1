"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--n 1000000] [--lcs 20000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import random
import timeit
from array import array

from alertpipe import kernels


def workloads(n: int, lcs_n: int, seed: int = 0):
    rng = random.Random(seed)
    ts = array("d")
    t = 0.0
    for _ in range(n):
        t += rng.choice([0.0, 0.5, 1.0, 2.0, 3.0, 60.0])
        ts.append(t)
    keys = array("q", (rng.randrange(50) for _ in range(n)))
    codes = array("q", (rng.randrange(4) for _ in range(n)))
    a = array("q", (rng.randrange(20) for _ in range(lcs_n)))
    b = array("q", (rng.randrange(20) for _ in range(lcs_n)))
    return {
        "gap_starts": lambda f: f["gap_starts"](ts, 2.0),
        "dedupe_keep": lambda f: f["dedupe_keep"](ts, keys, 2.0),
        "segment_starts": lambda f: f["segment_starts"](ts, codes, 600.0),
        "lcs_length": lambda f: f["lcs_length"](a, b),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000, help="alerts for the scan kernels")
    ap.add_argument("--lcs", type=int, default=20_000, help="sequence length for LCS")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the fallback only")
    jobs = workloads(args.n, args.lcs)
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, job in jobs.items():
        times = []
        results = []
        for b in backends:
            f = kernels.backend_functions(b)
            results.append(job(f))
            times.append(min(timeit.repeat(lambda: job(f), number=1, repeat=args.repeat)))
        assert all(r == results[0] for r in results), f"{name}: backends disagree"
        row = f"{name:<16}" + "".join(f"{t:>11.4f}s" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
