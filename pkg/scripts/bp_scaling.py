"""Wall-clock scaling of the at-least-one messages and of full BP on benchmark graphs.

    python3 scripts/bp_scaling.py
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpl.grounding import ground, graph_stats
from dpl.inference import HARD, at_least_one_messages, loopy_bp
from dpl.logic import load_program
from dpl.synth import SynthSpec, generate

ROOT = Path(__file__).resolve().parents[1]


def best_of(fn, repeats=5):
    fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    print("at_least_one_messages, one factor of arity n")
    for n in (10**3, 10**4, 10**5, 10**6):
        incoming = rng.normal(0, 3, size=(n, 2))
        t = best_of(lambda: at_least_one_messages(incoming, HARD))
        print(f"  n={n:>8}  {1000 * t:8.2f} ms  {1e9 * t / n:6.1f} ns/member")

    print("loopy_bp on the benchmark program")
    spec = SynthSpec.load(ROOT / "configs" / "benchmark_spec.json")
    for n in (5000, 20000, 80000):
        ds, schema = generate(replace(spec, n=n))
        g = ground(load_program(ROOT / "configs" / "benchmark.dpl", schema), ds)
        t = best_of(lambda: loopy_bp(g), repeats=3)
        stats = graph_stats(g)
        print(f"  n={n:>6}  factors={stats['factors']:>6}  {1000 * t:8.2f} ms  {1e6 * t / n:6.2f} us/var")


if __name__ == "__main__":
    main()
