"""Compare the numba and numpy kernels on the planted three-routine household.

    python benchmarks/bench_gibbs.py [--sweeps 50] [--repeat 3]

Reports the best-of-N time per Gibbs sweep and per detection pass for each
backend and checks that both backends return identical results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from routine_miner import _kernels, ingest
from routine_miner.corpus import TokenizerConfig, corpus_from_events
from routine_miner.lda import GibbsChain, LdaConfig
from routine_miner.synth import generate_events, generate_sample_arrays, household_scenario


def best_of(repeat: int, fn) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_gibbs(corpus, sweeps: int, repeat: int) -> dict[str, float]:
    config = LdaConfig(K=10, iterations=sweeps + 1, burn_in=0, seed=0)
    results, states = {}, {}
    for backend in _kernels.KERNELS:
        GibbsChain(corpus, config, backend).sweep()  # compile outside the timing

        def run():
            chain = GibbsChain(corpus, config, backend)
            for _ in range(sweeps):
                chain.sweep()
            states[backend] = chain.z.copy()

        results[backend] = best_of(repeat, run) / sweeps
    z = list(states.values())
    assert all(np.array_equal(z[0], other) for other in z[1:]), "backends diverged"
    return results


def bench_windows(times, amps, repeat: int) -> dict[str, float]:
    kernels = {"numba": ingest._windows_loop, "numpy": ingest._windows_numpy}
    out, found = {}, {}
    for name, fn in kernels.items():
        fn(times[:100], amps[:100], 0.1, np.int64(20_000))
        out[name] = best_of(repeat, lambda: found.__setitem__(name, fn(times, amps, 0.1, np.int64(20_000))))
    a, b = found.values()
    assert all(np.array_equal(x, y) for x, y in zip(a, b)), "window kernels diverged"
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sweeps", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    events, _ = generate_events(household_scenario(seed=0))
    corpus = corpus_from_events(events, "bench", TokenizerConfig("Europe/Amsterdam"))
    print(f"corpus: M={corpus.M} V={corpus.V} tokens={corpus.total_tokens}, K=10")
    gibbs = bench_gibbs(corpus, args.sweeps, args.repeat)
    for name, sec in gibbs.items():
        print(f"  gibbs sweep  {name:6s} {sec * 1e3:9.3f} ms")
    print(f"  speedup numba/numpy: {gibbs['numpy'] / gibbs['numba']:.1f}x")

    arrays = generate_sample_arrays(events, seed=0)
    times, accel = arrays["Fridge"]
    amps = ingest.amplitudes(accel)
    print(f"samples: {times.size} for one device")
    windows = bench_windows(times, amps, args.repeat)
    for name, sec in windows.items():
        print(f"  wake windows {name:6s} {sec * 1e3:9.3f} ms")
    print(f"  speedup numba/numpy: {windows['numpy'] / windows['numba']:.1f}x")


if __name__ == "__main__":
    main()
