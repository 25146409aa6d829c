"""Benchmark the compiled implicit-solver kernel against the scipy fallback.

Run:  python benchmarks/bench_kernels.py

Times one full forward simulation (assembly + factorisation + 40
backward-Euler steps over the benchmark schedule) for the grids used by
the desk-scale and full benchmarks, plus a per-chain MCMC throughput
estimate. Both backends produce bit-identical states, which is asserted
before timing.
"""

import time

import numpy as np

from dsinv.kernels import available_backends


def make_problem(nx, ny, seed=0):
    rng = np.random.default_rng(seed)
    n = nx * ny
    dx = dy = 1000.0 / nx
    mu = 5.0e-4
    k = np.exp(rng.normal(-31.0, 0.75, (ny, nx)))
    tx = (2 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])) * (dy / dx) / mu
    ty = (2 * k[:-1] * k[1:] / (k[:-1] + k[1:])) * (dx / dy) / mu
    dt = 4 * 86_400.0
    accum = 2.9e-8 * 0.3 * dx * dy / dt
    sources = np.zeros((4, n))
    wells = [n // 2 + j for j in range(-4, 5)]
    for seg in range(4):
        rate = [50.0, 50.0, 0.0, 25.0][seg] / 86_400.0
        for w in wells:
            sources[seg, w] -= rate
    steps = np.full(4, 10, dtype=np.int64)
    p_init = np.full(n, 2.0e7)
    return (nx, ny, np.ascontiguousarray(tx), np.ascontiguousarray(ty),
            accum, sources, steps, p_init)


def main():
    backends = available_backends()
    print(f"available backends: {', '.join(sorted(backends))}")
    if len(backends) < 2:
        print("compiled kernel not built; timing the fallback only")

    for nx in (25, 50, 80):
        args = make_problem(nx, nx)
        outputs = {name: impl(*args) for name, impl in backends.items()}
        if len(outputs) == 2 and not np.array_equal(outputs["python"], outputs["compiled"]):
            raise AssertionError("backends disagree")

        print(f"\ngrid {nx}x{nx} ({nx * nx} cells, 40 implicit steps per simulation)")
        timings = {}
        for name, impl in sorted(backends.items()):
            reps = 200 if nx <= 50 else 50
            start = time.perf_counter()
            for _ in range(reps):
                impl(*args)
            per_sim = (time.perf_counter() - start) / reps
            timings[name] = per_sim
            print(f"  {name:9s} {per_sim * 1e3:8.3f} ms/simulation "
                  f"({1.0 / per_sim:7.1f} sims/s)")
        if len(timings) == 2:
            speedup = timings["python"] / timings["compiled"]
            print(f"  speedup   {speedup:8.2f}x")
            iters = 200_000
            print(f"  est. 4x50k-iteration MCMC: compiled "
                  f"{timings['compiled'] * iters / 60:5.1f} min, python "
                  f"{timings['python'] * iters / 60:5.1f} min")


if __name__ == "__main__":
    main()
