"""Time the compiled and pure-Python pixel kernels on phantom-like inputs.

    python benchmarks/bench_kernels.py [--size 64] [--repeats 20]

Also checks that both backends return identical results on every input.
"""

import argparse
import timeit

import numpy as np

from mgan import _kernels
from mgan.phantom import PhantomConfig, simulate_slice


def workload(size, n=16):
    cfg = PhantomConfig(image_size=size)
    slices = [simulate_slice(cfg, f"b{i:02d}", 0) for i in range(n)]
    rng = np.random.default_rng(0)
    masks = [(rng.random((size, size)) < 0.3).astype(np.uint8) for _ in range(n)]
    return slices, masks, cfg.hot_spot_floor


def run_kernels(k, slices, masks, floor):
    out = []
    for s, m in zip(slices, masks):
        pet = s.noise_free_pet
        seeds = k.local_maxima(pet, floor)
        r, c = np.nonzero(seeds)
        grown = k.grow_from_seeds(pet, r, c, 0.4 * pet[r, c])
        la, na = k.label8(m)
        lb, nb = k.label8(grown)
        out.append((seeds, grown, la, k.overlap_counts(la, na, lb, nb)))
    return out


def same(x, y):
    return all(all(np.array_equal(a, b) for a, b in zip(p, q)) for p, q in zip(x, y))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    slices, masks, floor = workload(args.size)
    impls = _kernels.backends()
    results = {name: run_kernels(k, slices, masks, floor) for name, k in impls.items()}
    if "cython" in results and not same(results["cython"], results["python"]):
        raise SystemExit("backends disagree")
    print(f"{len(slices)} slices of {args.size}x{args.size}, {args.repeats} repeats")
    times = {}
    for name, k in impls.items():
        t = timeit.timeit(lambda: run_kernels(k, slices, masks, floor), number=args.repeats)
        times[name] = t / args.repeats
        print(f"{name:>8}: {1e3 * times[name]:9.2f} ms per pass")
    if "cython" in times:
        print(f"speed-up: {times['python'] / times['cython']:.1f}x")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
