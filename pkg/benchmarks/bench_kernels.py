"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from eqnet import _kernels_py

try:
    from eqnet import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    w = rng.normal(size=(64, 576))
    s = np.abs(rng.normal(size=64)) * 0.05 + 0.01
    z = np.zeros(64)
    x = rng.normal(size=(32, 8, 16, 16))
    k = rng.normal(size=(16, 8, 3, 3))
    gy = rng.normal(size=(32, 16, 16, 16))
    return {
        "fake_quant 64x576": lambda m: m.fake_quant_forward(w, s, z, -8, 7),
        "conv2d fwd 32x8x16x16": lambda m: m.conv2d_forward(x, k, 1, 1),
        "conv2d bwd 32x8x16x16": lambda m: m.conv2d_backward(x, k, gy, 1, 1),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    mods = {"numpy": _kernels_py}
    if _kernels is not None:
        mods["cython"] = _kernels
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in mods) + ("   speedup" if len(mods) == 2 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {n: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for n, m in mods.items()}
        row = f"{name:28s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times.values())
        if len(times) == 2:
            row += f"   {times['numpy'] / times['cython']:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
