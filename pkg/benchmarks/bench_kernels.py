"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow the full-size heads: three 768-dim layers over 16 frames for
layer fusion, 128-dim FFN outputs for attentive statistics pooling.
"""

import argparse
import timeit

import numpy as np

from envtricascade.kernels import _fallback

try:
    from envtricascade.kernels import _core
except ImportError:
    _core = None

CASES = {
    "layer_fuse B=32 L=3 T=16 D=768": lambda rng: (
        "layer_fuse", (rng.standard_normal((32, 3, 16, 768)), rng.standard_normal(768) * 0.05)),
    "layer_fuse B=8 L=3 T=1024 D=128": lambda rng: (
        "layer_fuse", (rng.standard_normal((8, 3, 1024, 128)), rng.standard_normal(128) * 0.05)),
    "attentive_stats B=32 T=16 H=128": lambda rng: (
        "attentive_stats", (rng.standard_normal((32, 16, 128)), rng.standard_normal(128), 0.1)),
    "attentive_stats B=8 T=1024 H=128": lambda rng: (
        "attentive_stats", (rng.standard_normal((8, 1024, 128)), rng.standard_normal(128), 0.1)),
}


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _core is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
    rng = np.random.default_rng(0)
    print(f"{'case':36s} {'numpy ms':>9s} {'compiled ms':>12s} {'speedup':>8s} {'max diff':>9s}")
    for name, make in CASES.items():
        op, inputs = make(rng)
        t_np = best_time(getattr(_fallback, op), inputs, args.repeat) * 1e3
        if _core is None:
            print(f"{name:36s} {t_np:9.3f} {'-':>12s}")
            continue
        t_c = best_time(getattr(_core, op), inputs, args.repeat) * 1e3
        diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
                   for a, b in zip(getattr(_fallback, op)(*inputs), getattr(_core, op)(*inputs)))
        print(f"{name:36s} {t_np:9.3f} {t_c:12.3f} {t_np / t_c:7.2f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
