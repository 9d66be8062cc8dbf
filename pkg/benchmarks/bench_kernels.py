"""Compare the compiled and numpy im2col/col2im kernels, and time GAM forward.

    python benchmarks/bench_kernels.py --repeat 20
"""

import argparse
import time

import numpy as np

from rganet.engine import Tensor, kernels
from rganet.gam import GAM

SHAPES = [
    # (N, C, H, W, k, stride, pad): 3x3 convs seen at the default scales
    (1, 120, 60, 80, 3, 1, 1),
    (1, 8, 240, 320, 3, 1, 1),
    (1, 3, 480, 640, 3, 2, 1),
    (4, 64, 24, 32, 3, 1, 1),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeat, dtype):
    impls = [("python", kernels.python_impl)]
    if kernels.compiled_impl is not None:
        impls.append(("cython", kernels.compiled_impl))
    rng = np.random.default_rng(0)
    print(f"{'shape':<26} {'op':<7} " + " ".join(f"{n:>10}" for n, _ in impls) + "   speedup")
    for N, C, H, W, k, s, p in SHAPES:
        x = rng.standard_normal((N, C, H, W)).astype(dtype)
        cols = kernels.python_impl.im2col(x, k, k, s, p)
        row = {}
        for name, impl in impls:
            row[("im2col", name)] = best_of(lambda: impl.im2col(x, k, k, s, p), repeat)
            row[("col2im", name)] = best_of(lambda: impl.col2im(cols, x.shape, k, k, s, p), repeat)
        for op in ("im2col", "col2im"):
            cells = " ".join(f"{row[(op, n)] * 1e3:>8.2f}ms" for n, _ in impls)
            speed = row[(op, "python")] / row[(op, "cython")] if len(impls) == 2 else float("nan")
            print(f"{f'{N}x{C}x{H}x{W} k{k}s{s}':<26} {op:<7} {cells}   {speed:6.2f}x")


def bench_gam(repeat):
    rng = np.random.default_rng(0)
    print(f"\nGAM forward (eval mode, float32, backend={kernels.BACKEND})")
    for c, h, w in [(60, 240, 320), (60, 120, 160), (375, 15, 20), (3, 480, 640)]:
        g = GAM(c, h, w, rng=rng)
        g.eval()
        x = Tensor(rng.standard_normal((1, c, h, w)).astype(np.float32))
        t = best_of(lambda: g(x), repeat)
        print(f"  c={c:<4} h={h:<4} w={w:<4} {t * 1e3:9.2f} ms")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--skip-gam", action="store_true")
    args = p.parse_args(argv)
    bench_kernels(args.repeat, np.dtype(args.dtype))
    if not args.skip_gam:
        bench_gam(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
