"""Benchmark the compiled patch kernels against the numpy fallback.

Times im2col/col2im at training shapes and a full UNet train step under each
backend, and verifies both backends agree bitwise.

Run: python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from mtl_lab import kernels
from mtl_lab.kernels import fallback

try:
    from mtl_lab.kernels import _ext as ext
except ImportError:
    ext = None


def timeit(fn, repeats=20):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_patch_kernels():
    shapes = [
        ((8, 24, 8, 16), 3, 1, 1),
        ((16, 32, 16, 32), 3, 1, 1),
        ((16, 64, 8, 16), 3, 1, 1),
        ((16, 32, 16, 32), 3, 2, 1),
    ]
    rng = np.random.default_rng(0)
    print(f"{'shape':<24}{'op':<10}{'fallback ms':>14}{'ext ms':>12}{'speedup':>10}")
    for x_shape, k, stride, pad in shapes:
        x = rng.normal(size=x_shape)
        cols = fallback.im2col(x, k, stride, pad)
        g = rng.normal(size=cols.shape)
        rows = [("im2col", lambda m: m.im2col(x, k, stride, pad))]
        rows.append(("col2im", lambda m: m.col2im(g, x_shape, k, stride, pad)))
        for name, call in rows:
            t_fb = timeit(lambda: call(fallback))
            if ext is not None:
                t_ext = timeit(lambda: call(ext))
                assert np.array_equal(call(fallback), call(ext)), "backends disagree"
                print(
                    f"{str(x_shape):<24}{name:<10}{t_fb * 1e3:>14.3f}{t_ext * 1e3:>12.3f}"
                    f"{t_fb / t_ext:>10.2f}x"
                )
            else:
                print(f"{str(x_shape):<24}{name:<10}{t_fb * 1e3:>14.3f}{'n/a':>12}{'':>10}")


def bench_train_step():
    from mtl_lab.model import DenoiserUNet, UNetConfig, build_token_table, latent_mse
    from mtl_lab.nn import Tensor

    rng = np.random.default_rng(0)
    cfg = UNetConfig(c_lat=12, latent_hw=(8, 16), base_channels=32, channel_mult=(1, 2), heads=4)
    net = DenoiserUNet(cfg, rng)
    table = build_token_table()
    x = rng.normal(size=(8, 24, 8, 16))
    target = rng.normal(size=(8, 12, 8, 16))

    def step():
        net.zero_grad()
        loss = latent_mse(net.forward(Tensor(x), table.token("depth")), target)
        loss.backward()

    backends = [("fallback", fallback)] + ([("ext", ext)] if ext is not None else [])
    print(f"\n{'backend':<12}{'fwd+bwd ms':>14}")
    for name, impl in backends:
        kernels.im2col, kernels.col2im = impl.im2col, impl.col2im
        print(f"{name:<12}{timeit(step, repeats=8) * 1e3:>14.1f}")
    kernels.im2col, kernels.col2im = kernels._impl.im2col, kernels._impl.col2im


if __name__ == "__main__":
    print(f"active backend: {kernels.BACKEND}")
    bench_patch_kernels()
    bench_train_step()
