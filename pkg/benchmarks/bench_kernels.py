#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-Python fallback.

Runs each hot kernel on identical buffers through both implementations,
checks the outputs are bit-identical, and prints a timing table with the
speedup.  An end-to-end section then times one full training epoch per
backend in a subprocess (backend selection happens at import time).

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--skip-end-to-end]
"""

import argparse
import os
import subprocess
import sys
import time
from array import array
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from lnmnet import _kernels_py as py_kernels
from lnmnet.tensor import Rng

try:
    from lnmnet import _kernels as c_kernels
except ImportError:
    c_kernels = None


def _buf(rng: Rng, n: int) -> array:
    out = array("d", bytes(8 * n))
    for i in range(n):
        out[i] = rng.normal()
    return out


def _bench(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def kernel_cases(rng: Rng):
    """(label, kernel_name, build_args) for the hot paths.

    build_args returns a fresh argument tuple; output buffers are created
    per call so the two backends never see each other's results.
    """
    m, k, n = 64, 256, 256
    a = _buf(rng, m * k)
    b = _buf(rng, k * n)
    coeffs = array("d", [0.0, -0.5, 0.1, -0.02])
    u = _buf(rng, 65536)
    bsz, cin, h, w, cout, kh, kw = 4, 3, 16, 16, 8, 3, 3
    oh = ow = 16  # stride 1, pad 1
    img = _buf(rng, bsz * cin * h * w)
    ker = _buf(rng, cout * cin * kh * kw)
    vec_n = 262144
    va = _buf(rng, vec_n)
    vb = _buf(rng, vec_n)

    return [
        (
            f"matmul {m}x{k}x{n}",
            "matmul",
            lambda: (a, b, array("d", bytes(8 * m * n)), m, k, n),
        ),
        (
            f"matmul_ta {k}x{m}x{n}",
            "matmul_ta",
            lambda: (_buf(Rng(5), k * m), b, array("d", bytes(8 * m * n)), m, k, n),
        ),
        (
            "horner_clip_eval 65536 deg3",
            "horner_clip_eval",
            lambda: (coeffs, u, array("d", bytes(8 * 65536)), 65536, 4),
        ),
        (
            "horner_clip_derivative 65536 deg3",
            "horner_clip_derivative",
            lambda: (coeffs, u, array("d", bytes(8 * 65536)), 65536, 4),
        ),
        (
            "conv2d_forward 4x3x16x16 k3",
            "conv2d_forward",
            lambda: (
                img, ker, array("d", bytes(8 * bsz * cout * oh * ow)),
                bsz, cin, h, w, cout, kh, kw, 1, 1, oh, ow,
            ),
        ),
        (
            "ew_mul 262144",
            "ew_mul",
            lambda: (va, vb, array("d", bytes(8 * vec_n)), vec_n),
        ),
        (
            "lnm_theta_grads 65536 deg3",
            "lnm_theta_grads",
            lambda: (va[:65536], u, vb[:65536], array("d", bytes(8 * 4)), 65536, 4),
        ),
    ]


def run_kernel_table(repeats: int) -> None:
    rng = Rng(2024)
    cases = kernel_cases(rng)
    header = f"{'kernel':<36} {'python':>12} {'cython':>12} {'speedup':>9}  match"
    print(header)
    print("-" * len(header))
    for label, name, build in cases:
        py_args = build()
        t_py = _bench(getattr(py_kernels, name), py_args, repeats)
        if c_kernels is None:
            print(f"{label:<36} {t_py * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}  n/a")
            continue
        c_args = build()
        t_c = _bench(getattr(c_kernels, name), c_args, repeats)
        # output buffers sit at a fixed position per kernel: the first
        # array argument that started zeroed; compare every array argument
        # to be safe (inputs are untouched, outputs must agree).
        match = all(
            pa == ca
            for pa, ca in zip(py_args, c_args)
            if isinstance(pa, array)
        )
        print(
            f"{label:<36} {t_py * 1e3:>10.3f}ms {t_c * 1e3:>10.3f}ms "
            f"{t_py / t_c:>8.1f}x  {'yes' if match else 'NO'}"
        )
    if c_kernels is None:
        print("\ncompiled extension not built; showing pure-Python timings only")


END_TO_END_SNIPPET = """
import time
from lnmnet import backend, datasets, network, training
from lnmnet.tensor import Rng, derive_seed

data = datasets.make_synthetic_temporal(
    classes=8, timesteps=6, train_samples=512, val_samples=64, seed=7)
spec = network.NetworkSpec(
    input_shape=(8,), timesteps=6,
    layers=[network.DenseSpec(out_features=64),
            network.SpikingSpec(degree=3),
            network.DenseSpec(out_features=64),
            network.SpikingSpec(degree=3),
            network.DecoderSpec(num_classes=8)])
net = network.build(spec, Rng(derive_seed(7, 1)))
cfg = training.TrainConfig(epochs=2, batch_size=64, lr_weights=0.3, lr_lnm=0.005)
start = time.perf_counter()
training.train(net, data, cfg, Rng(derive_seed(7, 3)))
print(f"{backend.backend_name()}: {time.perf_counter() - start:.2f}s "
      "for 2 epochs (512 samples, 8-64-64-8, T=6, degree 3)")
"""


def run_end_to_end() -> None:
    print("\nend-to-end training (2 epochs, subprocess per backend):")
    for name in ("python", "cython"):
        env = dict(os.environ, LNMNET_BACKEND=name)
        proc = subprocess.run(
            [sys.executable, "-c", END_TO_END_SNIPPET],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{name}: failed ({proc.stderr.strip().splitlines()[-1]})")
        else:
            print("  " + proc.stdout.strip())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per kernel (best-of)")
    parser.add_argument("--skip-end-to-end", action="store_true",
                        help="only run the kernel microbenchmarks")
    args = parser.parse_args()
    run_kernel_table(args.repeats)
    if not args.skip_end_to_end:
        run_end_to_end()


if __name__ == "__main__":
    main()
