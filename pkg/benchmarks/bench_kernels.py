"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the GRU scan (forward + backward), max pooling, and one full training
step on the desk architecture with each available backend.
"""
import argparse
import timeit

import numpy as np

from scenesound import model as mdl
from scenesound import training
from scenesound.nn import backend


def gru_case(impl, B=8, T=100, H=16):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((B, T, 3 * H))
    U = 0.3 * rng.standard_normal((3, H, H))
    dh = rng.standard_normal((B, T, H))
    k = backend.get(impl)

    def run():
        out = k.gru_scan_forward(xp, U)
        k.gru_scan_backward(dh, *out, U)

    return run


def pool_case(impl, shape=(8, 16, 64, 100), pf=8, pt=1):
    x = np.random.default_rng(1).standard_normal(shape)
    k = backend.get(impl)

    def run():
        out, idx = k.maxpool_forward(x, pf, pt)
        k.maxpool_backward(out, idx, x.shape, pf, pt)

    return run


def step_case(impl, B=8):
    arch = mdl.DESK
    p = mdl.init_params(arch, 0)
    rng = np.random.default_rng(2)
    X = rng.standard_normal((B, arch.n_mels, arch.n_frames))
    rolls = (rng.random((B, arch.n_events, arch.n_frames)) < 0.2).astype(np.uint8)
    scenes = rng.integers(0, arch.n_scenes, B)

    def run():
        training.loss_and_grads(p, X, rolls, scenes, 0.01, impl=impl)

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=5)
    args = ap.parse_args()
    impls = backend.available()
    print(f"backends: {', '.join(impls)} (default {backend.BACKEND})")
    cases = [("gru scan fwd+bwd  B8 T100 H16", gru_case),
             ("maxpool fwd+bwd   8x16x64x100 /8", pool_case),
             ("train step desk   B8", step_case)]
    print(f"{'case':34s}" + "".join(f"{i:>12s}" for i in impls) + ("     speedup" if len(impls) > 1 else ""))
    for label, make in cases:
        times = []
        for impl in impls:
            t = min(timeit.repeat(make(impl), number=args.number, repeat=args.repeat)) / args.number
            times.append(t)
        row = f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(impls) > 1:
            row += f"{times[impls.index('python')] / times[impls.index('cython')]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
