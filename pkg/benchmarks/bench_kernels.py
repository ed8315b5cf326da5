"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 128] [--repeat 5]

Shapes follow the first two conv blocks of the default network.  Results
of both backends are also checked for bitwise equality.
"""

import argparse
import time

import numpy as np

from mdlab.nn import _pykernels, kernels
from mdlab.nn.model import CnnConfig, build_model

try:
    from mdlab.nn import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled kernels are not built; reinstall with Cython available")

    rng = np.random.default_rng(0)
    x4 = rng.standard_normal((args.batch, 121, 61, 4), dtype=np.float32)
    x16 = rng.standard_normal((args.batch, 121, 61, 16), dtype=np.float32)
    dcols = rng.standard_normal((args.batch, 60, 30, 9 * 16), dtype=np.float32)
    pooled, idx = _pykernels.maxpool2x2(x16)
    dpool = rng.standard_normal(pooled.shape, dtype=np.float32)

    cases = [
        ("im2col3x3 (C=4)", lambda m: m.im2col3x3(x4)),
        ("col2im3x3 (C=16)", lambda m: m.col2im3x3(dcols, 16)),
        ("maxpool2x2 (C=16)", lambda m: m.maxpool2x2(x16)),
        ("maxpool2x2_backward", lambda m: m.maxpool2x2_backward(dpool, idx, 121, 61)),
    ]
    print(f"{'kernel':<22}{'numpy s':>10}{'cython s':>10}{'speedup':>9}  identical")
    for name, call in cases:
        ref, fast = call(_pykernels), call(_ckernels)
        same = all(np.array_equal(a, b) for a, b in
                   zip(ref if isinstance(ref, tuple) else (ref,),
                       fast if isinstance(fast, tuple) else (fast,)))
        t_py = _best(lambda: call(_pykernels), args.repeat)
        t_c = _best(lambda: call(_ckernels), args.repeat)
        print(f"{name:<22}{t_py:>10.4f}{t_c:>10.4f}{t_py / t_c:>8.1f}x  {same}")

    # one full forward/backward step of the default n=4 network
    model = build_model(CnnConfig.for_channels(4), init_seed=0)
    z = rng.uniform(-1, 1, size=(args.batch, 7)).astype(np.float32)
    step = {}
    for label, impl in (("numpy", _pykernels), ("cython", _ckernels)):
        kernels._impl = impl
        step[label] = _best(lambda: model.loss_and_grad(x4, z, rng=np.random.default_rng(0)),
                            args.repeat)
    kernels._impl = _ckernels
    print(f"{'train step (n=4)':<22}{step['numpy']:>10.4f}{step['cython']:>10.4f}"
          f"{step['numpy'] / step['cython']:>8.1f}x")


if __name__ == "__main__":
    main()
