"""Time each hot kernel under the numba and pure-numpy implementations.

Run with ``python3 benchmarks/bench_kernels.py``. Both implementations are
imported directly, so the UNCTRAJ_DISABLE_NUMBA flag does not matter here.
Outputs are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from unctraj import kernels


def _cases(rng, scale):
    n = 20000 * scale
    mu1, mu2 = rng.normal(size=(2, n, 2))
    b1, b2 = rng.uniform(0.1, 2.0, size=(2, n, 2))

    n_seg = 400 * scale
    lengths = rng.integers(1, 60, size=n_seg)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    values = rng.normal(size=(int(offsets[-1]), 32))
    _, arg = kernels.segment_max_numpy(values, offsets)
    grad_out = rng.normal(size=(n_seg, 32))

    pred = rng.normal(size=(500 * scale, 6, 30, 2))
    gt = rng.normal(size=(500 * scale, 30, 2))

    points = rng.uniform(-30, 30, size=(2000 * scale, 2))
    poly = np.cumsum(rng.normal(size=(50, 2)), axis=0)

    return {
        "laplace_kl": (kernels.laplace_kl_elementwise_numpy, kernels.laplace_kl_elementwise_numba, (mu1, b1, mu2, b2)),
        "segment_max": (kernels.segment_max_numpy, kernels.segment_max_numba, (values, offsets)),
        "segment_max_backward": (
            kernels.segment_max_backward_numpy,
            kernels.segment_max_backward_numba,
            (grad_out, arg, values.shape[0]),
        ),
        "mode_displacements": (kernels.mode_displacements_numpy, kernels.mode_displacements_numba, (pred, gt)),
        "point_polyline_distance": (
            kernels.point_polyline_distance_numpy,
            kernels.point_polyline_distance_numba,
            (points, poly),
        ),
    }


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-12, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1, help="problem-size multiplier")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (np_fn, nb_fn, inputs) in _cases(rng, args.scale).items():
        ref = np_fn(*inputs)
        got = nb_fn(*inputs)  # also triggers compilation outside the timed region
        if not _agree(ref, got):
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: np_fn(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb_fn(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
