"""Compare the numba kernels against the pure-numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Shapes follow the default
experiment: a pool of about 1000 items, hidden size 64, sketches of 32
dimensions by 64 levels and 50 table records.
"""

import argparse
import timeit

import numpy as np

from alcurve import kernels


def _lstm_inputs(rng, n, H, Dh):
    P = rng.normal(size=(n, 4 * H))
    wa = rng.uniform(-0.1, 0.1, 4 * H)
    Wh = rng.uniform(-0.1, 0.1, (4 * H, H))
    U1 = rng.uniform(-0.1, 0.1, (Dh, H))
    c1 = np.zeros(Dh)
    u2 = rng.uniform(-0.1, 0.1, Dh)
    return P, wa, Wh, U1, c1, u2, 0.0


def _time(fn, repeat):
    fn()  # compile / warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pool", type=int, default=975)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--decoder", type=int, default=32)
    ap.add_argument("--records", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    fwd_in = _lstm_inputs(rng, args.pool, args.hidden, args.decoder)
    acts, cs, hs, us, _, scores = kernels.lstm_scan_forward_numpy(*fwd_in)
    P, wa, Wh, U1, c1, u2, c2 = fwd_in
    bwd_in = (rng.normal(size=args.pool), acts, cs, hs, us, scores, wa, Wh, U1, u2)
    stack = rng.normal(size=(args.records, 32, 64))

    cases = [
        ("lstm forward", kernels.lstm_scan_forward_numpy, kernels.lstm_scan_forward_numba,
         fwd_in),
        ("lstm backward", kernels.lstm_scan_backward_numpy, kernels.lstm_scan_backward_numba,
         bwd_in),
        ("w1 query vs table", kernels.w1_to_many_numpy, kernels.w1_to_many_numba,
         (stack[0], stack)),
        ("w1 pairwise", kernels.w1_pairwise_numpy, kernels.w1_pairwise_numba, (stack,)),
    ]
    print(f"{'kernel':<20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, f_np, f_nb, inputs in cases:
        t_np = _time(lambda: f_np(*inputs), args.repeat)
        t_nb = _time(lambda: f_nb(*inputs), args.repeat)
        a, b = f_np(*inputs), f_nb(*inputs)
        if not isinstance(a, tuple):
            a, b = (a,), (b,)
        diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))
        print(f"{name:<20s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
