"""Compiled against pure-Python simulation kernel.

    python benchmarks/bench_sim.py [--n 800] [--slots 2000] [--p-tx 0.1]

Both kernels run the same configuration and seed; the script checks that
their counters agree and reports nanoseconds per station-slot.
"""
import argparse
import time

import numpy as np

from hidden_csma import _pykernel

try:
    from hidden_csma import _ckernel
except ImportError:  # extension not built
    _ckernel = None


def timed(kernel, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = kernel.run_kernel(*args, n_batches=4)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--L", type=int, default=32)
    ap.add_argument("--R", type=int, default=16)
    ap.add_argument("--p-tx", type=float, default=0.1)
    ap.add_argument("--warmup", type=int, default=200)
    ap.add_argument("--slots", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()
    args = (a.n, a.L, a.R, a.p_tx, a.warmup, a.slots, a.seed)
    work = a.n * (a.warmup + a.slots)
    t_py, out_py = timed(_pykernel, args, 1)
    print(f"python  {t_py:8.3f} s  {1e9 * t_py / work:10.1f} ns/station-slot")
    if _ckernel is None:
        print("cython  not built")
        return
    t_c, out_c = timed(_ckernel, args, a.repeat)
    print(f"cython  {t_c:8.3f} s  {1e9 * t_c / work:10.1f} ns/station-slot")
    same = all(np.array_equal(out_py[k], out_c[k]) for k in out_py)
    print(f"speedup {t_py / t_c:8.1f}x  counters identical: {same}")


if __name__ == "__main__":
    main()
