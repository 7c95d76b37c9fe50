"""Compare the numba and pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per call and checks that both paths agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from semcom import _kernels
from semcom.channel import LdpcCode, noise_std
from semcom.core import QuantizerCodebook


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_quantizer(repeat: int) -> None:
    rng = np.random.default_rng(0)
    values = rng.uniform(-3, 3, 1_000_000)
    centers = QuantizerCodebook.uniform(16, -2.0, 2.0).array
    _kernels.nearest_center_numba(values[:10], centers)  # compile
    a = _kernels.nearest_center_numpy(values, centers)
    b = _kernels.nearest_center_numba(values, centers)
    assert np.array_equal(a, b), "quantizer paths disagree"
    t_np = best_of(lambda: _kernels.nearest_center_numpy(values, centers), repeat)
    t_nb = best_of(lambda: _kernels.nearest_center_numba(values, centers), repeat)
    print(f"nearest_center  1e6 values : numpy {t_np * 1e3:8.2f} ms   numba {t_nb * 1e3:8.2f} ms   "
          f"speedup {t_np / t_nb:5.2f}x")


def bench_bp(repeat: int, snr_db: float) -> None:
    code = LdpcCode.regular(1024, seed=0)
    rng = np.random.default_rng(1)
    blocks = 20
    sigma = noise_std(1.0, snr_db)
    llrs = [2 * (1 + sigma * rng.standard_normal(code.n)) / sigma**2 for _ in range(blocks)]
    graph = (code._chk_ptr, code._edge_var, code._var_ptr, code._var_edges, code.max_iter)
    _kernels.bp_decode_numba(llrs[0], *graph)  # compile
    for llr in llrs:
        pa, _, oka = _kernels.bp_decode_numpy(llr, *graph)
        pb, _, okb = _kernels.bp_decode_numba(llr, *graph)
        assert oka == okb and np.array_equal(pa < 0, pb < 0), "BP paths disagree"
    t_np = best_of(lambda: [_kernels.bp_decode_numpy(l, *graph) for l in llrs], repeat) / blocks
    t_nb = best_of(lambda: [_kernels.bp_decode_numba(l, *graph) for l in llrs], repeat) / blocks
    print(f"bp_decode n=1024 @ {snr_db:4.1f} dB : numpy {t_np * 1e3:8.2f} ms   numba {t_nb * 1e3:8.2f} ms   "
          f"speedup {t_np / t_nb:5.2f}x  (per block)")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    print(f"numba enabled for library calls: {_kernels.use_numba()}")
    bench_quantizer(args.repeat)
    for snr in (1.0, 4.0):
        bench_bp(args.repeat, snr)


if __name__ == "__main__":
    main()
