"""Time the compiled kernels against the NumPy fallback.

Run: python benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly so one process can compare them. The
workloads mirror training: LSTM over a padded batch of 32 utterances with
ragged lengths, and the 512-point FFT used by the STFT.
"""

import argparse
import time

import numpy as np

from dsduda import _pykernels
from dsduda.dsp import _twiddles

try:
    from dsduda import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(rng):
    B, T, H = 32, 120, 128
    lengths = np.sort(rng.integers(30, T + 1, size=B))[::-1].copy()
    lengths[0] = T
    xp = rng.normal(size=(B, T, 4 * H))
    w_hh = rng.normal(size=(H, 4 * H)) * 0.1
    dhs = rng.normal(size=(B, T, H))
    frames = rng.normal(size=(200, 512))
    tw_re, tw_im = _twiddles(512)

    def lstm_fwd(k):
        return lambda: k.lstm_forward(xp, w_hh, lengths)

    def lstm_bwd(k):
        hs, cs, gates = k.lstm_forward(xp, w_hh, lengths)
        return lambda: k.lstm_backward(dhs, hs, cs, gates, w_hh, lengths)

    def fft(k):
        def run():
            re = frames.copy()
            im = np.zeros_like(re)
            k.fft_inplace(re, im, tw_re, tw_im)
        return run

    return {"lstm forward (32x120x128)": lstm_fwd,
            "lstm backward (32x120x128)": lstm_bwd,
            "fft 200 frames x 512": fft}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'workload':32s}" + "".join(f"{name:>12s}" for name in backends) + "     speedup")
    for label, make in workloads(rng).items():
        secs = {name: _best(make(k), args.repeat) for name, k in backends.items()}
        row = f"{label:32s}" + "".join(f"{secs[n] * 1e3:10.2f}ms" for n in backends)
        if "cython" in secs:
            row += f"  {secs['python'] / secs['cython']:8.2f}x"
        print(row)


if __name__ == "__main__":
    main()
