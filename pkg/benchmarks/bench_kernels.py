"""Time the interpolation scan with the numba kernels against the numpy fallback.

Each backend runs in its own subprocess because the choice is fixed at import
time through ``MRNN_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py --batch 64 --length 20 --streams 10 --hidden 8
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from mrnn import kernels, model as M
from mrnn._accel import BACKEND
from mrnn.numeric import Rng

B, T, D, H, reps = map(int, sys.argv[1:6])
g = np.random.default_rng(0)
z = np.stack([g.random((B, T, D)), (g.random((B, T, D)) < 0.7).astype(float), g.exponential(1.0, (B, T, D))], -1)
lengths = g.integers(max(1, T // 2), T + 1, B)
P = M.init_params(D, M.MRnnConfig(hidden_size=H), Rng(0))
w = [P[k] for k in M.INTERP_PARAMS]

def fwd():
    return kernels.scan_forward(z, lengths, *w)

xt, hf, hb = fwd()  # warm-up (numba compiles or loads its cache here)
gx = g.normal(size=xt.shape)

def bwd():
    return kernels.scan_backward(gx, z, lengths, xt, hf, hb, *w)

bwd()
out = {"backend": BACKEND}
for name, fn in (("forward", fwd), ("backward", bwd)):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    out[name] = float(np.median(ts))
out["checksum"] = float(fwd()[0].sum())
print(json.dumps(out))
"""


def run(disable: bool, args) -> dict:
    env = dict(os.environ, MRNN_DISABLE_NUMBA="1" if disable else "0")
    dims = [str(v) for v in (args.batch, args.length, args.streams, args.hidden, args.reps)]
    res = subprocess.run([sys.executable, "-c", CHILD, *dims], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--length", type=int, default=20)
    ap.add_argument("--streams", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args(argv)

    numpy_res = run(True, args)
    fast_res = run(False, args)
    print(f"B={args.batch} T={args.length} D={args.streams} H={args.hidden}, median of {args.reps}")
    print(f"{'backend':<8} {'forward ms':>11} {'backward ms':>12}")
    for r in (numpy_res, fast_res):
        print(f"{r['backend']:<8} {1e3 * r['forward']:>11.3f} {1e3 * r['backward']:>12.3f}")
    if fast_res["backend"] == "numba":
        print(f"speed-up  {numpy_res['forward'] / fast_res['forward']:>10.1f}x {numpy_res['backward'] / fast_res['backward']:>11.1f}x")
        print(f"forward checksum diff {abs(numpy_res['checksum'] - fast_res['checksum']):.3g}")
    else:
        print("numba is not installed; only the numpy path was timed")


if __name__ == "__main__":
    main()
