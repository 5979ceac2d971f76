"""Time the compiled kernels against the pure-Python ones.

    python benchmarks/compare_backends.py [--sim-ops N]

Prints per-kernel ns/call for both backends, then the wall time of one
discrete-event run under each backend (run in a subprocess so that the
backend choice at import time is honoured).
"""

import argparse
import os
import subprocess
import sys
import timeit

from rfpkv import _pykernels as py

try:
    from rfpkv import _kernels as cy
except ImportError:
    cy = None

KEY = b"k" * 16
VALUE = b"v" * 32
GET_FRAME = py.encode_request(py.OP_GET, KEY, None, 1040)
PUT_FRAME = py.encode_request(py.OP_PUT, KEY, VALUE, 1040)
GET_BODY = py.encode_get_body(py.ST_OK, VALUE)
SLOT = bytearray(py.response_header(len(GET_BODY)) + GET_BODY + bytes(1000))
REQ_BUF = bytearray(PUT_FRAME + bytes(1040 - len(PUT_FRAME)))

CASES = {
    "encode_request(GET)": lambda k: k.encode_request(0, KEY, None, 1040),
    "encode_request(PUT)": lambda k: k.encode_request(1, KEY, VALUE, 1040),
    "parse_request(PUT)": lambda k: k.parse_request(REQ_BUF, 1040),
    "encode_get_body": lambda k: k.encode_get_body(0, VALUE),
    "decode_body(GET)": lambda k: k.decode_body(GET_BODY, True),
    "fetch_size": lambda k: k.fetch_size(SLOT, 1040),
    "hist_bucket": lambda k: k.hist_bucket(6271.5),
}

SIM = (
    "import time; from rfpkv.bench import RunConfig, run; from rfpkv.workload import WorkloadSpec;"
    "t = time.perf_counter(); r = run(RunConfig(duration_ops={ops}, "
    "workload=WorkloadSpec(key_count=100000))); "
    "print(f'{{time.perf_counter() - t:.2f}} {{r.iops:.0f}}')"
)


def per_call_ns(fn, module, number=200_000):
    best = min(timeit.repeat(lambda: fn(module), number=number, repeat=3))
    return best / number * 1e9


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sim-ops", type=int, default=200_000)
    args = ap.parse_args()

    print(f"{'kernel':24s} {'python ns':>10s} {'cython ns':>10s} {'speedup':>8s}")
    for name, fn in CASES.items():
        p = per_call_ns(fn, py)
        if cy is None:
            print(f"{name:24s} {p:10.1f} {'n/a':>10s}")
            continue
        c = per_call_ns(fn, cy)
        print(f"{name:24s} {p:10.1f} {c:10.1f} {p / c:7.2f}x")

    print(f"\ndiscrete-event run, {args.sim_ops} ops (wall s, virtual IOPS)")
    for label, env in (("python", {"RFPKV_PURE": "1"}), ("cython", {})):
        if label == "cython" and cy is None:
            continue
        out = subprocess.run([sys.executable, "-c", SIM.format(ops=args.sim_ops)],
                             env={**os.environ, **env}, capture_output=True, text=True,
                             check=True).stdout.split()
        print(f"  {label:8s} {out[0]:>8s} s   {float(out[1]) / 1e6:.3f} MOPS")


if __name__ == "__main__":
    main()
