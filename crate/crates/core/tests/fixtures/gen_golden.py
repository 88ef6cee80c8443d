"""Regenerates the saliency golden fixtures with an independent NumPy oracle.

Writes golden_w.spkt / golden_x.spkt and prints the expected per-channel
scores; the checked-in CSVs were produced by the CLI and compared to these
values before being committed.
"""
import struct
import sys

import numpy as np


def write_spkt(path, a):
    a = np.asarray(a, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"SPKT" + struct.pack("<IBBxx", 1, 0, 2) + struct.pack("<QQ", *a.shape) + a.tobytes())


def scores(w, x, damping=0.01):
    xt = x.T.astype(np.float64)
    w = w.astype(np.float64)
    act = np.abs(xt * (w.T @ (w @ xt))).mean(axis=1)
    h = 2.0 * xt @ xt.T
    h += damping * np.mean(np.diag(h)) * np.eye(h.shape[0])
    d = np.diag(np.linalg.inv(h))
    wgt = np.abs(w**2 / d**2).mean(axis=0)
    return act, wgt


def rank(s):
    return sorted(range(len(s)), key=lambda c: (-s[c], c))


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "."
    rng = np.random.default_rng(2024)
    x = rng.normal(size=(16, 6)).astype(np.float32)
    x[:, 4] *= 8.0
    w = (rng.normal(size=(4, 6)) * 0.5).astype(np.float32)
    write_spkt(f"{out}/golden_x.spkt", x)
    write_spkt(f"{out}/golden_w.spkt", w)
    for name, s in zip(("activation", "weight"), scores(w, x)):
        print(name, repr(list(s)), rank(s))
