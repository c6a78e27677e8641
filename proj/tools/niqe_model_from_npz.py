#!/usr/bin/env python3
"""Convert NIQE pristine parameters from an .npz file to the text model format.

Expected arrays: mu_pris_param (36 or 1x36), cov_pris_param (36x36) and
gaussian_window (7x7), as shipped by common open-source NIQE ports.
"""
import argparse
import sys

import numpy as np


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("npz")
    ap.add_argument("out")
    ap.add_argument("--block", type=int, default=96, help="block side in pixels")
    args = ap.parse_args(argv)

    data = np.load(args.npz)
    mu = np.asarray(data["mu_pris_param"], dtype=np.float64).reshape(-1)
    cov = np.asarray(data["cov_pris_param"], dtype=np.float64)
    win = np.asarray(data["gaussian_window"], dtype=np.float64)
    d = mu.size
    if cov.shape != (d, d):
        sys.exit(f"covariance shape {cov.shape} does not match mean length {d}")

    def row(values):
        return " ".join(repr(float(v)) for v in values)

    with open(args.out, "w") as f:
        f.write("blendgan-niqe 1\n")
        f.write(f"block {args.block} {args.block}\n")
        f.write(f"mu {d}\n{row(mu)}\n")
        f.write(f"cov {d} {d}\n")
        for r in cov:
            f.write(row(r) + "\n")
        f.write(f"window {win.shape[0]} {win.shape[1]}\n")
        for r in win:
            f.write(row(r) + "\n")


if __name__ == "__main__":
    main()
