#!/usr/bin/env python3
# Copyright 2026 The dnvoc Authors
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""Wideband PESQ for the dnvoc adapter.

    pesq_wb.py REF.f64 DEG.f64 SAMPLE_RATE

Inputs are raw little-endian float64 mono signals. Prints MOS-LQO.
Requires `pip install pesq`.
"""
import sys

import numpy as np
from pesq import pesq


def main():
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    ref = np.fromfile(sys.argv[1], dtype="<f8")
    deg = np.fromfile(sys.argv[2], dtype="<f8")
    rate = int(sys.argv[3])
    if rate != 16000:
        sys.exit("pesq_wb: wideband mode needs 16 kHz input")
    print(f"{pesq(rate, ref, deg, 'wb'):.6f}")


if __name__ == "__main__":
    main()
