#!/usr/bin/env python3
"""Reference implementation of the score-normalization rule.

Independent of the C++ code: per group, the full score is the nearest-rank
90th percentile of raw scores, values min-max normalize against [min, full]
into [0.01, 0.8], and anything above the full score clamps to 0.8.

Prints the expected outputs for the fixed 20-value sample embedded in
tests/test_dataset.cpp.  Run: python3 normalize_oracle.py
"""
import math

RAW = [0.13, 0.42, 0.87, 0.55, 0.55, 0.91, 0.23, 0.68, 0.05, 0.77,
       0.34, 0.61, 0.49, 0.96, 0.72, 0.18, 0.85, 0.29, 0.52, 0.64]


def normalize(raw):
    ordered = sorted(raw)
    n = len(ordered)
    rank = math.ceil(0.9 * n)  # nearest rank: smallest value covering 90%
    full = ordered[rank - 1]
    lo = ordered[0]
    if full == lo:
        return [0.405] * n
    out = []
    for v in raw:
        t = min((v - lo) / (full - lo), 1.0)
        out.append(0.01 + 0.79 * t)
    return out


if __name__ == "__main__":
    expected = normalize(RAW)
    print("// raw:")
    print(", ".join(repr(v) for v in RAW))
    print("// expected:")
    print(",\n".join(repr(v) for v in expected))
