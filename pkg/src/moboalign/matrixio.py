"""Matrix dumps: CSV with a dimension header, and 8-bit binary PGM images.

CSV layout: the first line holds the dimensions ``rows,cols``; each following
line is one matrix row with values written by ``repr`` (round-trip exact).

PGM layout: binary ``P5``, width = columns, height = rows, maxval 255; values
are min-max scaled to 0..255 (a constant matrix maps to all zeros).
"""

from __future__ import annotations

import numpy as np


def write_csv(matrix, path) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m.shape[0]},{m.shape[1]}\n")
        for row in m:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows, cols = (int(x) for x in fh.readline().split(","))
        data = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    m = np.array(data, dtype=np.float64).reshape(rows, cols)
    return m


def to_gray(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(matrix, path) -> None:
    img = to_gray(np.atleast_2d(matrix))
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = raw.split(maxsplit=4)
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(fields[4][:width * height], dtype=np.uint8).reshape(height, width)
