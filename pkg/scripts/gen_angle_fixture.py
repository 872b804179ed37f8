#!/usr/bin/env python3
"""Regenerate the bundled orientation-calibration fixture (data/angle_ref.pgm).

The shape is an arm-like blob: a tapered bar with a round pivot lobe at one
end. It is deliberately anisotropic (clear principal axis) and asymmetric
(nonzero skew along that axis) so the 180-degree disambiguation is exercised.
Rendered with 4x4 supersampling for smooth, binarization-stable edges.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from stageverify.angle import GrayGrid, write_pgm  # noqa: E402


def render_arm(size: int = 96, ss: int = 4) -> GrayGrid:
    c = (size - 1) / 2.0
    n = size * ss
    coords = (np.arange(n) + 0.5) / ss - 0.5
    xs, ys = np.meshgrid(coords - c, coords - c)
    bar = (xs >= -30) & (xs <= 24) & (np.abs(ys) <= 6 * (1 - 0.35 * (xs + 30) / 54))
    lobe = (xs + 26) ** 2 + ys**2 <= 13**2
    shape = bar | lobe
    return GrayGrid(shape.reshape(size, ss, size, ss).mean(axis=(1, 3)))


def main() -> None:
    out = os.path.join(os.path.dirname(__file__), "..", "src", "stageverify", "data", "angle_ref.pgm")
    write_pgm(render_arm(), os.path.normpath(out))
    print(f"wrote {os.path.normpath(out)}")


if __name__ == "__main__":
    main()
