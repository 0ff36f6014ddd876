"""Tour of the lattice geometry layer: codebooks, rates, nearest points.

Run:  python3 demos/lattice_geometry.py
"""

import numpy as np

from olala.lattice import (
    GEN_A2,
    GEN_D2,
    GEN_HEXAGONAL,
    GEN_IDENTITY_2D,
    build_lattice,
    nearest_point,
    rate_of,
)
from olala.learning import normalize_generator

print("== Truncated codebooks at radius 1.0 ==")
for name, gen in (
    ("identity", GEN_IDENTITY_2D),
    ("hexagonal", GEN_HEXAGONAL),
    ("D2", GEN_D2),
    ("A2", GEN_A2),
):
    lat = build_lattice(gen, 1.0)
    print(f"{name:10s} codewords={lat.size:3d}  rate={rate_of(lat):.3f} bits/sample")

print("\n== Normalizing to a codeword budget (radius fixed at 1) ==")
for rate in (2.0, 2.5, 3.0):
    gen = normalize_generator(GEN_HEXAGONAL, rate)
    lat = build_lattice(gen, 1.0)
    print(f"rate {rate}: budget {int(2**(2*rate)):3d} -> codewords {lat.size:3d}, "
          f"spacing {np.linalg.norm(gen[:, 0]):.4f}")

print("\n== Nearest lattice point (Babai rounding + local refinement) ==")
for x in ([0.6, -0.2], [0.9, 0.5], [0.49, 0.01]):
    l = nearest_point(GEN_HEXAGONAL, np.array(x))
    p = GEN_HEXAGONAL @ l
    print(f"x={x}  ->  l={l.tolist()}  point=({p[0]:+.4f}, {p[1]:+.4f})  "
          f"dist={np.linalg.norm(np.array(x) - p):.4f}")

print("\n== Overload clamps to the boundary instead of failing ==")
lat = build_lattice(GEN_HEXAGONAL, 1.0)
from olala.lattice import quantize

idx, pt = quantize(lat, np.array([10.0, 10.0]))
print(f"input far outside the support -> codeword {pt.round(4).tolist()} (index {idx})")
