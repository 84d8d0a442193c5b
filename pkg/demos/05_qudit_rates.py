"""Normalized key rates for maximally entangled qudits (slow for d=4)."""

import math

from bellforge import experiments as ex
from bellforge.quantum import cglmp_setup

grid = ex.log_grid(5, 15, 0.5)
for d in (2, 3, 4):
    c = ex.keyrate_curves({d: cglmp_setup(d)}, grid, levels=10)[d]
    norm = ex.normalized_rates(c.points, d)
    print(f"d={d}: onset 1e{math.log10(c.zero_crossing):.1f}")
    print("   " + " ".join(f"{r:.2f}" for r in norm))
