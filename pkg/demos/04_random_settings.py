"""How often do random measurement settings give a key?

Each trial draws Haar-random settings (the key settings stay in the
computational basis), finds the optimal Bell inequality and decides whether
1e12 rounds would give a positive key. Set BELLFORGE_THREADS to spread the
trials over several workers.
"""

import sys

from bellforge import experiments as ex

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 50
for kind, size in (("qubit", 2), ("qubit", 3), ("qudit", 3)):
    for p in (0.0, 0.05):
        cell = ex.random_settings_fraction(kind, size, p, trials, seed=[7, size, int(p * 100)])
        lo, hi = cell.wilson()
        print(f"{cell.label} p={p:<4g} violated {cell.n_violated:3d}  key {cell.n_positive:3d}  "
              f"fraction {cell.fraction:.3f} [{lo:.3f}, {hi:.3f}]")
