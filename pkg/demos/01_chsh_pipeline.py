"""From a quantum setup to a key rate, one step at a time.

Run with ``python demos/01_chsh_pipeline.py``.
"""

import math

import numpy as np

from bellforge.keyrate import asymptotic_model, tune_fractions
from bellforge.npa import guessing_probability
from bellforge.polytope import is_classical, optimal_hyperplane, render_tabular
from bellforge.quantum import born_probabilities, chsh_setup, key_qber

# %% A noisy Bell state measured with the usual CHSH settings.
setup = chsh_setup(p=0.02)
P = born_probabilities(setup)
print("P(a,b|x=0,y=0) =\n", np.round(P.table[0, 0], 4))
print("key-round error rate:", key_qber(setup))

# %% The behavior is outside the local polytope; the LP finds the best separating inequality.
print("classical?", bool(is_classical(P)))
f = optimal_hyperplane(P)
print(render_tabular(f))
print(f"Bell value {f.value(P):.4f} against classical bound {f.c:g}")

# %% Eve's guessing probability for Alice's key outcome, given only the Bell value.
for beta in (2.2, 2.5, f.value(P)):
    g = guessing_probability(f, beta)
    print(f"beta={beta:.4f}  pg={g.pg:.4f}  H_min={g.hmin:.4f} bits")

# %% Finite-size rates with the sampling fractions tuned at each N.
model = asymptotic_model(setup, f)
pg = lambda b: guessing_probability(f, b).pg  # noqa: E731
for N in (1e6, 1e8, 1e10, 1e12):
    pt = tune_fractions(model, N, pg)
    print(f"N=1e{math.log10(N):.0f}: rate {pt.rate:.4f}  (xi={pt.xi:.2e}, eta={pt.eta:.2e})")
