"""Simulated honest runs of the protocol and their abort statistics."""

import json

from bellforge.finitekey import ProtocolParams
from bellforge.keyrate import asymptotic_model, tune_fractions
from bellforge.npa import chsh_guessing_probability
from bellforge.protocol import abort_statistics, run_protocol
from bellforge.quantum import chsh_setup, classical_uniform_setup

setup = chsh_setup(0.0)

# pick the sampling fractions that maximize the expected rate at 1e8 rounds
tuned = tune_fractions(asymptotic_model(setup), 1e8, chsh_guessing_probability)
params = ProtocolParams.from_budget(1e8, tuned.xi, tuned.eta)
print(f"xi={params.xi:.4f}, eta={params.eta:.2e}, expected rate {tuned.rate:.4f}")

run = run_protocol(setup, params, seed=1)
summary = {k: v for k, v in run.to_dict().items() if k in ("status", "reason", "b2", "b3", "q_hat", "beta", "pg")}
print(json.dumps(summary, indent=2))
print(f"key length {run.report.l:.4g} bits, rate {run.report.rate:.4f}")

# A local behavior never passes the first test.
print(run_protocol(classical_uniform_setup(), ProtocolParams.from_budget(1e5, 0.3, 0.05), seed=1).reason)

stats = abort_statistics(setup, params, 50, seed=2)
print(f"aborted {stats.n_aborted}/{stats.n_trials}, 95% interval [{stats.ci_low:.3f}, {stats.ci_high:.3f}]")
print(f"completeness bound {params.completeness:g}")
