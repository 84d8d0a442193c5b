"""Bell-inequality construction and finite-size key rates for device-independent QKD."""

from .behavior import BehaviorVector, Scenario
from .conic import SolveReport, SolverError
from .finitekey import (
    KeyLengthReport,
    NoRootError,
    ProtocolParams,
    budget_epsilons,
    f_entropy,
    gamma_est,
    gamma_range,
    hoeffding_delta,
    hoeffding_epsilon,
    key_length,
)
from .npa import BetaAboveQuantumMaximum, GuessingBound, guessing_probability, quantum_maximum
from .polytope import (
    BellFunctional,
    InfeasibleClassical,
    bell_value,
    equivalent,
    is_classical,
    optimal_hyperplane,
    parse_tabular,
    render_tabular,
)
from .protocol import RoundRecord, RunOutcome, abort_statistics, run_protocol, simulate_rounds
from .quantum import DensityMatrix, MeasurementFamily, QuantumSetup, born_probabilities

__version__ = "0.1.0"
