"""LP and SDP front-ends used by the polytope and NPA modules."""

from .lp import LinearProgram, LPSolution, solve_lp
from .report import SolveReport, SolverError
from .sdp import (
    SDPSolution,
    SemidefiniteProgram,
    complex_program,
    hermitian_to_real,
    real_to_hermitian,
    solve_sdp,
)

__all__ = [
    "LinearProgram",
    "LPSolution",
    "SDPSolution",
    "SemidefiniteProgram",
    "SolveReport",
    "SolverError",
    "complex_program",
    "hermitian_to_real",
    "real_to_hermitian",
    "solve_lp",
    "solve_sdp",
]
