from __future__ import annotations

from dataclasses import asdict, dataclass

STATUSES = ("optimal", "infeasible", "unbounded", "max-iterations", "numerical-error")


class SolverError(RuntimeError):
    """A solver failed to reach a usable verdict."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    status: str
    primal_objective: float
    dual_objective: float
    gap: float
    iterations: int
    message: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown solver status {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return asdict(self)
