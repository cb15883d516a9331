"""Bi-level collaborative optimization toolkit with surrogate-assisted solvers."""

from .core import (
    BestSolution,
    BudgetExhausted,
    BudgetLedger,
    ConvergenceTrace,
    DesignPoint,
    MdoProblem,
    TraceRecord,
    Vov,
    discrepancy,
    eval_discipline,
    total_discrepancy,
    total_violation,
    update_best,
    vov_exclude,
)

__all__ = [
    "BestSolution",
    "BudgetExhausted",
    "BudgetLedger",
    "ConvergenceTrace",
    "DesignPoint",
    "MdoProblem",
    "TraceRecord",
    "Vov",
    "discrepancy",
    "eval_discipline",
    "total_discrepancy",
    "total_violation",
    "update_best",
    "vov_exclude",
]

__version__ = "0.1.0"
