"""Bi-level collaborative architectures operating directly on true black-boxes.

All three variants share one engine: subsystems minimize their discrepancy to
the coordinator's targets under local constraints, then the coordinator moves
the targets.  They differ only in how coupling consistency is enforced at the
system level: two-sided relaxed constraints (CO), shared-variable averaging
(MCO), or a growing absolute-value penalty (ICO).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    BestSolution,
    BudgetExhausted,
    BudgetLedger,
    ConvergenceTrace,
    DesignPoint,
    MdoProblem,
    Vov,
    discrepancy,
    eval_discipline,
    total_violation,
    update_best,
)
from .local_opt import LocalProblem, minimize


@dataclass(frozen=True)
class BilevelConfig:
    """Shared budget rules and tolerances for the bi-level solvers."""

    total_budget: int = 300
    system_fraction: float = 0.5
    iteration_ratio: float = 0.05
    eps_j: float = 1e-3
    eps_h: float = 1e-3
    seed: int = 0
    ico_gamma: float = 1.0
    ico_radius: float = 0.0
    ico_growth: float = 1.1
    accept_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not 0 < self.system_fraction < 1:
            raise ValueError("system_fraction must be in (0, 1)")
        if not 0 < self.iteration_ratio <= 1:
            raise ValueError("iteration_ratio must be in (0, 1]")


@dataclass
class SolverRun:
    """Outcome of one solver execution on one problem instance."""

    best: DesignPoint
    f_best: float
    htot_best: float
    jtot_best: float
    trace: ConvergenceTrace
    evals_used: int
    meta: dict = field(default_factory=dict)


def budget_split(total: int, n_disciplines: int, system_fraction: float = 0.5, iteration_ratio: float = 0.05):
    """Partition the evaluation budget between the two levels.

    Returns (system budget, per-subsystem budget, per-iteration cap); the cap
    applies to the discipline evaluations attributable to each level within
    one outer iteration.
    """
    if n_disciplines <= 0:
        raise ValueError("need at least one discipline")
    if total < n_disciplines + 1:
        raise ValueError("budget too small for the discipline count")
    system_budget = int(math.floor(system_fraction * total))
    per_subsystem = (total - system_budget) // n_disciplines
    per_iteration_cap = int(math.ceil(iteration_ratio * total))
    return system_budget, per_subsystem, per_iteration_cap


def mean_shared(z_copies) -> np.ndarray:
    """Arithmetic mean of the subsystem copies of the shared variables."""
    return np.mean(np.asarray(z_copies, dtype=float), axis=0)


def ico_penalty(discrepancies, gamma: float, radius: float = 0.0) -> float:
    """Absolute-value consistency penalty added to the coordinator objective."""
    return float(gamma * sum(abs(j - radius**2) for j in discrepancies))


def _check_in_bounds(problem: MdoProblem, point: DesignPoint) -> None:
    def inside(v, b):
        return np.all(v >= b[:, 0] - 1e-9) and np.all(v <= b[:, 1] + 1e-9)

    ok = inside(point.z_sys, problem.z_bounds)
    for i in range(problem.n_disciplines):
        ok = ok and inside(point.x_sys.block(i), problem.x_bounds[i])
        ok = ok and inside(point.y_sys.block(i), problem.y_bounds[i])
        ok = ok and inside(point.z_sub[i], problem.z_bounds)
        ok = ok and inside(point.x_sub[i], problem.x_bounds[i])
    if not ok:
        raise ValueError("initial point violates the declared bounds")


def _assess(problem: MdoProblem, ledger: BudgetLedger, point: DesignPoint) -> BestSolution:
    """Metrics of the current iterate; costs one discipline evaluation each."""
    n = problem.n_disciplines
    y_vals, g_vals, jtot = [], [], 0.0
    for i in range(n):
        y_oth = problem.y_others(point.y_sys, i)
        y_val = eval_discipline(problem, ledger, i, y_oth, point.z_sub[i], point.x_sub[i])
        y_vals.append(y_val)
        g_vals.append(problem.local_constraints[i](y_oth, point.z_sub[i], point.x_sub[i]))
        jtot += discrepancy(
            point.z_sys, point.x_sys.block(i), point.y_sys.block(i),
            point.z_sub[i], point.x_sub[i], y_val,
        )
    c_val = problem.eval_constraints(point.z_sys, point.x_sys, point.y_sys)
    htot = total_violation(g_vals, c_val)
    f = float(problem.objective(point.z_sys, point.x_sys, point.y_sys))
    return BestSolution(point=point.copy(), f=f, htot=htot, jtot=jtot, eval_index=ledger.count)


def _solve_subsystem(problem, ledger, point, i, max_evals):
    """One budget-capped local solve of discipline ``i``'s matching problem."""
    zdim = problem.dim_z
    y_oth = problem.y_others(point.y_sys, i)
    z_t = point.z_sys
    x_t = point.x_sys.block(i)
    y_t = point.y_sys.block(i)

    def objective(w):
        y_val = eval_discipline(problem, ledger, i, y_oth, w[:zdim], w[zdim:])
        return discrepancy(z_t, x_t, y_t, w[:zdim], w[zdim:], y_val)

    m_i = len(np.atleast_1d(problem.local_constraints[i](y_oth, point.z_sub[i], point.x_sub[i])))

    def make_g(l):
        def g(w):
            return float(np.atleast_1d(problem.local_constraints[i](y_oth, w[:zdim], w[zdim:]))[l])

        return g

    bounds = np.vstack([problem.z_bounds, problem.x_bounds[i]])
    x0 = np.concatenate([point.z_sub[i], point.x_sub[i]])
    res = minimize(
        LocalProblem(
            objective=objective,
            bounds=bounds,
            x0=x0,
            max_evals=max_evals,
            inequalities=[make_g(l) for l in range(m_i)],
        )
    )
    return res.x_star[:zdim].copy(), res.x_star[zdim:].copy()


def _solve_system(problem, ledger, point, variant, gamma, config, probes):
    """Move the coordinator targets; each unique probe costs N evaluations.

    Returns the solver's chosen targets and the candidate solution assembled
    from that probe's cached metrics.
    """
    n = problem.n_disciplines
    zdim = problem.dim_z
    include_z = variant != "mco"
    z_fixed = point.z_sys.copy()
    x_sizes = [problem.dims_x[i] for i in range(n)]
    y_sizes = [problem.dims_y[i] for i in range(n)]

    blocks = []
    if include_z:
        blocks.append(problem.z_bounds)
    blocks.extend(problem.x_bounds)
    blocks.extend(problem.y_bounds)
    bounds = np.vstack(blocks)

    def unpack(w):
        off = 0
        if include_z:
            z = w[:zdim]
            off = zdim
        else:
            z = z_fixed
        xs = []
        for s in x_sizes:
            xs.append(w[off : off + s])
            off += s
        ys = []
        for s in y_sizes:
            ys.append(w[off : off + s])
            off += s
        return z, Vov(xs), Vov(ys)

    cache: dict[bytes, dict] = {}

    def probe(w):
        key = w.tobytes()
        rec = cache.get(key)
        if rec is not None:
            return rec
        z, x, y = unpack(w)
        js, g_vals = [], []
        for i in range(n):
            y_oth = problem.y_others(y, i)
            y_val = eval_discipline(problem, ledger, i, y_oth, point.z_sub[i], point.x_sub[i])
            js.append(
                discrepancy(z, x.block(i), y.block(i), point.z_sub[i], point.x_sub[i], y_val)
            )
            g_vals.append(problem.local_constraints[i](y_oth, point.z_sub[i], point.x_sub[i]))
        c_val = problem.eval_constraints(z, x, y)
        rec = {
            "f": float(problem.objective(z, x, y)),
            "c": np.atleast_1d(c_val),
            "J": js,
            "htot": total_violation(g_vals, c_val),
            "jtot": float(sum(js)),
            "targets": (z.copy(), x, y),
        }
        cache[key] = rec
        return rec

    if variant == "ico":
        def objective(w):
            rec = probe(w)
            return rec["f"] + ico_penalty(rec["J"], gamma, config.ico_radius)
    else:
        def objective(w):
            return probe(w)["f"]

    inequalities = []
    n_c = problem.eval_constraints(point.z_sys, point.x_sys, point.y_sys).size

    def make_c(l):
        return lambda w: float(probe(w)["c"][l])

    inequalities.extend(make_c(l) for l in range(n_c))
    if variant in ("co", "mco"):
        # consistency J_i = 0 relaxed to the two-sided band |J_i| <= eps_j
        def make_j(i):
            return (
                lambda w: config.eps_j - probe(w)["J"][i],
                lambda w: config.eps_j + probe(w)["J"][i],
            )

        for i in range(n):
            lo_c, hi_c = make_j(i)
            inequalities.extend([lo_c, hi_c])

    parts = [point.x_sys.concat(), point.y_sys.concat()]
    if include_z:
        parts.insert(0, point.z_sys)
    x0 = np.concatenate(parts)

    res = minimize(
        LocalProblem(
            objective=objective,
            bounds=bounds,
            x0=x0,
            max_evals=probes,
            inequalities=inequalities,
        )
    )
    rec = cache[res.x_star.tobytes()]
    z_new, x_new, y_new = rec["targets"]
    candidate = BestSolution(
        point=DesignPoint(
            z_sys=z_new.copy(),
            x_sys=Vov([b.copy() for b in x_new.blocks]),
            y_sys=Vov([b.copy() for b in y_new.blocks]),
            z_sub=[z.copy() for z in point.z_sub],
            x_sub=[x.copy() for x in point.x_sub],
        ),
        f=rec["f"],
        htot=rec["htot"],
        jtot=rec["jtot"],
        eval_index=ledger.count,
    )
    return (z_new, x_new, y_new), candidate


def _solve_bilevel(problem: MdoProblem, config: BilevelConfig, x_init: DesignPoint, variant: str) -> SolverRun:
    n = problem.n_disciplines
    _check_in_bounds(problem, x_init)
    ledger = BudgetLedger(config.total_budget, n)
    sys_budget, sub_budget, cap = budget_split(
        config.total_budget, n, config.system_fraction, config.iteration_ratio
    )
    sub_pool = [sub_budget] * n
    sys_pool = sys_budget
    point = x_init.copy()
    trace = ConvergenceTrace()
    gamma = config.ico_gamma
    level_usage = []
    gammas = []

    best = update_best(None, _assess(problem, ledger, point), config.accept_tol)
    sys_pool -= n
    trace.append(ledger.count, best.f, best.htot, best.jtot)

    k = 0
    converged = best.htot <= config.eps_h and best.jtot <= config.eps_j
    while not converged and ledger.remaining > 0:
        sub_cap = max(1, cap // n)
        sub_used = sys_used = 0

        for i in range(n):
            b = min(sub_cap, sub_pool[i], ledger.remaining)
            if b < 1:
                continue
            before = ledger.count
            try:
                z_i, x_i = _solve_subsystem(problem, ledger, point, i, b)
                point.z_sub[i] = z_i
                point.x_sub[i] = x_i
            except BudgetExhausted:
                pass
            used = ledger.count - before
            sub_pool[i] -= used
            sub_used += used

        if variant == "mco":
            point.z_sys = mean_shared(point.z_sub)

        candidate = None
        probes = min(cap // n, sys_pool // n, ledger.remaining // n)
        if probes >= 1:
            before = ledger.count
            try:
                targets, candidate = _solve_system(
                    problem, ledger, point, variant, gamma, config, probes
                )
                point.z_sys, point.x_sys, point.y_sys = (
                    targets[0].copy(),
                    targets[1],
                    targets[2],
                )
            except BudgetExhausted:
                candidate = None
            used = ledger.count - before
            sys_pool -= used
            sys_used += used

        level_usage.append((sub_used, sys_used))
        gammas.append(gamma)
        if variant == "ico":
            gamma *= config.ico_growth
        k += 1

        if candidate is not None:
            new_best = update_best(best, candidate, config.accept_tol)
            if new_best is not best:
                best = new_best
                trace.append(ledger.count, best.f, best.htot, best.jtot)
        converged = best.htot <= config.eps_h and best.jtot <= config.eps_j
        if sub_used == 0 and sys_used == 0:
            break

    return SolverRun(
        best=best.point,
        f_best=best.f,
        htot_best=best.htot,
        jtot_best=best.jtot,
        trace=trace,
        evals_used=ledger.count,
        meta={
            "variant": variant,
            "major_iterations": k,
            "budget_split": (sys_budget, sub_budget, cap),
            "level_usage": level_usage,
            "gammas": gammas if variant == "ico" else [],
            "converged": converged,
        },
    )


def solve_co(problem: MdoProblem, config: BilevelConfig, x_init: DesignPoint) -> SolverRun:
    """Alternate subsystem matching solves with a consistency-constrained coordinator."""
    return _solve_bilevel(problem, config, x_init, "co")


def solve_mco(problem: MdoProblem, config: BilevelConfig, x_init: DesignPoint) -> SolverRun:
    """Like :func:`solve_co`, but the coordinator takes the shared variables as the
    mean of the subsystem copies and optimizes only the local and coupling targets."""
    return _solve_bilevel(problem, config, x_init, "mco")


def solve_ico(problem: MdoProblem, config: BilevelConfig, x_init: DesignPoint) -> SolverRun:
    """Like :func:`solve_co`, but consistency enters the coordinator objective as a
    growing absolute-value penalty instead of constraints."""
    return _solve_bilevel(problem, config, x_init, "ico")
