"""Surrogate-driven collaborative optimization with dual discrepancy datasets.

Every direct black-box call of the bi-level architecture is replaced by a
constrained acquisition maximization over Gaussian-process surrogates.  Each
discrepancy function keeps two datasets with one shared schema, one enriched
by subsystem-level evaluations and one by system-level evaluations, pooled at
fit time; a major iteration costs exactly two true evaluations per
discipline, one after each level's acquisition solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .acquisition import AcquisitionInput, log_expected_improvement
from .co_variants import SolverRun
from .core import (
    BestSolution,
    BudgetLedger,
    ConvergenceTrace,
    DesignPoint,
    MdoProblem,
    Vov,
    derive_seed,
    discrepancy,
    eval_discipline,
    total_violation,
    update_best,
)
from .gp import GpConfig, GpFitError, fit
from .local_opt import multistart_maximize
from .sampling import lhs_in_bounds

logger = logging.getLogger(__name__)


class Dataset:
    """Row-wise growing input/output pairs with one fixed input schema."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._X: list[np.ndarray] = []
        self._y: list[np.ndarray] = []

    def append(self, x, y) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"row has dimension {x.size}, schema expects {self.dim}")
        self._X.append(x)
        self._y.append(np.atleast_1d(np.asarray(y, dtype=float)))

    def inputs(self) -> np.ndarray:
        return np.array(self._X).reshape(len(self._X), self.dim)

    def outputs(self) -> np.ndarray:
        return np.array(self._y)

    def __len__(self) -> int:
        return len(self._X)


class SystemDataset:
    """Coordinator-level records: targets with objective, constraints, and violation."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._X: list[np.ndarray] = []
        self.f: list[float] = []
        self.c: list[np.ndarray] = []
        self.htot: list[float] = []

    def append(self, x, f, c, htot) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"row has dimension {x.size}, schema expects {self.dim}")
        self._X.append(x)
        self.f.append(float(f))
        self.c.append(np.atleast_1d(np.asarray(c, dtype=float)))
        self.htot.append(float(htot))

    def inputs(self) -> np.ndarray:
        return np.array(self._X).reshape(len(self._X), self.dim)

    def __len__(self) -> int:
        return len(self._X)


@dataclass
class DiscrepancyDatasets:
    """The two same-schema datasets backing one discrepancy surrogate.

    ``upper`` collects system-level evaluations, ``lower`` subsystem-level
    ones; they are pooled (upper rows first) whenever the surrogate is
    fitted.
    """

    upper: Dataset
    lower: Dataset

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.vstack([self.upper.inputs(), self.lower.inputs()])
        y = np.concatenate([self.upper.outputs().ravel(), self.lower.outputs().ravel()])
        return X, y


@dataclass(frozen=True)
class BacoConfig:
    """Budget, initialization, and acquisition controls.

    The initial design size for each targeted problem is
    ``doe_multiplier * n + 1`` where ``n`` is that problem's input dimension.
    ``eps`` is both the compatibility and the feasibility tolerance of the
    stopping test.
    """

    total_budget: int = 300
    doe_multiplier: int = 1
    eps: float = 1e-3
    n_starts: int = 25
    seed: int = 0
    accept_tol: float = 1e-12
    gp_nugget: float = 1e-8
    gp_restarts: int = 10
    acq_evals_per_dim: int = 80
    acq_evals_cap: int = 600

    def __post_init__(self) -> None:
        if not 1 <= self.doe_multiplier <= 5:
            raise ValueError("doe_multiplier must be in 1..5")
        if self.total_budget < 1:
            raise ValueError("total_budget must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass
class BacoState:
    """All evolving quantities of one solver run."""

    z_sys: np.ndarray
    x_sys: Vov
    y_sys: Vov
    z_sub: list[np.ndarray]
    x_sub: list[np.ndarray]
    d_sys: SystemDataset
    d_local: list[Dataset]
    d_disc: list[DiscrepancyDatasets]
    best: Optional[BestSolution] = None
    trace: ConvergenceTrace = field(default_factory=ConvergenceTrace)
    iteration: int = 0
    doe_evals: int = 0
    warm: dict = field(default_factory=dict)
    fit_rows: list = field(default_factory=list)
    fallbacks: int = 0

    def design_point(self) -> DesignPoint:
        return DesignPoint(
            z_sys=self.z_sys.copy(),
            x_sys=Vov([b.copy() for b in self.x_sys.blocks]),
            y_sys=Vov([b.copy() for b in self.y_sys.blocks]),
            z_sub=[z.copy() for z in self.z_sub],
            x_sub=[x.copy() for x in self.x_sub],
        )


def _ji_row(z_t, x_t_i, y_t: Vov, z_c, x_c) -> np.ndarray:
    """Discrepancy surrogate schema: system targets first, subsystem copies last."""
    return np.concatenate([z_t, x_t_i, y_t.concat(), z_c, x_c])


def _sys_bounds(problem: MdoProblem) -> np.ndarray:
    return np.vstack([problem.z_bounds, *problem.x_bounds, *problem.y_bounds])


def _sub_bounds(problem: MdoProblem, i: int) -> np.ndarray:
    return np.vstack([problem.z_bounds, problem.x_bounds[i]])


def _unpack_sys(problem: MdoProblem, w: np.ndarray):
    off = problem.dim_z
    z = w[:off]
    xs = []
    for s in problem.dims_x:
        xs.append(w[off : off + s])
        off += s
    ys = []
    for s in problem.dims_y:
        ys.append(w[off : off + s])
        off += s
    return z, Vov(xs), Vov(ys)


def _doe_cost(problem: MdoProblem, config: BacoConfig) -> int:
    n_sys = problem.dim_z + sum(problem.dims_x) + sum(problem.dims_y)
    cost = problem.n_disciplines * (config.doe_multiplier * n_sys + 1)
    for i in range(problem.n_disciplines):
        n_i = problem.dim_z + problem.dims_x[i]
        cost += config.doe_multiplier * n_i + 1
    return cost


def _gp_config(config: BacoConfig, *keys: int) -> GpConfig:
    return GpConfig(
        nugget=config.gp_nugget,
        n_restarts=config.gp_restarts,
        seed=derive_seed(config.seed, *keys),
    )


def _per_start_evals(config: BacoConfig, d: int) -> int:
    return min(config.acq_evals_per_dim * d + 40, config.acq_evals_cap)


def init_datasets(problem: MdoProblem, config: BacoConfig, ledger: BudgetLedger) -> BacoState:
    """Draw and evaluate all initial designs, seeding every dataset family.

    One LHS over the subsystem free variables per discipline (at the fixed
    initial targets) populates the lower discrepancy and local-constraint
    datasets; one LHS over the full target space populates the coordinator
    dataset and, by evaluating every discipline at each row with copies set
    to the row's own slices, the upper discrepancy datasets.
    """
    n = problem.n_disciplines
    if _doe_cost(problem, config) > ledger.remaining:
        raise ValueError(
            f"initial designs need {_doe_cost(problem, config)} evaluations, "
            f"only {ledger.remaining} available"
        )
    start_count = ledger.count

    init = problem.random_point(config.seed)
    dim_sys = problem.dim_z + sum(problem.dims_x) + sum(problem.dims_y)
    state = BacoState(
        z_sys=init.z_sys,
        x_sys=init.x_sys,
        y_sys=init.y_sys,
        z_sub=init.z_sub,
        x_sub=init.x_sub,
        d_sys=SystemDataset(dim_sys),
        d_local=[
            Dataset(problem.dim_y_others(i) + problem.dim_z + problem.dims_x[i])
            for i in range(n)
        ],
        d_disc=[
            DiscrepancyDatasets(
                upper=Dataset(2 * problem.dim_z + 2 * problem.dims_x[i] + sum(problem.dims_y)),
                lower=Dataset(2 * problem.dim_z + 2 * problem.dims_x[i] + sum(problem.dims_y)),
            )
            for i in range(n)
        ],
    )

    # subsystem designs at the fixed initial targets
    for i in range(n):
        n_i = problem.dim_z + problem.dims_x[i]
        rows = lhs_in_bounds(
            config.doe_multiplier * n_i + 1, _sub_bounds(problem, i), derive_seed(config.seed, 1, i)
        )
        y_oth = problem.y_others(state.y_sys, i)
        for row in rows:
            z_c, x_c = row[: problem.dim_z], row[problem.dim_z :]
            y_val = eval_discipline(problem, ledger, i, y_oth, z_c, x_c)
            j_val = discrepancy(
                state.z_sys, state.x_sys.block(i), state.y_sys.block(i), z_c, x_c, y_val
            )
            state.d_disc[i].lower.append(_ji_row(state.z_sys, state.x_sys.block(i), state.y_sys, z_c, x_c), j_val)
            g_val = problem.local_constraints[i](y_oth, z_c, x_c)
            state.d_local[i].append(np.concatenate([y_oth, z_c, x_c]), g_val)

    # coordinator design over the full target space
    n_sys = dim_sys
    rows = lhs_in_bounds(
        config.doe_multiplier * n_sys + 1, _sys_bounds(problem), derive_seed(config.seed, 2)
    )
    for row in rows:
        z_t, x_t, y_t = _unpack_sys(problem, row)
        f_val = float(problem.objective(z_t, x_t, y_t))
        c_val = problem.eval_constraints(z_t, x_t, y_t)
        g_vals, jtot = [], 0.0
        for i in range(n):
            y_oth = problem.y_others(y_t, i)
            y_val = eval_discipline(problem, ledger, i, y_oth, z_t, x_t.block(i))
            j_val = discrepancy(z_t, x_t.block(i), y_t.block(i), z_t, x_t.block(i), y_val)
            state.d_disc[i].upper.append(_ji_row(z_t, x_t.block(i), y_t, z_t, x_t.block(i)), j_val)
            g_vals.append(problem.local_constraints[i](y_oth, z_t, x_t.block(i)))
            jtot += j_val
        htot = total_violation(g_vals, c_val)
        state.d_sys.append(row, f_val, c_val, htot)
        candidate = BestSolution(
            point=DesignPoint(
                z_sys=z_t.copy(),
                x_sys=Vov([b.copy() for b in x_t.blocks]),
                y_sys=Vov([b.copy() for b in y_t.blocks]),
                z_sub=[z_t.copy() for _ in range(n)],
                x_sub=[x_t.block(i).copy() for i in range(n)],
            ),
            f=f_val,
            htot=htot,
            jtot=jtot,
            eval_index=ledger.count,
        )
        state.best = update_best(state.best, candidate, config.accept_tol)

    state.doe_evals = ledger.count - start_count
    state.trace.append(ledger.count, state.best.f, state.best.htot, state.best.jtot)
    return state


def subsystem_step(
    problem: MdoProblem, config: BacoConfig, state: BacoState, i: int, ledger: BudgetLedger
):
    """Propose and evaluate one point for discipline ``i``; exactly one true call.

    The discrepancy surrogate is fitted on the pooled datasets over the full
    schema; at solve time the target columns are frozen at the current
    coordinator state and only the copy columns vary.  Feasibility is
    enforced through the predicted means of the local constraint surrogates.
    """
    k = state.iteration
    y_oth = problem.y_others(state.y_sys, i)
    free_bounds = _sub_bounds(problem, i)
    context_j = np.concatenate([state.z_sys, state.x_sys.block(i), state.y_sys.concat()])

    try:
        Xp, yp = state.d_disc[i].pooled()
        state.fit_rows.append(("J", i, len(yp)))
        j_gp = fit(Xp, yp, _gp_config(config, 3, k, i), warm_start=state.warm.get(("J", i)))
        state.warm[("J", i)] = j_gp.lengthscales

        g_out = state.d_local[i].outputs()
        g_gps = []
        for l in range(g_out.shape[1]):
            g_gps.append(
                fit(
                    state.d_local[i].inputs(),
                    g_out[:, l],
                    _gp_config(config, 4, k, i, l),
                    warm_start=state.warm.get(("g", i, l)),
                )
            )
            state.warm[("g", i, l)] = g_gps[-1].lengthscales

        best_j = float(np.min(yp))

        def acq(Xf):
            full = np.hstack([np.tile(context_j, (len(Xf), 1)), Xf])
            mu, var = j_gp.predict_batch(full)
            return log_expected_improvement(AcquisitionInput(mu, np.sqrt(var), best_j))

        def make_con(g_gp):
            def con(Xf):
                full = np.hstack([np.tile(y_oth, (len(Xf), 1)), Xf])
                mu, _ = g_gp.predict_batch(full)
                return mu

            return con

        winner = multistart_maximize(
            acq,
            [make_con(g) for g in g_gps],
            free_bounds,
            np.concatenate([state.z_sub[i], state.x_sub[i]]),
            n_starts=config.n_starts,
            per_start_evals=_per_start_evals(config, free_bounds.shape[0]),
            seed=derive_seed(config.seed, 5, k, i),
        )
    except GpFitError as exc:
        logger.warning("subsystem %d iteration %d: GP fit failed (%s); LHS fallback", i, k, exc)
        state.fallbacks += 1
        winner = lhs_in_bounds(1, free_bounds, derive_seed(config.seed, 6, k, i))[0]

    z_new, x_new = winner[: problem.dim_z].copy(), winner[problem.dim_z :].copy()
    y_val = eval_discipline(problem, ledger, i, y_oth, z_new, x_new)
    j_val = discrepancy(
        state.z_sys, state.x_sys.block(i), state.y_sys.block(i), z_new, x_new, y_val
    )
    state.d_disc[i].lower.append(
        _ji_row(state.z_sys, state.x_sys.block(i), state.y_sys, z_new, x_new), j_val
    )
    g_val = problem.local_constraints[i](y_oth, z_new, x_new)
    state.d_local[i].append(np.concatenate([y_oth, z_new, x_new]), g_val)
    return z_new, x_new


def system_step(problem: MdoProblem, config: BacoConfig, state: BacoState, ledger: BudgetLedger):
    """Move the coordinator targets; exactly one true call per discipline.

    Surrogates for the objective and system constraints come from the
    coordinator dataset; the discrepancy surrogates are refitted on the
    pooled data (fresh subsystem rows included) with the copy columns frozen
    at this iteration's subsystem results.
    """
    n = problem.n_disciplines
    k = state.iteration
    bounds = _sys_bounds(problem)
    dim_w = bounds.shape[0]

    # column map from a target vector into each discrepancy schema's target part
    x_off = [problem.dim_z + sum(problem.dims_x[:i]) for i in range(n)]
    y_lo = problem.dim_z + sum(problem.dims_x)

    try:
        f_gp = fit(
            state.d_sys.inputs(),
            np.asarray(state.d_sys.f),
            _gp_config(config, 7, k),
            warm_start=state.warm.get("f"),
        )
        state.warm["f"] = f_gp.lengthscales

        c_arr = (
            np.array(state.d_sys.c)
            if state.d_sys.c and state.d_sys.c[0].size
            else np.empty((len(state.d_sys), 0))
        )
        c_gps = []
        for l in range(c_arr.shape[1]):
            c_gps.append(
                fit(
                    state.d_sys.inputs(),
                    c_arr[:, l],
                    _gp_config(config, 8, k, l),
                    warm_start=state.warm.get(("c", l)),
                )
            )
            state.warm[("c", l)] = c_gps[-1].lengthscales

        j_gps = []
        for i in range(n):
            Xp, yp = state.d_disc[i].pooled()
            state.fit_rows.append(("J_sys", i, len(yp)))
            gp_i = fit(Xp, yp, _gp_config(config, 9, k, i), warm_start=state.warm.get(("J", i)))
            state.warm[("J", i)] = gp_i.lengthscales
            j_gps.append(gp_i)

        htot_arr = np.asarray(state.d_sys.htot)
        f_arr = np.asarray(state.d_sys.f)
        feasible = htot_arr <= config.eps
        best_f = float(np.min(f_arr[feasible])) if np.any(feasible) else float(
            f_arr[int(np.argmin(htot_arr))]
        )

        def acq(Xw):
            mu, var = f_gp.predict_batch(Xw)
            return log_expected_improvement(AcquisitionInput(mu, np.sqrt(var), best_f))

        constraints = []
        for c_gp in c_gps:
            constraints.append(lambda Xw, m=c_gp: m.predict_batch(Xw)[0])

        def make_j_con(i, gp_i):
            copies = np.concatenate([state.z_sub[i], state.x_sub[i]])
            cols = np.concatenate(
                [
                    np.arange(problem.dim_z),
                    np.arange(x_off[i], x_off[i] + problem.dims_x[i]),
                    np.arange(y_lo, dim_w),
                ]
            )

            def con(Xw):
                full = np.hstack([Xw[:, cols], np.tile(copies, (len(Xw), 1))])
                mu, _ = gp_i.predict_batch(full)
                return config.eps - mu

            return con

        constraints.extend(make_j_con(i, j_gps[i]) for i in range(n))

        prev = np.concatenate([state.z_sys, state.x_sys.concat(), state.y_sys.concat()])
        winner = multistart_maximize(
            acq,
            constraints,
            bounds,
            prev,
            n_starts=config.n_starts,
            per_start_evals=_per_start_evals(config, dim_w),
            seed=derive_seed(config.seed, 10, k),
        )
    except GpFitError as exc:
        logger.warning("system step iteration %d: GP fit failed (%s); LHS fallback", k, exc)
        state.fallbacks += 1
        winner = lhs_in_bounds(1, bounds, derive_seed(config.seed, 11, k))[0]

    z_t, x_t, y_t = _unpack_sys(problem, winner)
    f_val = float(problem.objective(z_t, x_t, y_t))
    c_val = problem.eval_constraints(z_t, x_t, y_t)
    g_vals, jtot = [], 0.0
    for i in range(n):
        y_oth = problem.y_others(y_t, i)
        y_val = eval_discipline(problem, ledger, i, y_oth, state.z_sub[i], state.x_sub[i])
        j_val = discrepancy(
            z_t, x_t.block(i), y_t.block(i), state.z_sub[i], state.x_sub[i], y_val
        )
        state.d_disc[i].upper.append(
            _ji_row(z_t, x_t.block(i), y_t, state.z_sub[i], state.x_sub[i]), j_val
        )
        g_vals.append(problem.local_constraints[i](y_oth, state.z_sub[i], state.x_sub[i]))
        jtot += j_val
    htot = total_violation(g_vals, c_val)
    state.d_sys.append(winner, f_val, c_val, htot)

    state.z_sys, state.x_sys, state.y_sys = z_t.copy(), x_t, y_t
    candidate = BestSolution(
        point=state.design_point(),
        f=f_val,
        htot=htot,
        jtot=jtot,
        eval_index=ledger.count,
    )
    new_best = update_best(state.best, candidate, config.accept_tol)
    if new_best is not state.best:
        state.best = new_best
        state.trace.append(ledger.count, new_best.f, new_best.htot, new_best.jtot)
    state.iteration += 1


def solve_baco(problem: MdoProblem, config: BacoConfig, ledger: BudgetLedger) -> SolverRun:
    """Run the full surrogate-assisted bi-level loop until budget or tolerance.

    A major iteration runs one subsystem step per discipline and one system
    step, so it costs exactly ``2 * n_disciplines`` true evaluations; the
    loop only starts an iteration it can finish, keeping the accounting
    exact.  All surrogate fitting and acquisition optimization is internal
    and never touches the ledger.
    """
    n = problem.n_disciplines
    state = init_datasets(problem, config, ledger)

    while ledger.remaining >= 2 * n:
        if state.best.htot <= config.eps and state.best.jtot <= config.eps:
            break
        for i in range(n):
            z_i, x_i = subsystem_step(problem, config, state, i, ledger)
            state.z_sub[i] = z_i
            state.x_sub[i] = x_i
        system_step(problem, config, state, ledger)

    best = state.best
    return SolverRun(
        best=best.point,
        f_best=best.f,
        htot_best=best.htot,
        jtot_best=best.jtot,
        trace=state.trace,
        evals_used=ledger.count,
        meta={
            "doe_evals": state.doe_evals,
            "major_iterations": state.iteration,
            "fit_rows": state.fit_rows,
            "fallbacks": state.fallbacks,
            "converged": bool(
                best.htot <= config.eps and best.jtot <= config.eps
            ),
        },
    )
