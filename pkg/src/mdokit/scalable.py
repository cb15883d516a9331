"""Seeded linear-discipline benchmark with a quadratic objective and analytic oracles.

Each discipline solves a linear governing equation in its own coupling
output; disciplines interact only through the non-local coupling variables,
and every coupling component carries a lower-bound constraint.  Coefficients
are drawn once from a seeded generator, so a spec pins one exact problem
instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DesignPoint, MdoProblem, Vov, as_vector, derive_seed
from .local_opt import LocalProblem, minimize
from .sampling import lhs_in_bounds


@dataclass(frozen=True)
class ScalableSpec:
    """Instance description; ``dims_x``/``dims_y`` default to 1 per discipline.

    Coefficients are drawn uniformly from ``coeff_range`` with
    ``coeff_seed``; the per-discipline draw order is fixed (shared-variable
    matrix, then local matrix, then coupling matrix, disciplines in index
    order) so a seed pins the instance bit-exactly.
    """

    n_disciplines: int = 2
    dim_z: int = 1
    dims_x: Optional[tuple[int, ...]] = None
    dims_y: Optional[tuple[int, ...]] = None
    coeff_seed: int = 42
    coeff_range: tuple[float, float] = (0.0, 10.0)
    zx_bounds: tuple[float, float] = (-10.0, 10.0)
    y_bounds: tuple[float, float] = (-100.0, 100.0)

    def __post_init__(self) -> None:
        if self.n_disciplines < 1 or self.dim_z < 1:
            raise ValueError("need at least one discipline and one shared variable")
        if self.dims_x is None:
            object.__setattr__(self, "dims_x", (1,) * self.n_disciplines)
        if self.dims_y is None:
            object.__setattr__(self, "dims_y", (1,) * self.n_disciplines)
        if len(self.dims_x) != self.n_disciplines or len(self.dims_y) != self.n_disciplines:
            raise ValueError("dims_x and dims_y must have one entry per discipline")


def _draw_coefficients(spec: ScalableSpec):
    """One (C_z, C_x, C_j) triple per discipline, in the documented order."""
    rng = np.random.default_rng(spec.coeff_seed)
    lo, hi = spec.coeff_range
    coeffs = []
    for i in range(spec.n_disciplines):
        ny = spec.dims_y[i]
        n_others = sum(spec.dims_y) - ny
        c_z = rng.uniform(lo, hi, size=(ny, spec.dim_z))
        c_x = rng.uniform(lo, hi, size=(ny, spec.dims_x[i]))
        c_j = rng.uniform(lo, hi, size=(ny, n_others))
        coeffs.append((c_z, c_x, c_j))
    return coeffs


def make_problem(spec: ScalableSpec = ScalableSpec()) -> MdoProblem:
    """Build the benchmark as an :class:`MdoProblem`.

    The objective is the squared norm of the shared variables plus the
    squared norms of all coupling targets; each discipline's constraint
    requires its coupling output to be at least one, elementwise.  There are
    no system-level constraints beyond bounds.
    """
    coeffs = _draw_coefficients(spec)
    n = spec.n_disciplines

    def objective(z, x: Vov, y: Vov) -> float:
        z = as_vector(z)
        total = float(z @ z)
        for block in y.blocks:
            total += float(block @ block)
        return total

    def make_discipline(i):
        c_z, c_x, c_j = coeffs[i]

        def discipline(y_others, z_i, x_i):
            return -(c_z @ as_vector(z_i) + c_x @ as_vector(x_i) - c_j @ as_vector(y_others))

        return discipline

    def make_local_constraint(i):
        analysis = make_discipline(i)

        def g(y_others, z_i, x_i):
            return analysis(y_others, z_i, x_i) - 1.0

        return g

    zx_lo, zx_hi = spec.zx_bounds
    y_lo, y_hi = spec.y_bounds
    return MdoProblem(
        n_disciplines=n,
        dim_z=spec.dim_z,
        dims_x=tuple(spec.dims_x),
        dims_y=tuple(spec.dims_y),
        z_bounds=np.tile([zx_lo, zx_hi], (spec.dim_z, 1)),
        x_bounds=[np.tile([zx_lo, zx_hi], (spec.dims_x[i], 1)) for i in range(n)],
        y_bounds=[np.tile([y_lo, y_hi], (spec.dims_y[i], 1)) for i in range(n)],
        objective=objective,
        disciplines=[make_discipline(i) for i in range(n)],
        local_constraints=[make_local_constraint(i) for i in range(n)],
        constraints=None,
    )


def coupled_solve(spec: ScalableSpec, z, x: Vov) -> Vov:
    """Simultaneous solution of all governing equations by direct linear solve.

    Reference oracle only: it is never called by the solvers (coupling
    targets are decision variables there) and does not touch any ledger.
    """
    coeffs = _draw_coefficients(spec)
    z = as_vector(z)
    dims_y = spec.dims_y
    total = sum(dims_y)
    offsets = np.concatenate([[0], np.cumsum(dims_y)])

    A = np.eye(total)
    b = np.empty(total)
    for i in range(spec.n_disciplines):
        c_z, c_x, c_j = coeffs[i]
        rows = slice(offsets[i], offsets[i + 1])
        b[rows] = -(c_z @ z + c_x @ x.block(i))
        # scatter -C_j into the non-local coupling columns, preserving order
        col = 0
        for j in range(spec.n_disciplines):
            if j == i:
                continue
            cols = slice(offsets[j], offsets[j + 1])
            A[rows, cols] -= c_j[:, col : col + dims_y[j]]
            col += dims_y[j]

    try:
        y_flat = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("coupled system is singular for these coefficients") from exc
    return Vov.from_concat(y_flat, dims_y)


def reference_optimum(spec: ScalableSpec = ScalableSpec(), n_starts: int = 48):
    """Constrained optimum of the fully coupled problem, by dense multistart.

    All consistency is enforced through :func:`coupled_solve`; the search
    runs over the shared and local design variables only.  Returns the best
    objective value found and the corresponding fully consistent design
    point.  Deterministic for a given spec.
    """
    problem = make_problem(spec)
    n = spec.n_disciplines
    dim_w = spec.dim_z + sum(spec.dims_x)
    zx_lo, zx_hi = spec.zx_bounds
    bounds = np.tile([zx_lo, zx_hi], (dim_w, 1))

    def split(w):
        z = w[: spec.dim_z]
        blocks, off = [], spec.dim_z
        for i in range(n):
            blocks.append(w[off : off + spec.dims_x[i]])
            off += spec.dims_x[i]
        return z, Vov(blocks)

    def objective(w):
        z, x = split(w)
        y = coupled_solve(spec, z, x)
        return problem.objective(z, x, y)

    def make_constraint(i, l):
        def g(w):
            z, x = split(w)
            y = coupled_solve(spec, z, x)
            return float(y.block(i)[l] - 1.0)

        return g

    constraints = [make_constraint(i, l) for i in range(n) for l in range(spec.dims_y[i])]

    starts = lhs_in_bounds(n_starts - 1, bounds, seed=derive_seed(spec.coeff_seed, 100))
    starts = np.vstack([starts, np.zeros((1, dim_w))])

    best_f, best_w = np.inf, None
    for x0 in starts:
        res = minimize(
            LocalProblem(
                objective=objective,
                bounds=bounds,
                x0=x0,
                max_evals=300 * dim_w,
                inequalities=constraints,
            )
        )
        viol = max((-min(0.0, g(res.x_star)) for g in constraints), default=0.0)
        if viol <= 1e-8 and res.f_star < best_f:
            best_f, best_w = res.f_star, res.x_star

    if best_w is None:
        raise RuntimeError("no feasible local optimum found")

    z, x = split(best_w)
    y = coupled_solve(spec, z, x)
    point = DesignPoint(
        z_sys=z,
        x_sys=x,
        y_sys=y,
        z_sub=[z.copy() for _ in range(n)],
        x_sub=[b.copy() for b in x.blocks],
    )
    return float(best_f), point
