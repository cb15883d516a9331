"""Bound-constrained derivative-free local search with adaptive quadratic penalties.

One Nelder-Mead core serves two callers: :func:`minimize` runs a single
instance on scalar callables (true black-boxes, where every evaluation is
counted), and :func:`multistart_maximize` runs a population of instances in
lockstep on batched callables (surrogate acquisitions, where evaluations are
free but wall-clock matters).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .sampling import lhs_in_bounds

_PENALTY_WEIGHTS = (10.0, 100.0, 1000.0)
_EQ_TOL = 1e-6
_FEAS_MARGIN = -1e-6


@dataclass
class LocalProblem:
    """A local minimization task over box bounds.

    ``inequalities`` are feasible iff >= 0; ``equalities`` are relaxed to
    two-sided inequalities with tolerance 1e-6.  ``max_evals`` caps objective
    evaluations exactly.
    """

    objective: Callable
    bounds: np.ndarray
    x0: np.ndarray
    max_evals: int
    inequalities: Sequence[Callable] = ()
    equalities: Sequence[Callable] = ()


@dataclass
class LocalResult:
    x_star: np.ndarray
    f_star: float
    n_evals: int
    converged: bool


class _NelderMead:
    """State machine for one Nelder-Mead instance, driven by batched rounds.

    Each round the instance exposes pending candidates via :meth:`request`,
    the driver evaluates them (possibly stacked with other instances), and
    :meth:`receive` advances the state.  Candidates are clipped to bounds
    before evaluation, so the objective is never probed outside the box.  On
    simplex collapse the search restarts around the incumbent with a halved
    step while budget remains.
    """

    def __init__(self, x0, bounds, max_evals, step_frac=0.10, f_tol=1e-12, x_tol=1e-11):
        self.bounds = bounds
        self.d = bounds.shape[0]
        self.max_evals = int(max_evals)
        self.evals = 0
        self.f_tol = f_tol
        self.x_tol = x_tol
        self.step = step_frac * (bounds[:, 1] - bounds[:, 0])
        self.done = self.max_evals < 1
        self.converged = False
        self.simplex = None
        self.fvals = None
        self.phase = "init"
        self.pending: list[np.ndarray] = []
        self._stash_x = None
        self._stash_f = np.inf
        self._trial = None
        self._kind = ""
        self._init_pts: list[np.ndarray] = []
        self._restart_f0 = np.inf
        if not self.done:
            x0c = self._clip(np.asarray(x0, dtype=float))
            self._init_pts = self._initial_simplex(x0c)
            self.pending = list(self._init_pts)

    def _clip(self, x):
        return np.clip(x, self.bounds[:, 0], self.bounds[:, 1])

    def _initial_simplex(self, x0):
        pts = [x0]
        for j in range(self.d):
            xj = x0.copy()
            xj[j] += self.step[j]
            xj = self._clip(xj)
            if abs(xj[j] - x0[j]) < 1e-12 * (1.0 + abs(x0[j])):
                xj = x0.copy()
                xj[j] -= self.step[j]
                xj = self._clip(xj)
            pts.append(xj)
        return pts

    def request(self):
        """Points awaiting evaluation this round, truncated to the budget."""
        if self.done:
            return []
        remaining = self.max_evals - self.evals
        if remaining <= 0:
            self.pending = []
            self.done = True
            return []
        if len(self.pending) > remaining:
            self.pending = self.pending[:remaining]
            self._init_pts = self._init_pts[:remaining] if self.phase in ("init", "restart") else self._init_pts
        return self.pending

    def receive(self, values):
        values = [np.inf if not np.isfinite(v) else float(v) for v in values]
        self.evals += len(values)
        requested = len(self.pending)
        got = len(values)
        self.pending = []

        if self.phase == "init":
            pts = np.array(self._init_pts[:got])
            if got < requested or got < self.d + 1:
                # budget died during initialization; keep the best point seen
                self.simplex = pts
                self.fvals = np.array(values)
                self._order()
                self.done = True
                return
            self.simplex = pts
            self.fvals = np.array(values)
            self._order()
            self._next_iteration()
            return

        if self.phase == "restart":
            if got < requested or got < self.d:
                self.done = True
                return
            pts = np.array(self._init_pts[:got])
            self.simplex = np.vstack([self.simplex[0][None, :], pts])
            self.fvals = np.concatenate([[self._restart_f0], values])
            self._order()
            self._next_iteration()
            return

        if got < requested:
            self.done = True
            return

        if self.phase == "reflect":
            fr = values[0]
            xr = self._trial
            if fr < self.fvals[0]:
                c = self._centroid()
                self._stash_x, self._stash_f = xr, fr
                self._trial = self._clip(c + 2.0 * (xr - c))
                self.phase = "expand"
                self.pending = [self._trial]
            elif fr < self.fvals[-2]:
                self._replace_worst(xr, fr)
                self._next_iteration()
            else:
                c = self._centroid()
                self._stash_x, self._stash_f = xr, fr
                if fr < self.fvals[-1]:
                    self._trial = self._clip(c + 0.5 * (xr - c))
                    self._kind = "outside"
                else:
                    self._trial = self._clip(c - 0.5 * (c - self.simplex[-1]))
                    self._kind = "inside"
                self.phase = "contract"
                self.pending = [self._trial]
            return

        if self.phase == "expand":
            fe = values[0]
            if fe < self._stash_f:
                self._replace_worst(self._trial, fe)
            else:
                self._replace_worst(self._stash_x, self._stash_f)
            self._next_iteration()
            return

        if self.phase == "contract":
            fc = values[0]
            ok = fc <= self._stash_f if self._kind == "outside" else fc < self.fvals[-1]
            if ok:
                self._replace_worst(self._trial, fc)
                self._next_iteration()
            else:
                best = self.simplex[0]
                self._shrink_pts = [self._clip(best + 0.5 * (x - best)) for x in self.simplex[1:]]
                self.phase = "shrink"
                self.pending = list(self._shrink_pts)
            return

        if self.phase == "shrink":
            for k, v in enumerate(values):
                self.simplex[k + 1] = self._shrink_pts[k]
                self.fvals[k + 1] = v
            self._order()
            self._next_iteration()
            return

        raise RuntimeError(f"unexpected phase {self.phase!r}")

    # bookkeeping ----------------------------------------------------------

    def _order(self):
        idx = np.argsort(self.fvals, kind="stable")
        self.fvals = self.fvals[idx]
        self.simplex = self.simplex[idx]

    def _centroid(self):
        return self.simplex[:-1].mean(axis=0)

    def _replace_worst(self, x, f):
        self.simplex[-1] = x
        self.fvals[-1] = f
        self._order()

    def _next_iteration(self):
        if self._collapsed():
            self.converged = True
            if self.max_evals - self.evals >= self.d + 2:
                # restart around the incumbent with a finer simplex
                self.step = np.maximum(self.step * 0.5, 1e-8)
                pts = self._initial_simplex(self.simplex[0].copy())
                self._restart_f0 = self.fvals[0]
                self._init_pts = pts[1:]
                self.pending = list(self._init_pts)
                self.phase = "restart"
            else:
                self.done = True
            return
        c = self._centroid()
        self._trial = self._clip(c + (c - self.simplex[-1]))
        self.phase = "reflect"
        self.pending = [self._trial]

    def _collapsed(self):
        f0 = self.fvals[0]
        fscale = 1.0 + abs(f0) if np.isfinite(f0) else 1.0
        xscale = 1.0 + np.max(np.abs(self.simplex[0]))
        fspread = np.max(np.abs(self.fvals - f0)) if np.all(np.isfinite(self.fvals)) else np.inf
        xspread = np.max(np.abs(self.simplex - self.simplex[0]))
        return fspread <= self.f_tol * fscale and xspread <= self.x_tol * xscale

    @property
    def best(self):
        if self.simplex is None or len(self.fvals) == 0:
            return None, np.inf
        return self.simplex[0], float(self.fvals[0])


def _nm_batch(fun, x0s, bounds, max_evals):
    """Run independent Nelder-Mead instances in lockstep.

    ``fun`` maps a (k, d) matrix to a (k,) vector and is called once per
    round with all pending candidates stacked; per-instance budgets are
    exact.  Returns (best points (m, d), best values (m,), evals, converged).
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    states = [_NelderMead(x0, bounds, max_evals) for x0 in x0s]

    while True:
        chunks = []
        owners = []
        for s in states:
            pts = s.request()
            if pts:
                chunks.append(np.array(pts))
                owners.append((s, len(pts)))
        if not chunks:
            break
        vals = np.asarray(fun(np.vstack(chunks)), dtype=float)
        off = 0
        for s, k in owners:
            s.receive(list(vals[off : off + k]))
            off += k

    xb = np.array(
        [s.best[0] if s.best[0] is not None else x0s[i] for i, s in enumerate(states)]
    )
    fb = np.array([s.best[1] for s in states])
    ev = np.array([s.evals for s in states])
    cv = np.array([s.converged for s in states])
    return xb, fb, ev, cv


def _n_passes(total, d, constrained):
    """At most three penalty passes, but never so many that a pass cannot
    complete a simplex and move: each pass needs about d+4 evaluations."""
    if not constrained:
        return 1
    return max(1, min(3, total // (d + 4)))


def _split_budget(total, parts):
    fracs = {1: (1.0,), 2: (0.5, 0.5), 3: (0.4, 0.3, 0.3)}[parts]
    out = [max(1, int(total * fr)) for fr in fracs]
    while sum(out) > total and max(out) > 1:
        out[out.index(max(out))] -= 1
    shortfall = total - sum(out)
    if shortfall > 0:
        out[-1] += shortfall
    return out


def _violations(x, inequalities, equalities):
    viol_sq = 0.0
    margin = np.inf
    for g in inequalities:
        v = float(g(x))
        margin = min(margin, v)
        if v < 0.0:
            viol_sq += v * v
    for h in equalities:
        v = abs(float(h(x))) - _EQ_TOL
        margin = min(margin, -v)
        if v > 0.0:
            viol_sq += v * v
    return viol_sq, margin


def minimize(problem: LocalProblem) -> LocalResult:
    """Derivative-free local minimization honoring bounds by projection.

    Inequalities enter through an adaptive quadratic penalty (weights 10,
    100, 1000 over at most three passes within ``max_evals``); equalities are
    relaxed to |h| <= 1e-6.  Deterministic: no randomness is used.  The
    objective is always evaluated before the constraints at a probe point,
    so constraint callables may reuse results the objective caches.
    """
    bounds = np.asarray(problem.bounds, dtype=float).reshape(-1, 2)
    x0 = np.asarray(problem.x0, dtype=float).reshape(-1)
    if x0.size != bounds.shape[0]:
        raise ValueError("x0 dimension does not match bounds")
    if np.any(x0 < bounds[:, 0] - 1e-12) or np.any(x0 > bounds[:, 1] + 1e-12):
        raise ValueError("x0 must lie within bounds")
    if problem.max_evals <= 0:
        raise ValueError("max_evals must be positive")

    constrained = bool(problem.inequalities) or bool(problem.equalities)
    cache_x: list[np.ndarray] = []
    cache_f: list[float] = []
    cache_v: list[float] = []
    current_w = [_PENALTY_WEIGHTS[0]]

    def probe(X):
        out = np.empty(len(X))
        for k, x in enumerate(X):
            fx = float(problem.objective(x))
            if not cache_x and not np.isfinite(fx):
                raise ValueError("objective is non-finite at x0")
            viol_sq, _ = _violations(x, problem.inequalities, problem.equalities)
            cache_x.append(x.copy())
            cache_f.append(fx)
            cache_v.append(viol_sq)
            out[k] = fx + current_w[0] * viol_sq if constrained else fx
        return out

    passes = _n_passes(problem.max_evals, x0.size, constrained)
    budgets = _split_budget(problem.max_evals, passes)
    weights = _PENALTY_WEIGHTS[:passes] if constrained else (0.0,)
    x_start = x0
    converged = False
    for w, b in zip(weights, budgets):
        current_w[0] = w
        _, _, _, cv = _nm_batch(probe, x_start[None, :], bounds, b)
        converged = bool(cv[0])
        merit = np.asarray(cache_f) + w * np.asarray(cache_v)
        x_start = cache_x[int(np.argmin(merit))]

    merit = np.asarray(cache_f) + weights[-1] * np.asarray(cache_v)
    k = int(np.argmin(merit))
    return LocalResult(
        x_star=cache_x[k].copy(),
        f_star=cache_f[k],
        n_evals=len(cache_x),
        converged=converged,
    )


def multistart_maximize(
    acquisition: Callable,
    constraints: Sequence[Callable],
    bounds,
    prev_best,
    n_starts: int = 25,
    per_start_evals: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """Maximize a cheap batched acquisition from LHS starts plus the incumbent.

    ``acquisition`` and each entry of ``constraints`` map a (k, d) matrix to
    a (k,) vector; constraints are feasible iff >= 0.  ``n_starts - 1``
    starting points come from a seeded LHS and one from ``prev_best``.  The
    winner is the evaluated candidate with the greatest acquisition value
    whose predicted constraints are all >= -1e-6; when no evaluated point
    satisfies them, the one with the least summed squared violation is
    returned instead.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    d = bounds.shape[0]
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if per_start_evals is None:
        per_start_evals = min(200 * d, 2000)

    prev = np.clip(np.asarray(prev_best, dtype=float).reshape(-1), bounds[:, 0], bounds[:, 1])
    if n_starts > 1:
        starts = np.vstack([lhs_in_bounds(n_starts - 1, bounds, seed), prev[None, :]])
    else:
        starts = prev[None, :]

    cache_x: list[np.ndarray] = []
    cache_a: list[np.ndarray] = []
    cache_v: list[np.ndarray] = []
    cache_m: list[np.ndarray] = []
    current_w = [_PENALTY_WEIGHTS[0]]
    constrained = bool(constraints)

    def probe(X):
        a = np.asarray(acquisition(X), dtype=float)
        a = np.where(np.isnan(a), -np.inf, a)
        if constrained:
            cons = np.stack([np.asarray(c(X), dtype=float) for c in constraints])
            margin = cons.min(axis=0)
            neg = np.minimum(cons, 0.0)
            viol_sq = np.sum(neg * neg, axis=0)
        else:
            margin = np.full(len(X), np.inf)
            viol_sq = np.zeros(len(X))
        cache_x.append(np.array(X, dtype=float))
        cache_a.append(a)
        cache_v.append(viol_sq)
        cache_m.append(margin)
        merit = -a + current_w[0] * viol_sq
        return np.where(np.isnan(merit), np.inf, merit)

    passes = _n_passes(per_start_evals, d, constrained)
    budgets = _split_budget(per_start_evals, passes)
    weights = _PENALTY_WEIGHTS[:passes] if constrained else (0.0,)
    xs = starts
    for w, b in zip(weights, budgets):
        current_w[0] = w
        xs, _, _, _ = _nm_batch(probe, xs, bounds, b)

    X = np.vstack(cache_x)
    A = np.concatenate(cache_a)
    V = np.concatenate(cache_v)
    M = np.concatenate(cache_m)

    feasible = M >= _FEAS_MARGIN
    if np.any(feasible):
        idx = np.flatnonzero(feasible)
        return X[idx[np.argmax(A[idx])]].copy()
    order = np.lexsort((-A, V))
    return X[order[0]].copy()
