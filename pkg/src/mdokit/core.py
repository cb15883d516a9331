"""Problem abstraction, budget accounting, and the shared consistency metrics."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class BudgetExhausted(RuntimeError):
    """Raised when a discipline evaluation is requested past the ledger limit."""


def as_vector(x) -> np.ndarray:
    """Coerce to a 1-D float array; scalars become length-1 vectors."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit child seed from an integer key path.

    Built on numpy's SeedSequence so the same keys give the same seed on
    every platform.
    """
    return int(np.random.SeedSequence(list(keys)).generate_state(1, dtype=np.uint64)[0])


def derive_rng(*keys: int) -> np.random.Generator:
    """PCG64 generator seeded from an integer key path (see ``derive_seed``)."""
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


class Vov:
    """Vector-of-vectors: per-discipline blocks with preserved boundaries.

    Blocks are fixed at construction; all accessors return views or new
    ``Vov`` instances, never mutate.
    """

    __slots__ = ("_blocks",)

    def __init__(self, blocks: Sequence) -> None:
        self._blocks = tuple(as_vector(b) for b in blocks)

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return self._blocks

    @property
    def n_blocks(self) -> int:
        return len(self._blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.size for b in self._blocks)

    def __len__(self) -> int:
        return sum(b.size for b in self._blocks)

    def block(self, i: int) -> np.ndarray:
        """Zero-based block access."""
        return self._blocks[i]

    def concat(self) -> np.ndarray:
        """Flatten to one vector, block order preserved."""
        if not self._blocks:
            return np.empty(0)
        return np.concatenate(self._blocks)

    def drop(self, i: int) -> "Vov":
        """All blocks except zero-based block ``i``, order preserved."""
        if not 0 <= i < len(self._blocks):
            raise IndexError(f"block index {i} out of range for {len(self._blocks)} blocks")
        return Vov([b for k, b in enumerate(self._blocks) if k != i])

    @staticmethod
    def from_concat(flat, sizes: Sequence[int]) -> "Vov":
        """Rebuild a Vov from a flat vector and its block sizes."""
        flat = as_vector(flat)
        if flat.size != sum(sizes):
            raise ValueError(f"flat length {flat.size} does not match block sizes {tuple(sizes)}")
        blocks, off = [], 0
        for s in sizes:
            blocks.append(flat[off : off + s].copy())
            off += s
        return Vov(blocks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vov):
            return NotImplemented
        return self.sizes == other.sizes and all(
            np.array_equal(a, b) for a, b in zip(self._blocks, other._blocks)
        )

    def __repr__(self) -> str:
        return f"Vov({[b.tolist() for b in self._blocks]})"


def vov_exclude(v: Vov, block: int) -> Vov:
    """All blocks of ``v`` except block ``block``, order preserved.

    Block numbers are 1-based, matching the usual discipline numbering.
    """
    if not 1 <= block <= v.n_blocks:
        raise IndexError(f"block {block} out of range 1..{v.n_blocks}")
    return v.drop(block - 1)


@dataclass
class DesignPoint:
    """A system-level iterate plus per-discipline copies of the shared variables.

    ``z_sys``/``x_sys``/``y_sys`` are the coordinator's targets; ``z_sub[i]``
    and ``x_sub[i]`` are discipline ``i``'s copies of the shared and local
    design variables.
    """

    z_sys: np.ndarray
    x_sys: Vov
    y_sys: Vov
    z_sub: list[np.ndarray]
    x_sub: list[np.ndarray]

    def __post_init__(self) -> None:
        self.z_sys = as_vector(self.z_sys)
        self.z_sub = [as_vector(z) for z in self.z_sub]
        self.x_sub = [as_vector(x) for x in self.x_sub]
        if len(self.z_sub) != len(self.x_sub):
            raise ValueError("z_sub and x_sub must have one entry per discipline")
        for i, z in enumerate(self.z_sub):
            if z.size != self.z_sys.size:
                raise ValueError(f"z_sub[{i}] has size {z.size}, expected {self.z_sys.size}")
        for i, x in enumerate(self.x_sub):
            if x.size != self.x_sys.block(i).size:
                raise ValueError(f"x_sub[{i}] has size {x.size}, expected {self.x_sys.block(i).size}")

    @property
    def n_disciplines(self) -> int:
        return len(self.z_sub)

    def copy(self) -> "DesignPoint":
        return DesignPoint(
            z_sys=self.z_sys.copy(),
            x_sys=Vov([b.copy() for b in self.x_sys.blocks]),
            y_sys=Vov([b.copy() for b in self.y_sys.blocks]),
            z_sub=[z.copy() for z in self.z_sub],
            x_sub=[x.copy() for x in self.x_sub],
        )


@dataclass
class MdoProblem:
    """A decomposed design problem with per-discipline black-box analyses.

    The coordinator-side maps ``objective`` and ``constraints`` are cheap;
    each entry of ``disciplines`` is the expensive black-box and must only
    ever be invoked through :func:`eval_discipline` so the ledger stays
    exact.  ``local_constraints[i]`` shares the discipline's input signature
    and is treated as cheap (it may reuse analysis outputs internally).

    Callable signatures::

        objective(z, x: Vov, y: Vov) -> float
        constraints(z, x: Vov, y: Vov) -> 1-D array   (feasible iff >= 0)
        disciplines[i](y_others, z_i, x_i) -> 1-D array
        local_constraints[i](y_others, z_i, x_i) -> 1-D array  (feasible iff >= 0)
    """

    n_disciplines: int
    dim_z: int
    dims_x: tuple[int, ...]
    dims_y: tuple[int, ...]
    z_bounds: np.ndarray
    x_bounds: list[np.ndarray]
    y_bounds: list[np.ndarray]
    objective: Callable
    disciplines: Sequence[Callable]
    local_constraints: Sequence[Callable]
    constraints: Optional[Callable] = None

    def __post_init__(self) -> None:
        n = self.n_disciplines
        if n <= 0:
            raise ValueError("need at least one discipline")
        if not (len(self.dims_x) == len(self.dims_y) == n):
            raise ValueError("dims_x and dims_y must have one entry per discipline")
        if len(self.disciplines) != n or len(self.local_constraints) != n:
            raise ValueError("disciplines and local_constraints must have one entry per discipline")
        self.z_bounds = np.asarray(self.z_bounds, dtype=float).reshape(self.dim_z, 2)
        self.x_bounds = [
            np.asarray(b, dtype=float).reshape(self.dims_x[i], 2) for i, b in enumerate(self.x_bounds)
        ]
        self.y_bounds = [
            np.asarray(b, dtype=float).reshape(self.dims_y[i], 2) for i, b in enumerate(self.y_bounds)
        ]

    def dim_y_others(self, i: int) -> int:
        return sum(self.dims_y) - self.dims_y[i]

    def y_others(self, y: Vov, i: int) -> np.ndarray:
        """Coupling inputs seen by discipline ``i``: all blocks of ``y`` but its own."""
        return vov_exclude(y, i + 1).concat()

    def eval_constraints(self, z, x: Vov, y: Vov) -> np.ndarray:
        """System constraint values; empty array when the problem has none."""
        if self.constraints is None:
            return np.empty(0)
        return as_vector(self.constraints(z, x, y))

    def random_point(self, seed: int) -> DesignPoint:
        """Uniform random in-bounds iterate; copies start equal to the targets."""
        rng = derive_rng(seed, 0)

        def draw(bounds):
            return rng.uniform(bounds[:, 0], bounds[:, 1])

        z = draw(self.z_bounds)
        x = Vov([draw(b) for b in self.x_bounds])
        y = Vov([draw(b) for b in self.y_bounds])
        return DesignPoint(
            z_sys=z,
            x_sys=x,
            y_sys=y,
            z_sub=[z.copy() for _ in range(self.n_disciplines)],
            x_sub=[blk.copy() for blk in x.blocks],
        )


class BudgetLedger:
    """Counts true discipline evaluations against a hard limit.

    The increment-and-check in :meth:`charge` is a single locked action so
    concurrent subsystem evaluations cannot overrun the limit.
    """

    def __init__(self, limit: int, n_disciplines: int) -> None:
        if limit < 0:
            raise ValueError("limit must be non-negative")
        self.limit = int(limit)
        self.per_discipline = np.zeros(n_disciplines, dtype=np.int64)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    @property
    def remaining(self) -> int:
        return self.limit - self._count

    def charge(self, i: int) -> None:
        with self._lock:
            if self._count >= self.limit:
                raise BudgetExhausted(f"evaluation budget of {self.limit} exhausted")
            self.per_discipline[i] += 1
            self._count += 1

    def __repr__(self) -> str:
        return f"BudgetLedger(count={self._count}, limit={self.limit})"


def eval_discipline(problem: MdoProblem, ledger: BudgetLedger, i: int, y_others, z_i, x_i) -> np.ndarray:
    """Run discipline ``i`` once and charge exactly one unit to the ledger.

    This is the only sanctioned entry point to the expensive black-boxes;
    every call costs one ledger unit, charged before the analysis runs.
    """
    y_others = as_vector(y_others)
    z_i = as_vector(z_i)
    x_i = as_vector(x_i)
    if y_others.size != problem.dim_y_others(i):
        raise ValueError(f"y_others has size {y_others.size}, expected {problem.dim_y_others(i)}")
    if z_i.size != problem.dim_z:
        raise ValueError(f"z_i has size {z_i.size}, expected {problem.dim_z}")
    if x_i.size != problem.dims_x[i]:
        raise ValueError(f"x_i has size {x_i.size}, expected {problem.dims_x[i]}")
    ledger.charge(i)
    out = as_vector(problem.disciplines[i](y_others, z_i, x_i))
    if out.size != problem.dims_y[i]:
        raise ValueError(f"discipline {i} returned size {out.size}, expected {problem.dims_y[i]}")
    return out


def discrepancy(z_sys, x_sys_i, y_sys_i, z_i, x_i, y_value) -> float:
    """Squared-norm mismatch between system targets and one discipline's reply.

    ``y_value`` is the already-evaluated discipline output; the caller owns
    the black-box call so budget accounting stays explicit.
    """
    z_sys, z_i = as_vector(z_sys), as_vector(z_i)
    x_sys_i, x_i = as_vector(x_sys_i), as_vector(x_i)
    y_sys_i, y_value = as_vector(y_sys_i), as_vector(y_value)
    if z_sys.size != z_i.size:
        raise ValueError("z dimension mismatch")
    if x_sys_i.size != x_i.size:
        raise ValueError("x dimension mismatch")
    if y_sys_i.size != y_value.size:
        raise ValueError("y dimension mismatch")
    dz = z_sys - z_i
    dx = x_sys_i - x_i
    dy = y_sys_i - y_value
    return float(dz @ dz + dx @ dx + dy @ dy)


def total_discrepancy(point: DesignPoint, y_values: Sequence) -> float:
    """Sum of per-discipline discrepancies; zero only at a fully compatible point."""
    if len(y_values) != point.n_disciplines:
        raise ValueError("need one discipline output per discipline")
    return sum(
        discrepancy(
            point.z_sys,
            point.x_sys.block(i),
            point.y_sys.block(i),
            point.z_sub[i],
            point.x_sub[i],
            y_values[i],
        )
        for i in range(point.n_disciplines)
    )


def total_violation(g_values: Sequence, c_value=None) -> float:
    """Summed squared constraint violations across both levels.

    Zero iff every component of every ``g_values[i]`` and of ``c_value`` is
    non-negative.
    """
    tot = 0.0
    for g in g_values:
        v = np.minimum(as_vector(g), 0.0)
        tot += float(v @ v)
    if c_value is not None:
        c = as_vector(c_value)
        if c.size:
            v = np.minimum(c, 0.0)
            tot += float(v @ v)
    return tot


@dataclass
class TraceRecord:
    """One accepted-best update, stamped with the ledger count at acceptance."""

    eval_count: int
    f: float
    htot: float
    jtot: float


@dataclass
class ConvergenceTrace:
    """Accepted-best history keyed by true-evaluation count."""

    records: list[TraceRecord] = field(default_factory=list)

    def append(self, eval_count: int, f: float, htot: float, jtot: float) -> None:
        if self.records and eval_count <= self.records[-1].eval_count:
            raise ValueError("eval_count must be strictly increasing")
        self.records.append(TraceRecord(int(eval_count), float(f), float(htot), float(jtot)))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final(self) -> TraceRecord:
        if not self.records:
            raise ValueError("empty trace")
        return self.records[-1]


@dataclass
class BestSolution:
    """An accepted iterate together with the metrics that won it acceptance."""

    point: DesignPoint
    f: float
    htot: float
    jtot: float
    eval_index: int


def update_best(
    current: Optional[BestSolution], candidate: BestSolution, tol: float = 1e-12
) -> BestSolution:
    """Hierarchical acceptance: feasibility first, then compatibility, then objective.

    The candidate wins iff it improves ``htot`` by more than ``tol``, or ties
    ``htot`` and improves ``jtot``, or ties both and improves ``f``.
    """
    if current is None:
        return candidate
    if candidate.htot < current.htot - tol:
        return candidate
    if abs(candidate.htot - current.htot) <= tol:
        if candidate.jtot < current.jtot - tol:
            return candidate
        if abs(candidate.jtot - current.jtot) <= tol and candidate.f < current.f - tol:
            return candidate
    return current
