"""Interconnected two-block linear time-varying systems and their cone structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .expr import Call, Expr, breakpoints as expr_breakpoints, free_params, lambdify, parse

BLOCKS = ("A11", "A12", "A21", "A22")


class SystemDefinitionError(ValueError):
    """Invalid system definition (dimensions, bindings)."""


def _as_matrix(entries, rows: int, cols: int, name: str) -> tuple:
    if isinstance(entries, (str, int, float, Expr)):
        entries = [[entries]]
    entries = list(entries)
    if rows == 1 and entries and not isinstance(entries[0], (list, tuple)):
        entries = [entries]
    shape = (len(entries), len(entries[0]) if entries else 0)
    if shape != (rows, cols) or any(len(r) != cols for r in entries):
        got = f"{len(entries)}x{max((len(r) for r in entries), default=0)}"
        raise SystemDefinitionError(f"{name} has shape {got}, expected {rows}x{cols}")
    return tuple(
        tuple(e if isinstance(e, Expr) else parse(e if isinstance(e, str) else float(e))
              for e in row)
        for row in entries
    )


@dataclass(frozen=True)
class ConeSpec:
    """Nonnegative orthant of each component space."""
    kind: str = "orthant"
    a_K: float = 1.0
    b_K: float = 1.0


@dataclass(frozen=True, eq=False)
class InterconnectedSystem:
    """Two coupled LTV blocks ``x_i' = A_ii(t) x_i + A_ij(t) x_j`` on ``[tau, inf)``.

    Blocks are matrices of :class:`~ltvgain.expr.Expr`; ``params`` binds
    every free parameter.  Construct with :meth:`from_blocks` to have
    strings parsed and dimensions checked.
    """
    n1: int
    n2: int
    A11: tuple
    A12: tuple
    A21: tuple
    A22: tuple
    params: Mapping[str, float] = field(default_factory=dict)
    tau: float = 0.0
    cone: ConeSpec = field(default_factory=ConeSpec)

    @classmethod
    def from_blocks(cls, A11, A12, A21, A22, params=None, tau=0.0, n1=None, n2=None):
        if n1 is None:
            n1 = 1 if isinstance(A11, (str, int, float, Expr)) else len(A11)
        if n2 is None:
            n2 = 1 if isinstance(A22, (str, int, float, Expr)) else len(A22)
        if n1 < 1 or n2 < 1:
            raise SystemDefinitionError("dimensions must be positive")
        sys = cls(
            n1=int(n1), n2=int(n2),
            A11=_as_matrix(A11, n1, n1, "A11"),
            A12=_as_matrix(A12, n1, n2, "A12"),
            A21=_as_matrix(A21, n2, n1, "A21"),
            A22=_as_matrix(A22, n2, n2, "A22"),
            params={k: float(v) for k, v in (params or {}).items()},
            tau=float(tau),
        )
        missing = sys.free_params() - set(sys.params)
        if missing:
            raise SystemDefinitionError(f"unbound parameter(s): {', '.join(sorted(missing))}")
        return sys

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def block(self, name: str) -> tuple:
        return getattr(self, name)

    def entries(self):
        for name in BLOCKS:
            for i, row in enumerate(self.block(name)):
                for j, e in enumerate(row):
                    yield name, i, j, e

    def free_params(self) -> set[str]:
        out: set[str] = set()
        for *_, e in self.entries():
            out |= free_params(e)
        return out

    @cached_property
    def _compiled(self) -> dict:
        return {name: [[lambdify(e, self.params) for e in row] for row in self.block(name)]
                for name in BLOCKS}

    def block_at(self, name: str, t: float) -> np.ndarray:
        """Numeric value of one block at a scalar time."""
        return np.array([[f(t) for f in row] for row in self._compiled[name]], dtype=float)

    def block_values(self, name: str, ts) -> np.ndarray:
        """Block values at an array of times, shape ``(len(ts), rows, cols)``."""
        ts = np.asarray(ts, dtype=float)
        rows = self._compiled[name]
        out = np.empty((ts.size, len(rows), len(rows[0])))
        for i, row in enumerate(rows):
            for j, f in enumerate(row):
                out[:, i, j] = np.broadcast_to(f(ts), ts.shape)
        return out

    def block_norms(self, name: str, ts) -> np.ndarray:
        """Spectral norm of a block at each time in ``ts``."""
        vals = self.block_values(name, ts)
        if vals.shape[1] == 1 or vals.shape[2] == 1:
            return np.sqrt(np.sum(vals ** 2, axis=(1, 2)))
        return np.linalg.svd(vals, compute_uv=False)[:, 0]

    def diag_block(self, i: int) -> str:
        return "A11" if i == 1 else "A22"

    @cached_property
    def _full_entries(self) -> list:
        offs = {"A11": (0, 0), "A12": (0, self.n1), "A21": (self.n1, 0),
                "A22": (self.n1, self.n1)}
        out = []
        for name in BLOCKS:
            r0, c0 = offs[name]
            for i, row in enumerate(self._compiled[name]):
                for j, f in enumerate(row):
                    out.append((r0 + i, c0 + j, f))
        return out

    def A(self, t: float) -> np.ndarray:
        """Full system matrix at time ``t``."""
        out = np.empty((self.n, self.n))
        for i, j, f in self._full_entries:
            out[i, j] = f(t)
        return out

    def breakpoints(self, a: float, b: float, blocks: Sequence[str] = BLOCKS) -> list[float]:
        """Discontinuities of any entry of the given blocks in ``[a, b)``."""
        pts: set[float] = set()
        for name in blocks:
            for row in self.block(name):
                for e in row:
                    pts.update(expr_breakpoints(e, a, b, self.params))
        out: list[float] = []
        for x in sorted(pts):
            if not out or x - out[-1] > 1e-12 * max(1.0, abs(x)):
                out.append(x)
        return out

    def scaled_coupling(self, c: float) -> "InterconnectedSystem":
        """Copy with both coupling blocks multiplied by ``c``."""
        from .expr import Binary, Const
        scale = lambda m: tuple(tuple(Binary("*", Const(float(c)), e) for e in row) for row in m)
        return InterconnectedSystem(self.n1, self.n2, self.A11, scale(self.A12),
                                    scale(self.A21), self.A22, dict(self.params),
                                    self.tau, self.cone)

    def with_params(self, **updates) -> "InterconnectedSystem":
        params = dict(self.params)
        params.update({k: float(v) for k, v in updates.items()})
        return InterconnectedSystem(self.n1, self.n2, self.A11, self.A12, self.A21,
                                    self.A22, params, self.tau, self.cone)


def load_system(config: Mapping) -> InterconnectedSystem:
    """Build a system from the ``system`` section of a configuration.

    The section holds ``n1``, ``n2``, the four blocks as (nested lists of)
    expression strings, ``params`` and ``tau``.  With ``"comparison": true``
    the scalar comparison transform is applied.
    """
    section = config.get("system", config)
    sys = InterconnectedSystem.from_blocks(
        section["A11"], section["A12"], section["A21"], section["A22"],
        params=section.get("params", {}), tau=section.get("tau", 0.0),
        n1=section.get("n1"), n2=section.get("n2"),
    )
    if section.get("comparison", False):
        sys = comparison_system(sys)
    return sys


def comparison_system(sys: InterconnectedSystem) -> InterconnectedSystem:
    """Comparison system obtained with ``V_i = |x_i|`` for scalar blocks.

    Couplings are replaced by their absolute values, diagonals are kept.
    """
    if sys.n1 != 1 or sys.n2 != 1:
        raise SystemDefinitionError("the comparison transform needs scalar subsystems")
    absm = lambda m: ((Call("abs", (m[0][0],)),),)
    return InterconnectedSystem(1, 1, sys.A11, absm(sys.A12), absm(sys.A21), sys.A22,
                                dict(sys.params), sys.tau, sys.cone)


# ---------------------------------------------------------------------------
# Wazewski structure
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    t: float
    block: str
    entry: tuple
    value: float


@dataclass
class WazewskiReport:
    metzler_ok_1: bool
    metzler_ok_2: bool
    coupling_nonneg_12: bool
    coupling_nonneg_21: bool
    first_violation: Violation | None
    grid_size: int
    grid_span: tuple

    @property
    def ok(self) -> bool:
        return (self.metzler_ok_1 and self.metzler_ok_2
                and self.coupling_nonneg_12 and self.coupling_nonneg_21)

    def to_dict(self) -> dict:
        v = self.first_violation
        return {
            "ok": self.ok,
            "metzler_ok_1": self.metzler_ok_1,
            "metzler_ok_2": self.metzler_ok_2,
            "coupling_nonneg_12": self.coupling_nonneg_12,
            "coupling_nonneg_21": self.coupling_nonneg_21,
            "first_violation": None if v is None else
            {"t": v.t, "block": v.block, "entry": list(v.entry), "value": v.value},
            "grid": {"size": self.grid_size, "span": list(self.grid_span)},
        }


def analysis_grid(sys: InterconnectedSystem, a: float, b: float, step: float = 0.01) -> np.ndarray:
    """Uniform grid on ``[a, b]`` merged with every breakpoint in the span."""
    n = max(1, int(np.ceil((b - a) / step - 1e-9)))
    grid = np.linspace(a, b, n + 1)
    bps = sys.breakpoints(a, b)
    return np.unique(np.concatenate([grid, bps])) if bps else grid


def check_wazewski(sys: InterconnectedSystem, grid) -> WazewskiReport:
    """Sample the orthant-invariance conditions on ``grid``.

    Diagonal blocks must be Metzler (nonnegative off-diagonal entries) and
    coupling blocks entrywise nonnegative at every grid time.
    """
    grid = np.asarray(grid, dtype=float)
    flags = {}
    first: Violation | None = None
    for name in BLOCKS:
        vals = sys.block_values(name, grid)
        if name in ("A11", "A22"):
            mask = ~np.eye(vals.shape[1], dtype=bool)
            bad = (vals < 0) & mask[None]
        else:
            bad = vals < 0
        flags[name] = not bad.any()
        if bad.any():
            k, i, j = np.argwhere(bad)[0]
            if first is None or grid[k] < first.t:
                first = Violation(float(grid[k]), name, (int(i), int(j)), float(vals[k, i, j]))
    span = (float(grid.min()), float(grid.max())) if grid.size else (np.nan, np.nan)
    return WazewskiReport(flags["A11"], flags["A22"], flags["A12"], flags["A21"],
                          first, int(grid.size), span)


def cone_decompose(x) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` into componentwise positive and negative parts."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0), np.maximum(-x, 0.0)
