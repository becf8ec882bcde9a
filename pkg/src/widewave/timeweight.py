"""Weighted-in-time calculus on a uniform grid in rescaled time.

The exponential averages

    A h(t)   = int_t^T e^{-(s-t)} h(s) ds
    A^2 h(t) = int_t^T e^{-(s-t)} (s-t) h(s) ds

are evaluated by product quadrature: on every cell the kernel is integrated
exactly against a local cubic interpolant of ``h`` (four surrounding nodes,
one-sided in the first and last cell).  Both operators are then a single
O(n_t) backward recurrence.  Beyond the horizon ``T`` everything is taken
to be zero, so values are only trustworthy at least ``TAIL`` rescaled time
units before ``T`` (relative truncation error ``e^{-15} < 4e-7``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_simpson
from scipy.signal import lfilter

from .spatial import SpatialGrid

__all__ = [
    "TAIL",
    "TimeGrid",
    "Trajectory",
    "exp_weights",
    "avg_A",
    "avg_A2",
    "weighted_l2_sq",
    "d1_matrix",
    "d2_matrix",
    "time_derivative",
    "tail_safe",
    "poincare_check",
    "PoincareMargins",
    "gronwall_check",
]

TAIL = 15.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1)
_GL_W = 0.5 * _GL_W

_OFFSETS = {
    "first": (0.0, 1.0, 2.0, 3.0),
    "interior": (-1.0, 0.0, 1.0, 2.0),
    "last": (-2.0, -1.0, 0.0, 1.0),
}


@dataclass(frozen=True)
class TimeGrid:
    """Nodes ``t_i = i * step`` for ``i = 0 .. n_t``."""

    n_t: int
    step: float

    def __post_init__(self):
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise ValueError(f"n_t must be a positive integer, got {self.n_t}")
        if not (np.isfinite(self.step) and self.step > 0):
            raise ValueError(f"step must be positive, got {self.step}")

    @property
    def horizon(self) -> float:
        return self.n_t * self.step

    @property
    def size(self) -> int:
        return self.n_t + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.step

    def require_tail(self):
        if self.horizon < TAIL:
            raise ValueError(
                f"horizon {self.horizon:g} shorter than the {TAIL:g}-unit tail rule")

    @classmethod
    def covering(cls, horizon: float, step: float) -> "TimeGrid":
        """Smallest grid with the given step reaching at least ``horizon``."""
        return cls(int(np.ceil(horizon / step - 1e-9)), step)


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed sequence of fields, ``data[i]`` sampled at ``time.nodes[i]``.

    ``velocity`` is optional and only filled by integrators that carry it.
    """

    grid: SpatialGrid
    time: TimeGrid
    data: np.ndarray
    velocity: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.time.size, self.grid.n_x):
            raise ValueError(
                f"data shape {data.shape} does not match "
                f"({self.time.size}, {self.grid.n_x})")
        if not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite trajectory data")
        object.__setattr__(self, "data", data)
        if self.velocity is not None:
            vel = np.asarray(self.velocity, dtype=float)
            if vel.shape != data.shape:
                raise ValueError("velocity shape does not match data")
            object.__setattr__(self, "velocity", vel)

    @property
    def nodes(self):
        return self.time.nodes

    def at(self, t):
        """Linear interpolation in time at the times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = t / self.time.step
        lo = np.clip(np.floor(idx).astype(int), 0, self.time.n_t - 1)
        frac = (idx - lo)[:, None]
        return (1 - frac) * self.data[lo] + frac * self.data[lo + 1]


def _lagrange(offsets, x):
    out = []
    for q, oq in enumerate(offsets):
        val = np.ones_like(x)
        for j, oj in enumerate(offsets):
            if j != q:
                val = val * (x - oj) / (oq - oj)
        out.append(val)
    return np.array(out)


def _cell_weights(step, kind):
    """Weights of ``int_0^step e^{-r} g``, ``int_0^step r e^{-r} g`` on the cell stencil."""
    basis = _lagrange(_OFFSETS[kind], _GL_X)
    r = step * _GL_X
    kern = step * _GL_W * np.exp(-r)
    return basis @ kern, basis @ (kern * r)


def _linear_cell_weights(step):
    """As :func:`_cell_weights` for the linear interpolant on the cell (all weights positive)."""
    basis = _lagrange((0.0, 1.0), _GL_X)
    r = step * _GL_X
    kern = step * _GL_W * np.exp(-r)
    return basis @ kern, basis @ (kern * r)


def _stencils(n):
    """Stencil start index and kind for the cells ``0 .. n-1`` of an (n+1)-node grid."""
    if n < 3:
        raise ValueError("at least 4 time nodes are required")
    starts = np.arange(n) - 1
    starts[0] = 0
    starts[-1] = n - 3
    return starts


def _cell_sums(h, step, which, kind="cubic"):
    n = h.shape[0] - 1
    _stencils(n)
    if kind == "linear":
        w = _linear_cell_weights(step)[which]
        return w[0] * h[:-1] + w[1] * h[1:]
    if kind != "cubic":
        raise ValueError(f"unknown quadrature kind {kind!r}")
    out = np.empty((n,) + h.shape[1:])
    w = {k: _cell_weights(step, k)[which] for k in _OFFSETS}
    out[0] = np.tensordot(w["first"], h[0:4], axes=1)
    out[-1] = np.tensordot(w["last"], h[n - 3:n + 1], axes=1)
    if n > 2:
        wi = w["interior"]
        out[1:n - 1] = (wi[0] * h[0:n - 2] + wi[1] * h[1:n - 1]
                        + wi[2] * h[2:n] + wi[3] * h[3:n + 1])
    return out


def _backward(cells, decay):
    rev = lfilter([1.0], [1.0, -decay], cells[::-1], axis=0)[::-1]
    return np.concatenate([rev, np.zeros((1,) + cells.shape[1:])], axis=0)


def avg_A(h, time: TimeGrid, kind: str = "cubic"):
    """``A h`` at every node; ``h`` has the time axis first.

    ``kind="cubic"`` integrates the exponential exactly against a local cubic
    interpolant of ``h`` (fourth order); ``kind="linear"`` uses the linear
    interpolant (second order, but ``h >= 0`` implies ``A h >= 0`` exactly).
    """
    h = np.asarray(h, dtype=float)
    if h.shape[0] != time.size:
        raise ValueError("series length does not match the time grid")
    return _backward(_cell_sums(h, time.step, 0, kind), np.exp(-time.step))


def avg_A2(h, time: TimeGrid, kind: str = "cubic"):
    """``A^2 h`` from its kernel ``(s - t) e^{-(s-t)}``, not by iterating ``A``."""
    h = np.asarray(h, dtype=float)
    if h.shape[0] != time.size:
        raise ValueError("series length does not match the time grid")
    decay = np.exp(-time.step)
    a = avg_A(h, time, kind)
    cells = _cell_sums(h, time.step, 1, kind) + decay * time.step * a[1:]
    return _backward(cells, decay)


def exp_weights(time: TimeGrid, kind: str = "cubic") -> np.ndarray:
    """Node weights ``q_i`` with ``sum_i q_i g_i ~ int_0^T e^{-t} g(t) dt``.

    ``kind="cubic"`` gives exactly the weights of ``g -> (A g)(0)``;
    ``kind="linear"`` integrates ``e^{-t}`` exactly against the piecewise
    linear interpolant (all weights positive).
    """
    n = time.n_t
    if kind == "linear":
        h = time.step
        decay = math.exp(-h)
        left = 1 - (-math.expm1(-h)) / h      # int_0^h (1 - r/h) e^{-r} dr
        right = (-math.expm1(-h)) / h - decay  # int_0^h (r/h) e^{-r} dr
        scale = np.exp(-time.nodes[:-1])
        weights = np.zeros(n + 1)
        weights[:-1] += left * scale
        weights[1:] += right * scale
        return weights
    if kind != "cubic":
        raise ValueError(f"unknown weight kind {kind!r}")
    starts = _stencils(n)
    weights = np.zeros(n + 1)
    scale = np.exp(-time.nodes[:-1])
    for kind, cells in (("first", [0]), ("last", [n - 1]),
                        ("interior", range(1, n - 1))):
        cells = np.asarray(list(cells), dtype=int)
        if cells.size == 0:
            continue
        a = _cell_weights(time.step, kind)[0]
        for q in range(4):
            np.add.at(weights, starts[cells] + q, scale[cells] * a[q])
    return weights


def weighted_l2_sq(traj: Trajectory) -> float:
    """``int_0^T e^{-t} ||v(t)||^2 dt``; the tail beyond ``T`` counts as zero.

    The piecewise linear interpolant of ``||v(t)||^2`` is integrated exactly.
    """
    traj.time.require_tail()
    return float(exp_weights(traj.time, "linear") @ traj.grid.norm_sq(traj.data))


def _assemble(n, rows, cols, vals):
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))


def d1_matrix(time: TimeGrid, start: str = "second") -> sp.csr_matrix:
    """First-difference operator: central inside, one-sided second order at the ends.

    ``start="forward"`` replaces row 0 with ``(u_1 - u_0) / step``;
    ``start="ghost"`` leaves row 0 empty (the value there is prescribed data).
    """
    n, h = time.n_t, time.step
    if n < 3:
        raise ValueError("at least 4 time nodes are required")
    inner = np.arange(1, n)
    rows = [inner, inner, [n, n, n]]
    cols = [inner - 1, inner + 1, [n, n - 1, n - 2]]
    vals = [np.full(n - 1, -0.5 / h), np.full(n - 1, 0.5 / h), [1.5 / h, -2 / h, 0.5 / h]]
    if start == "forward":
        rows.append([0, 0]); cols.append([0, 1]); vals.append([-1 / h, 1 / h])
    elif start == "second":
        rows.append([0, 0, 0]); cols.append([0, 1, 2]); vals.append([-1.5 / h, 2 / h, -0.5 / h])
    elif start != "ghost":
        raise ValueError(f"unknown start stencil {start!r}")
    return _assemble(n, *(np.concatenate([np.asarray(a, dtype=float) for a in x])
                          for x in (rows, cols, vals)))


def d2_matrix(time: TimeGrid, start: str = "onesided") -> sp.csr_matrix:
    """Second differences: central inside, 4-point one-sided at the last node.

    Row 0 is one-sided as well for ``start="onesided"``.  With
    ``start="ghost"`` it is the central difference through the mirror node
    ``u_{-1} = u_1 - 2 step v0``, i.e. ``2 (u_1 - u_0) / step^2``; the
    remaining ``-2 v0 / step`` depends on the data and is added by the caller.
    """
    n, h2 = time.n_t, time.step ** 2
    if n < 3:
        raise ValueError("at least 4 time nodes are required")
    inner = np.arange(1, n)
    ends = np.array([2.0, -5.0, 4.0, -1.0]) / h2
    if start == "onesided":
        r0, c0, v0 = np.zeros(4), np.arange(4), ends
    elif start == "ghost":
        r0, c0, v0 = np.zeros(2), np.arange(2), np.array([-2.0, 2.0]) / h2
    else:
        raise ValueError(f"unknown start stencil {start!r}")
    rows = np.concatenate([inner, inner, inner, r0, np.full(4, n)])
    cols = np.concatenate([inner - 1, inner, inner + 1, c0, n - np.arange(4)])
    vals = np.concatenate([np.full(n - 1, 1 / h2), np.full(n - 1, -2 / h2),
                           np.full(n - 1, 1 / h2), v0, ends])
    return _assemble(n, rows, cols, vals)


def time_derivative(data, time: TimeGrid, order: int = 1, start: str = "second"):
    if order == 1:
        return d1_matrix(time, start) @ data
    if order == 2:
        return d2_matrix(time) @ data
    raise ValueError("order must be 1 or 2")


def tail_safe(time: TimeGrid, margin: float = TAIL) -> np.ndarray:
    """Boolean mask of nodes at least ``margin`` before the horizon."""
    return time.nodes <= time.horizon - margin + 1e-9 * time.step


class PoincareMargins(NamedTuple):
    margin1: float
    margin2: float
    scale1: float
    scale2: float

    def passed(self, tol: float = 1e-8) -> bool:
        return self.margin1 >= -tol * self.scale1 and self.margin2 >= -tol * self.scale2


def poincare_check(u: Trajectory) -> PoincareMargins:
    """Margins of the two weighted Poincare inequalities on a trajectory.

    margin1 = 2||u'(0)||^2 + 4||u''||_L^2 - ||u'||_L^2
    margin2 = 2||u(0)||^2 + 8||u'(0)||^2 + 16||u''||_L^2 - ||u||_L^2
    """
    if u.time.size < 4:
        raise ValueError("at least 4 time nodes are required")
    u.time.require_tail()
    q = exp_weights(u.time)
    norm = u.grid.norm_sq
    du = time_derivative(u.data, u.time, 1)
    ddu = time_derivative(u.data, u.time, 2)
    l_u, l_du, l_ddu = q @ norm(u.data), q @ norm(du), q @ norm(ddu)
    n_u0, n_du0 = norm(u.data[0]), norm(du[0])
    pos1 = 2 * n_du0 + 4 * l_ddu
    pos2 = 2 * n_u0 + 8 * n_du0 + 16 * l_ddu
    return PoincareMargins(float(pos1 - l_du), float(pos2 - l_u),
                           float(max(pos1, l_du)), float(max(pos2, l_u)))


def _cumulative(y, step):
    y = np.asarray(y, dtype=float)
    if y.size < 3:
        return np.concatenate([[0.0], np.cumsum(0.5 * step * (y[1:] + y[:-1]))])
    return cumulative_simpson(y, dx=step, initial=0.0)


def gronwall_check(u, v, c, time: TimeGrid, tol: float = 1e-10):
    """Conclusion margin ``c(t) + int_a^t v - sqrt(u(t))`` of the Gronwall-type lemma.

    Raises ``ValueError`` when the inputs violate the lemma's hypotheses:
    ``c`` positive and nondecreasing, ``u, v >= 0`` and
    ``u(t) <= c(t)^2 + 2 int_a^t v sqrt(u)``.
    """
    u, v, c = (np.asarray(a, dtype=float) for a in (u, v, c))
    if not (u.shape == v.shape == c.shape == (time.size,)):
        raise ValueError("u, v, c must be series on the time grid")
    scale = 1.0 + float(np.max(np.abs(c))) ** 2 + float(np.max(u))
    if np.any(c <= 0) or np.any(np.diff(c) < -tol * scale):
        raise ValueError("c must be positive and nondecreasing")
    if np.any(u < 0) or np.any(v < 0):
        raise ValueError("u and v must be nonnegative")
    bound = c ** 2 + 2 * _cumulative(v * np.sqrt(u), time.step)
    if np.any(u > bound + tol * scale):
        worst = int(np.argmax(u - bound))
        raise ValueError(f"hypothesis violated at t={time.nodes[worst]:g}")
    return c + _cumulative(v, time.step) - np.sqrt(u)
