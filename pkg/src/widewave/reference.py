"""Independent solutions of the damped wave equation used as oracles.

``solve_mol`` integrates ``w'' = -grad W(w) - grad G(w') + f`` as a first
order system with classical RK4; ``linear_mode_solution`` is the closed
form of a single Fourier mode of the linear problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .source import SourceSpec, zero_source
from .spatial import GSpec, SpatialGrid, WSpec, derivative, eval_G, eval_W, grad_G, grad_W
from .timeweight import TimeGrid, Trajectory, _cumulative

__all__ = [
    "ProblemSpec",
    "InstabilityError",
    "stable_dt",
    "solve_mol",
    "linear_mode_solution",
    "conserved_energy_check",
    "mechanical_energy",
]

_RK4_RADIUS = 2.0  # conservative radius inside the RK4 stability region
_GROWTH_LIMIT = 1e6


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    wspec: WSpec
    gspec: GSpec
    grid: SpatialGrid
    w0: np.ndarray
    w1: np.ndarray
    T_phys: float = 1.0
    source: SourceSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "w0", self.grid.check_field(self.w0))
        object.__setattr__(self, "w1", self.grid.check_field(self.w1))
        if self.source is None:
            object.__setattr__(self, "source", zero_source(self.grid))
        elif self.source.grid.n_x != self.grid.n_x:
            raise ValueError("source lives on a different grid")
        if not 0 < self.T_phys <= 1.5:
            raise ValueError(f"T_phys must lie in (0, 1.5], got {self.T_phys}")


class InstabilityError(RuntimeError):
    pass


def _mode_rates(p: ProblemSpec, ref=None) -> np.ndarray:
    """Characteristic roots of every Fourier mode of the problem linearized at ``ref``."""
    grid, ws = p.grid, p.wspec
    ref = p.w0 if ref is None else ref
    xi = grid.wavenumbers
    stiff = ws.leading * np.where(xi > 0, np.abs(xi) ** (2 * ws.m), 0.0)
    for t in ws.terms:
        if t.lam == 0:
            continue
        amp = float(np.max(np.abs(derivative(ref, t.k, grid))))
        # the curvature of |s|^p near the data's range; p < 2 is capped at 1
        c = 1.0 if t.p == 2 else (max(amp, 1.0) ** (t.p - 2) if t.p > 2 else 1.0)
        stiff = stiff + t.lam * (t.p - 1) * c * xi ** (2 * t.k)
    damp = p.gspec.symbol(grid)
    disc = np.sqrt((damp ** 2 - 4 * stiff).astype(complex))
    return np.concatenate([(-damp + disc) / 2, (-damp - disc) / 2])


def stable_dt(p: ProblemSpec) -> float:
    """Largest RK4 step for which every linearized mode stays in the stability region."""
    rates = np.abs(_mode_rates(p))
    top = float(np.max(rates))
    return _RK4_RADIUS / top if top > 0 else math.inf


def _rhs(p: ProblemSpec, t, w, v, f):
    return v, f(t) - grad_W(w, p.wspec, p.grid) - grad_G(v, p.gspec, p.grid)


def solve_mol(p: ProblemSpec, dt: float | None = None, out: TimeGrid | None = None) -> Trajectory:
    """RK4 method of lines, sampled on ``out`` (default: step 1e-3 up to ``T_phys``).

    Steps never straddle an output node or a source breakpoint, and the
    forcing is sampled strictly inside each step so jumps are resolved.
    """
    bound = stable_dt(p)
    if dt is None:
        dt = min(1e-3, 0.5 * bound)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > bound * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds the RK4 stability bound {bound:g}")
    out = out or TimeGrid.covering(p.T_phys, 1e-3)
    src = p.source
    events = sorted(set(out.nodes.tolist()) |
                    {b for b in src.breakpoints if 0 < b < out.horizon})
    w, v = p.w0.copy(), p.w1.copy()
    W = np.empty((out.size, p.grid.n_x))
    V = np.empty_like(W)
    W[0], V[0] = w, v
    k_out = 1
    size0 = 1.0 + float(np.max(np.abs(w)) + np.max(np.abs(v)))
    for a, b in zip(events[:-1], events[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / n
        lo, hi = a + 1e-12 * (b - a), b - 1e-12 * (b - a)

        def f(t):
            return src(min(max(t, lo), hi))

        try:
            with np.errstate(over="ignore", invalid="ignore"):  # finiteness is checked below
                for j in range(n):
                    t = a + j * h
                    k1w, k1v = _rhs(p, t, w, v, f)
                    k2w, k2v = _rhs(p, t + h / 2, w + h / 2 * k1w, v + h / 2 * k1v, f)
                    k3w, k3v = _rhs(p, t + h / 2, w + h / 2 * k2w, v + h / 2 * k2v, f)
                    k4w, k4v = _rhs(p, t + h, w + h * k3w, v + h * k3v, f)
                    w = w + h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
                    v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        except FloatingPointError as exc:
            raise InstabilityError(f"overflow before t={b:g} (dt={dt:g}, bound {bound:g})") from exc
        size = float(np.max(np.abs(w)) + np.max(np.abs(v)))
        if not math.isfinite(size) or size > _GROWTH_LIMIT * size0:
            raise InstabilityError(
                f"solution grew to {size:.3g} by t={b:g} (dt={dt:g}, bound {bound:g})")
        if k_out < out.size and abs(b - out.nodes[k_out]) <= 1e-9 * out.step:
            W[k_out], V[k_out] = w, v
            k_out += 1
    return Trajectory(p.grid, out, W, V)


def linear_mode_solution(k: int, stiff: float, damp: float, a0: float, a1: float,
                         t, force: float = 0.0):
    """Solution of ``a'' + damp a' + stiff a = force``, ``a(0) = a0``, ``a'(0) = a1``.

    ``k`` only labels the mode.  Written as ``e^{rt}(A C(t) + B S(t))`` with
    ``r = -damp/2``, which covers complex, repeated and distinct real roots
    with one continuous formula.
    """
    if stiff < 0 or damp < 0:
        raise ValueError("stiffness and damping must be nonnegative")
    t = np.asarray(t, dtype=float)
    shift = 0.0
    if force:
        if stiff == 0:
            raise ValueError("constant forcing needs positive stiffness")
        shift = force / stiff
    b0 = a0 - shift
    r = -damp / 2
    mu2 = damp ** 2 / 4 - stiff
    if mu2 > 0:
        mu = math.sqrt(mu2)
        c, s = np.cosh(mu * t), np.sinh(mu * t) / mu
    elif mu2 < 0:
        om = math.sqrt(-mu2)
        c, s = np.cos(om * t), np.sin(om * t) / om
    else:
        c, s = np.ones_like(t), t
    return shift + np.exp(r * t) * (b0 * c + (a1 - r * b0) * s)


def mechanical_energy(traj: Trajectory, p: ProblemSpec) -> np.ndarray:
    """``||w'||^2/2 + W(w)`` per node."""
    vel = _velocity(traj)
    return 0.5 * p.grid.norm_sq(vel) + eval_W(traj.data, p.wspec, p.grid)


def _velocity(traj: Trajectory):
    if traj.velocity is not None:
        return traj.velocity
    return np.gradient(traj.data, traj.time.step, axis=0, edge_order=2)


def conserved_energy_check(traj: Trajectory, p: ProblemSpec) -> np.ndarray:
    """Drift of the dissipation-corrected energy balance per node.

        E(t) + 2 int_0^t G(w') - E(0) - int_0^t (f, w')

    with ``E = ||w'||^2/2 + W(w)``; zero for exact solutions.
    """
    vel = _velocity(traj)
    g = p.grid
    dt = traj.time.step
    energy = mechanical_energy(traj, p)
    diss = _cumulative(eval_G(vel, p.gspec, g), dt)
    # one-sided source limits inside each cell, so jumps at nodes cost nothing
    f_right, f_left = p.source.cell_limits(traj.nodes)
    cells = g.inner(f_right, vel[:-1]) + g.inner(f_left, vel[1:])
    work = np.concatenate([[0.0], np.cumsum(0.5 * dt * cells)])
    return energy + 2 * diss - energy[0] - work
