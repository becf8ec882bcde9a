"""The discrete weighted space-time functional in rescaled time.

For a trajectory ``U`` on the nodes ``t_i`` the functional is

    J(U) = sum_i q_i [ ||D2 U_i||^2 / (2 eps^2) + W(U_i) + G(D1 U_i) / eps - (phi_i, U_i) ]

with ``q_i`` the weights of ``e^{-t}`` against the piecewise linear
interpolant and ``D1``, ``D2`` central differences (4-point one-sided at the
horizon).  Node 0 carries ``w0``; the initial velocity enters through a
mirror node behind ``t = 0`` (see :class:`Constraints`).

Gradients are returned as fields in the grid inner product: the directional
derivative of ``J`` along ``dU`` is ``sum_i (g_i, dU_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import trapezoid

from .source import ApproxSource
from .spatial import GSpec, SpatialGrid, WSpec, eval_G, eval_W, grad_G, grad_W
from .timeweight import (TimeGrid, Trajectory, avg_A, avg_A2, d1_matrix, d2_matrix,
                         exp_weights, tail_safe, time_derivative)

__all__ = [
    "Constraints",
    "DiscreteFunctional",
    "apply_initial_constraints",
    "make_functional",
    "eval_J",
    "grad_J",
    "J_parts",
    "el_residual",
    "weak_residual",
    "rescale",
    "rescale_inverse",
    "eval_F_physical",
    "competitor",
]


@dataclass(frozen=True)
class Constraints:
    """How the initial data enter the discrete problem.

    ``kind="ghost"`` fixes ``U_0 = w0`` and imposes ``u'(0) = eps*w1``
    through the mirror node ``U_{-1} = U_1 - 2*step*eps*w1`` in the
    difference operators; every node from 1 on is free (second order).
    ``kind="forward"`` fixes ``U_1 = w0 + step*eps*w1`` as well and uses
    one-sided differences at ``t = 0`` (first order).
    """

    w0: np.ndarray
    w1: np.ndarray
    eps: float
    step: float
    kind: str = "ghost"

    def __post_init__(self):
        if self.kind not in ("ghost", "forward"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if not np.all(np.isfinite(self.step * self.eps * np.asarray(self.w1))):
            raise ValueError("non-finite initial velocity")

    @property
    def first_free(self) -> int:
        return 1 if self.kind == "ghost" else 2

    @property
    def velocity0(self) -> np.ndarray:
        """``u'(0)`` in rescaled time."""
        return self.eps * self.w1

    def apply(self, data) -> np.ndarray:
        out = np.array(data, dtype=float)
        out[0] = self.w0
        if self.kind == "forward":
            out[1] = self.w0 + self.step * self.velocity0
        return out

    def project(self, g) -> np.ndarray:
        """Gradient with respect to the free nodes, zero on the fixed ones."""
        out = np.array(g, dtype=float)
        out[:self.first_free] = 0.0
        return out

    def residual(self, data) -> float:
        """Largest violation of the fixed-node conditions (zero after :meth:`apply`)."""
        data = np.asarray(data)
        res = np.max(np.abs(data[0] - self.w0))
        if self.kind == "forward":
            du0 = (data[1] - data[0]) / self.step
            res = max(res, np.max(np.abs(du0 - self.velocity0)) * self.step)
        return float(res)


def apply_initial_constraints(w0, w1, eps: float, time: TimeGrid,
                              kind: str = "ghost") -> Constraints:
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    if w0.shape != w1.shape or w0.ndim != 1:
        raise ValueError("w0 and w1 must be fields on the same grid")
    return Constraints(w0, w1, float(eps), time.step, kind)


@dataclass(frozen=True, eq=False)
class DiscreteFunctional:
    eps: float
    wspec: WSpec
    gspec: GSpec
    grid: SpatialGrid
    time: TimeGrid
    constraints: Constraints
    phi: np.ndarray
    source: ApproxSource | None = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.time.size < 4:
            raise ValueError("at least 4 time nodes are required")
        self.time.require_tail()
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != (self.time.size, self.grid.n_x):
            raise ValueError("phi must be sampled on every time node")
        object.__setattr__(self, "phi", phi)

    @property
    def w0(self):
        return self.constraints.w0

    @property
    def w1(self):
        return self.constraints.w1

    @cached_property
    def weights(self) -> np.ndarray:
        return exp_weights(self.time, "linear")

    @cached_property
    def D1(self):
        return d1_matrix(self.time, "ghost" if self.constraints.kind == "ghost" else "forward")

    @cached_property
    def D2(self):
        return d2_matrix(self.time, "ghost" if self.constraints.kind == "ghost" else "onesided")

    def d1(self, U) -> np.ndarray:
        """``u'`` at every node, initial velocity included."""
        out = self.D1 @ U
        if self.constraints.kind == "ghost":
            out[0] += self.constraints.velocity0
        return out

    def d2(self, U) -> np.ndarray:
        """``u''`` at every node, initial velocity included."""
        out = self.D2 @ U
        if self.constraints.kind == "ghost":
            out[0] -= 2 * self.constraints.velocity0 / self.time.step
        return out

    def trajectory(self, data, with_velocity: bool = False) -> Trajectory:
        data = np.asarray(data, dtype=float)
        return Trajectory(self.grid, self.time, data,
                          self.d1(data) if with_velocity else None)


def make_functional(eps, wspec, gspec, grid, time, w0, w1, source=None,
                    constraint="ghost") -> DiscreteFunctional:
    """Assemble ``J`` for one ``eps``; ``source`` is an :class:`ApproxSource` or ``None``."""
    if source is not None and abs(source.eps - eps) > 1e-15:
        raise ValueError("source was built for a different eps")
    cons = apply_initial_constraints(grid.check_field(w0), grid.check_field(w1),
                                     eps, time, constraint)
    if source is None:
        phi = np.zeros((time.size, grid.n_x))
    else:
        phi = source.phi_nodes(time)
    return DiscreteFunctional(eps, wspec, gspec, grid, time, cons, phi, source)


def _data(u, F: DiscreteFunctional) -> np.ndarray:
    data = u.data if isinstance(u, Trajectory) else np.asarray(u, dtype=float)
    if data.shape != (F.time.size, F.grid.n_x):
        raise ValueError("trajectory does not match the functional's grids")
    return data


def _check_constraints(data, F, rtol=1e-12):
    scale = 1.0 + np.max(np.abs(F.w0)) + np.max(np.abs(F.w1))
    if F.constraints.residual(data) > rtol * scale:
        raise ValueError("trajectory violates the initial constraints")


def J_parts(u, F: DiscreteFunctional) -> dict:
    """Inertia, potential, dissipation and source contributions of ``J``."""
    U = _data(u, F)
    _check_constraints(U, F)
    q, g = F.weights, F.grid
    inertia = q @ g.norm_sq(F.d2(U)) / (2 * F.eps ** 2)
    potential = q @ eval_W(U, F.wspec, g)
    dissipation = q @ eval_G(F.d1(U), F.gspec, g) / F.eps
    source = q @ g.inner(F.phi, U)
    return {"inertia": float(inertia), "potential": float(potential),
            "dissipation": float(dissipation), "source": float(source)}


def value_and_scale(U, F: DiscreteFunctional) -> tuple[float, float]:
    """``J(U)`` and the sum of absolute contributions (a roundoff yardstick)."""
    p = J_parts(U, F)
    value = p["inertia"] + p["potential"] + p["dissipation"] - p["source"]
    scale = p["inertia"] + p["potential"] + p["dissipation"] + abs(p["source"])
    if not np.isfinite(value):
        raise FloatingPointError("non-finite functional value")
    return float(value), float(scale)


def eval_J(u, F: DiscreteFunctional) -> float:
    return value_and_scale(u, F)[0]


def grad_J(u, F: DiscreteFunctional, as_trajectory: bool = True):
    """Gradient of :func:`eval_J` with respect to the free nodes (zero on fixed nodes)."""
    U = _data(u, F)
    _check_constraints(U, F)
    q, g, eps = F.weights[:, None], F.grid, F.eps
    out = F.D2.T @ (q * F.d2(U)) / eps ** 2
    out += q * (grad_W(U, F.wspec, g) - F.phi)
    if not F.gspec.is_zero:
        out += F.D1.T @ (q * grad_G(F.d1(U), F.gspec, g)) / eps
    out = F.constraints.project(out)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite gradient")
    return F.trajectory(out) if as_trajectory else out


def competitor(F: DiscreteFunctional) -> Trajectory:
    """The admissible trajectory ``w0 + eps*t*w1``."""
    data = F.w0 + F.eps * F.time.nodes[:, None] * F.w1
    return F.trajectory(F.constraints.apply(data))


def el_residual(u, F: DiscreteFunctional, h) -> tuple[np.ndarray, np.ndarray]:
    """Residual of the representation formula for ``u''`` tested against the field ``h``.

    Returns ``(times, residual)`` on the free nodes at least the tail margin
    before the horizon:

        (u''(t), h)/eps^2 + A^2 w1(t) - A^2 w2(t) + A w3(t)/eps

    with ``w1 = (grad W(u), h)``, ``w2 = (phi, h)``, ``w3 = (grad G(u'), h)``.
    """
    U = _data(u, F)
    g = F.grid
    h = g.check_field(h)
    om1 = g.inner(grad_W(U, F.wspec, g), h)
    om2 = g.inner(F.phi, h)
    om3 = g.inner(grad_G(F.d1(U), F.gspec, g), h)
    res = (g.inner(F.d2(U), h) / F.eps ** 2 + avg_A2(om1 - om2, F.time)
           + avg_A(om3, F.time) / F.eps)
    mask = tail_safe(F.time)
    mask[:F.constraints.first_free] = False
    if not np.all(np.isfinite(res[mask])):
        raise FloatingPointError("non-finite residual")
    return F.time.nodes[mask], res[mask]


def rescale(u: Trajectory, eps: float) -> Trajectory:
    """Physical-time trajectory ``w(t) = u(t/eps)``: same samples, step ``eps*tau``."""
    vel = None if u.velocity is None else u.velocity / eps
    return Trajectory(u.grid, TimeGrid(u.time.n_t, u.time.step * eps), u.data, vel)


def rescale_inverse(w: Trajectory, eps: float) -> Trajectory:
    vel = None if w.velocity is None else w.velocity * eps
    return Trajectory(w.grid, TimeGrid(w.time.n_t, w.time.step / eps), w.data, vel)


def eval_F_physical(w: Trajectory, F: DiscreteFunctional) -> float:
    """The physical-time functional with weight ``e^{-t/eps}``, trapezoid in time.

    Built independently of ``J`` (different quadrature, physical-time
    differences) so that ``F(w) = eps * J(u)`` is a genuine cross-check.
    """
    eps, g = F.eps, F.grid
    t = w.nodes
    dw = time_derivative(w.data, w.time, 1, "second")
    ddw = time_derivative(w.data, w.time, 2)
    f = F.phi  # f_eps at the physical nodes eps * t_resc
    integrand = (eps ** 2 / 2 * g.norm_sq(ddw) + eval_W(w.data, F.wspec, g)
                 + eps * eval_G(dw, F.gspec, g) - g.inner(f, w.data))
    return float(trapezoid(np.exp(-t / eps) * integrand, t))


def _fd(y, dt, order):
    for _ in range(order):
        y = np.gradient(y, dt, axis=0, edge_order=2)
    return y


def weak_residual(w: Trajectory, eps: float, F: DiscreteFunctional,
                  testfn: Trajectory, forcing=None, with_scale: bool = False,
                  derivatives=None):
    """Weak-form residual of the limit equation tested against ``testfn``.

        int (w', eps^2 v''' + 2 eps v'' + v') - int <grad W(w), v>
            - int <grad G(w'), v + eps v'> + int (f, v)

    over physical time (trapezoid rule).  With ``eps = 0`` this is the
    weak form of the wave equation itself.  The forcing is ``f_eps`` from
    ``F`` when ``eps > 0`` and the unmodified source when ``eps = 0``;
    ``forcing`` (an array of samples on ``w``'s nodes) overrides both.
    With ``with_scale`` the sum of the absolute term integrals is returned
    as well, as ``(residual, scale)``.  ``derivatives`` supplies the first
    three time derivatives of the test function; otherwise they are taken by
    repeated finite differences, which is only accurate on well-resolved grids.
    """
    if w.time != testfn.time or w.grid.n_x != testfn.grid.n_x:
        raise ValueError("test function must share the trajectory's grid")
    if eps != 0 and abs(eps - F.eps) > 1e-15:
        raise ValueError("eps must be 0 or the functional's eps")
    v = testfn.data
    scale = 1.0 + np.max(np.abs(v))
    if np.max(np.abs(v[[0, 1, -2, -1]])) > 1e-12 * scale:
        raise ValueError("test function must vanish near both time endpoints")
    g, dt, t = w.grid, w.time.step, w.nodes
    dw = w.velocity if w.velocity is not None else np.gradient(w.data, dt, axis=0, edge_order=2)
    if derivatives is None:
        v1, v2, v3 = _fd(v, dt, 1), _fd(v, dt, 2), _fd(v, dt, 3)
    else:
        v1, v2, v3 = (np.asarray(d, dtype=float) for d in derivatives)
        if any(d.shape != v.shape for d in (v1, v2, v3)):
            raise ValueError("test function derivatives must match its shape")
    spec = None
    if forcing is None and F.source is not None:
        spec = F.source.base if eps == 0 else F.source.as_spec()
    terms = [g.inner(dw, eps ** 2 * v3 + 2 * eps * v2 + v1),
             -g.inner(grad_W(w.data, F.wspec, g), v),
             -g.inner(grad_G(dw, F.gspec, g), v + eps * v1)]
    integrals = [float(trapezoid(x, t)) for x in terms]
    if forcing is not None:
        integrals.append(float(trapezoid(g.inner(np.asarray(forcing, dtype=float), v), t)))
    elif spec is not None:
        # one-sided limits per cell: the approximate sources jump on grid nodes
        f_right, f_left = spec.cell_limits(t)
        cells = g.inner(f_right, v[:-1]) + g.inner(f_left, v[1:])
        integrals.append(float(0.5 * dt * np.sum(cells)))
    res = float(sum(integrals))
    if not with_scale:
        return res
    return res, float(sum(abs(x) for x in integrals))
