"""Energies, stationarity relations, bounds and convergence tables for minimizers.

All time averages are evaluated on the rescaled grid of the minimizer and
only read at nodes at least ``TAIL`` units before its horizon.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid, trapezoid

from .reference import ProblemSpec
from .source import gamma_curve, gamma_of
from .spatial import SpatialGrid, eval_G, eval_W, grad_G, grad_W
from .timeweight import TimeGrid, Trajectory, avg_A, avg_A2, tail_safe, time_derivative
from .variational import DiscreteFunctional, J_parts

__all__ = [
    "BETA",
    "EnergyTrace",
    "energy_traces",
    "RelationZero",
    "check_relation_zero",
    "check_relation_t",
    "EnergyBounds",
    "check_energy_bounds",
    "required_constants",
    "levd_excess",
    "check_energy_inequality",
    "limit_energy",
    "apriori_report",
    "convergence_table",
    "hermite_sample",
    "bump_test_function",
    "write_trace_csv",
    "TRACE_COLUMNS",
]

BETA = 2.0
TRACE_COLUMNS = ("t", "W_eps", "K_eps", "D_eps", "G_eps", "L_eps", "Phi_eps", "E_eps", "E_eps_d")


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    eps: float
    time: TimeGrid
    W: np.ndarray
    K: np.ndarray
    D: np.ndarray
    G: np.ndarray
    L: np.ndarray
    Phi: np.ndarray
    E: np.ndarray
    E_d: np.ndarray
    Lambda: float
    R: float

    @property
    def nodes(self):
        return self.time.nodes

    @property
    def safe(self) -> np.ndarray:
        return tail_safe(self.time)

    def A(self, h):
        return avg_A(h, self.time)

    def A2(self, h):
        return avg_A2(h, self.time)


def energy_traces(u, F: DiscreteFunctional) -> EnergyTrace:
    """Per-node energies of a (converged) minimizer ``u`` of ``F``."""
    U = u.data if isinstance(u, Trajectory) else np.asarray(u, dtype=float)
    F.time.require_tail()
    g, eps, time = F.grid, F.eps, F.time
    du, ddu = F.d1(U), F.d2(U)
    W = eval_W(U, F.wspec, g)
    K = g.norm_sq(du) / (2 * eps ** 2)
    D = g.norm_sq(ddu) / (2 * eps ** 2)
    G = eval_G(du, F.gspec, g)
    L = D + W + G / eps
    Phi = g.inner(F.phi, du)
    AG, A2G = avg_A(G, time), avg_A2(G, time)
    E = K + avg_A2(W, time)
    E_d = E + cumulative_trapezoid(AG + A2G, dx=time.step, initial=0.0) / eps
    Lam = float(E_d[0] + (A2G[0] + 2 * AG[0]) / eps)
    q, t = F.weights, time.nodes
    w1 = F.w1
    R = eps * float(q @ (t * (-g.inner(grad_W(U, F.wspec, g), w1) + g.inner(F.phi, w1))
                         - g.inner(grad_G(du, F.gspec, g), w1) / eps))
    return EnergyTrace(eps, time, W, K, D, G, L, Phi, E, E_d, Lam, R)


def _relation_terms(tr: EnergyTrace):
    A, A2 = tr.A, tr.A2
    terms = (A2(tr.L), 4 * A(tr.D), 2 / tr.eps * A(tr.G), -A(tr.L), -A2(tr.Phi))
    return sum(terms), sum(np.abs(x) for x in terms)


class RelationZero(NamedTuple):
    residual: float
    scale: float
    R: float
    sqrt_eps_margin: float | None


def check_relation_zero(tr: EnergyTrace, F: DiscreteFunctional | None = None,
                        C: float | None = None) -> RelationZero:
    """Residual of the averaged stationarity relation at ``t = 0``.

    ``residual = A^2 L + 4 A D + (2/eps) A G - A L - A^2 Phi + R`` at 0;
    with a constant ``C`` the margin ``C sqrt(eps) - |R|`` is reported too.
    """
    total, scale = _relation_terms(tr)
    res = float(total[0] + tr.R)
    margin = None if C is None else C * math.sqrt(tr.eps) - abs(tr.R)
    return RelationZero(res, float(scale[0] + abs(tr.R)), tr.R, margin)


def check_relation_t(tr: EnergyTrace, with_scale: bool = False):
    """Nodewise residual of the relation with ``K'`` in place of ``R``.

    Returned on interior nodes inside the tail-safe region as
    ``(times, residual)``, plus the nodewise sum of absolute terms when
    ``with_scale`` is set.
    """
    total, scale = _relation_terms(tr)
    dK = np.full_like(tr.K, np.nan)
    dK[1:-1] = (tr.K[2:] - tr.K[:-2]) / (2 * tr.time.step)
    # K(0) holds the exact initial velocity, unlike the other nodes; keep it out
    dK[1] = (-3 * tr.K[1] + 4 * tr.K[2] - tr.K[3]) / (2 * tr.time.step)
    mask = tr.safe.copy()
    mask[0] = mask[-1] = False
    if with_scale:
        return tr.nodes[mask], (total + dK)[mask], (scale + np.abs(dK))[mask]
    return tr.nodes[mask], (total + dK)[mask]


def levd_excess(u, F: DiscreteFunctional) -> float:
    """``H + Delta - W(w0)`` at ``u``; bounded by ``C eps`` at minimizers."""
    p = J_parts(u, F)
    return p["inertia"] + p["potential"] + p["dissipation"] - float(eval_W(F.w0, F.wspec, F.grid))


def _gamma_fn(F: DiscreteFunctional):
    if F.source is None or F.source.base.is_zero:
        return lambda t: 0.0
    return lambda t: gamma_of(F.source.base, t)


def _report_nodes(tr: EnergyTrace, T_phys: float):
    idx = np.nonzero(tr.safe & (tr.nodes * tr.eps <= T_phys + 1e-12))[0]
    return idx, tr.nodes[idx] * tr.eps


def _growth_factor(gamma, T, t_eps, eps):
    return np.sqrt(np.array([gamma(s + t_eps) for s in T]) + eps ** 2)


@dataclass
class EnergyBounds:
    T: np.ndarray
    stimalocT: np.ndarray
    stimalocTbis: np.ndarray
    appenzero: float
    levd: float
    scales: dict

    def passed(self, tol: float = 1e-10) -> dict:
        return {
            "stimalocT": bool(np.all(self.stimalocT >= -tol * self.scales["stimalocT"])),
            "stimalocTbis": bool(np.all(self.stimalocTbis >= -tol * self.scales["stimalocTbis"])),
            "appenzero": bool(self.appenzero >= -tol * self.scales["appenzero"]),
            "levd": bool(self.levd >= -tol * self.scales["levd"]),
        }


def _dissipated(tr: EnergyTrace):
    return cumulative_trapezoid(tr.G, dx=tr.time.step, initial=0.0)


def required_constants(tr: EnergyTrace, F: DiscreteFunctional, u, T_phys: float,
                       gamma: Callable | None = None, beta: float = BETA) -> dict:
    """Smallest constants for which every bound holds on this run.

    Keys: ``levd`` (C in the minimum-value bound), ``appenzero`` (C in the
    bound for Lambda), ``restest`` (C in |R| <= C sqrt(eps)) and ``C_beta``
    (the constant shared by the two energy growth bounds).
    """
    gamma = gamma or _gamma_fn(F)
    eps = tr.eps
    t_eps = F.source.t_eps if F.source is not None else 0.0
    idx, T = _report_nodes(tr, T_phys)
    growth = _growth_factor(gamma, T, t_eps, eps)
    base = 0.5 * F.grid.norm_sq(F.w1) + float(eval_W(F.w0, F.wspec, F.grid))

    def cbeta(lhs_sqrt, start_sqrt):
        need = (lhs_sqrt - start_sqrt) / growth - np.sqrt(T * beta / 2)
        need = np.maximum(need, 0.0)
        return float(np.max(need ** 2 / eps)) if need.size else 0.0

    bis = tr.E[idx] + 2 / eps * _dissipated(tr)[idx]
    return {
        "levd": levd_excess(u, F) / eps,
        "appenzero": (tr.Lambda - base) / math.sqrt(eps),
        "restest": abs(tr.R) / math.sqrt(eps),
        "C_beta": max(cbeta(np.sqrt(np.maximum(tr.E_d[idx], 0)), math.sqrt(tr.E_d[0])),
                      cbeta(np.sqrt(np.maximum(bis, 0)), math.sqrt(max(tr.Lambda, 0)))),
    }


def check_energy_bounds(tr: EnergyTrace, F: DiscreteFunctional, u, constants: dict,
                        T_phys: float, gamma: Callable | None = None,
                        beta: float = BETA) -> EnergyBounds:
    """Margins (right side minus left side) of the energy bounds with given constants.

    ``constants`` holds ``levd``, ``appenzero`` and ``C_beta``; the growth
    bounds are evaluated at every physical time of the output grid up to
    ``T_phys``.
    """
    gamma = gamma or _gamma_fn(F)
    eps = tr.eps
    t_eps = F.source.t_eps if F.source is not None else 0.0
    idx, T = _report_nodes(tr, T_phys)
    growth = (math.sqrt(eps * constants["C_beta"]) + np.sqrt(T * beta / 2)) * \
        _growth_factor(gamma, T, t_eps, eps)
    lhs = np.sqrt(np.maximum(tr.E_d[idx], 0))
    rhs = math.sqrt(tr.E_d[0]) + growth
    lhs_bis = tr.E[idx] + 2 / eps * _dissipated(tr)[idx]
    rhs_bis = (math.sqrt(max(tr.Lambda, 0)) + growth) ** 2
    base = 0.5 * F.grid.norm_sq(F.w1) + float(eval_W(F.w0, F.wspec, F.grid))
    excess = levd_excess(u, F)
    scales = {
        "stimalocT": float(np.max(rhs)) if rhs.size else 1.0,
        "stimalocTbis": float(np.max(rhs_bis)) if rhs_bis.size else 1.0,
        "appenzero": abs(base) + abs(tr.Lambda) + 1e-300,
        "levd": abs(base) + abs(excess) + 1e-300,
    }
    return EnergyBounds(
        T, rhs - lhs, rhs_bis - lhs_bis,
        base + constants["appenzero"] * math.sqrt(eps) - tr.Lambda,
        constants["levd"] * eps - excess, scales)


def limit_energy(w: Trajectory, wspec, gspec, start: str = "second") -> np.ndarray:
    """``||w'||^2/2 + W(w) + 2 int_0^t G(w')`` per node of a physical trajectory."""
    g = w.grid
    dw = w.velocity if w.velocity is not None else time_derivative(w.data, w.time, 1, start)
    G = eval_G(dw, gspec, g)
    # Simpson keeps the quadrature error below the reference solver's (fourth order)
    dissipated = (cumulative_simpson(G, dx=w.time.step, initial=0.0) if G.size >= 3 else
                  cumulative_trapezoid(G, dx=w.time.step, initial=0.0))
    return 0.5 * g.norm_sq(dw) + eval_W(w.data, wspec, g) + 2 * dissipated


def check_energy_inequality(w: Trajectory, p: ProblemSpec, start: str = "second"
                            ) -> tuple[np.ndarray, np.ndarray, float]:
    """Margin of the limit energy inequality at every node with ``t <= T_phys``.

    Returns ``(times, margin, scale)`` where
    ``margin = (sqrt(E(0)) + sqrt(t gamma(t) / 2))^2 - E(t)``.
    """
    e = limit_energy(w, p.wspec, p.gspec, start)
    mask = w.nodes <= p.T_phys + 1e-12
    t = w.nodes[mask]
    gam = gamma_curve(p.source, t)
    bound = (math.sqrt(max(e[0], 0)) + np.sqrt(t * gam / 2)) ** 2
    return t, bound - e[mask], float(np.max(bound))


def _velocity(w: Trajectory) -> np.ndarray:
    if w.velocity is not None:
        return w.velocity
    return time_derivative(w.data, w.time, 1, "second")


def apriori_report(family, T: float = 1.0, shift: float = 0.0, exclude: int = 2) -> dict:
    """The three uniform a-priori quantities per eps and their spread.

    ``bounded`` holds when, after dropping the ``exclude`` largest eps, the
    largest value of each quantity is within a factor 2 of the smallest.
    """
    rows = []
    for m in family:
        if m.w is None:
            continue
        w = m.w
        g = w.grid
        dw = _velocity(w)
        t = w.nodes
        sup_mask = t <= T + 1e-12
        win = (t >= shift - 1e-12) & (t <= shift + T + 1e-12)
        rows.append({
            "eps": m.eps,
            "sup_energy": float(np.max((g.norm_sq(dw) + g.norm_sq(w.data))[sup_mask])),
            "potential_integral": float(trapezoid(eval_W(w.data[win], m.functional.wspec, g), t[win])),
            "dissipation_integral": float(trapezoid(eval_G(dw[sup_mask], m.functional.gspec, g),
                                                    t[sup_mask])),
        })
    rows.sort(key=lambda r: -r["eps"])
    kept = rows[exclude:] if len(rows) > exclude else rows
    spread, bounded = {}, {}
    for key in ("sup_energy", "potential_integral", "dissipation_integral"):
        vals = np.array([r[key] for r in kept])
        if vals.size == 0 or np.max(vals) <= 1e-12:
            spread[key], bounded[key] = 1.0, True
        else:
            lo = np.min(vals)
            spread[key] = float(np.max(vals) / lo) if lo > 0 else math.inf
            bounded[key] = spread[key] <= 2.0
    return {"rows": rows, "spread": spread, "bounded": bounded}


def hermite_sample(ref: Trajectory, t) -> tuple[np.ndarray, np.ndarray]:
    """Positions (cubic Hermite) and velocities (linear) of ``ref`` at times ``t``."""
    if ref.velocity is None:
        raise ValueError("reference trajectory must carry velocities")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = ref.time.step
    if np.any(t < -1e-12) or np.any(t > ref.time.horizon + 1e-9 * h):
        raise ValueError("requested times outside the reference grid")
    lo = np.clip(np.floor(t / h + 1e-9).astype(int), 0, ref.time.n_t - 1)
    s = np.clip((t - lo * h) / h, 0, 1)[:, None]
    p0, p1 = ref.data[lo], ref.data[lo + 1]
    m0, m1 = ref.velocity[lo] * h, ref.velocity[lo + 1] * h
    h00, h10 = 2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s
    h01, h11 = -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2
    pos = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
    vel = (1 - s) * ref.velocity[lo] + s * ref.velocity[lo + 1]
    return pos, vel


def convergence_table(family, reference: Trajectory, T_obs: float = 1.0) -> list[dict]:
    """Errors of each physical-time minimizer against the reference on ``[0, T_obs]``."""
    rows = []
    for m in family:
        if m.w is None:
            continue
        w = m.w
        if w.grid.n_x != reference.grid.n_x or w.grid.length != reference.grid.length:
            raise ValueError("spatial grid mismatch between minimizer and reference")
        if reference.time.horizon < T_obs - 1e-12 or w.time.horizon < T_obs - 1e-12:
            raise ValueError("trajectories do not cover the observation window")
        mask = w.nodes <= T_obs + 1e-12
        t = w.nodes[mask]
        dw = _velocity(w)[mask]
        pos, vel = hermite_sample(reference, t)
        diff = w.grid.norm_sq(w.data[mask] - pos)
        ddiff = w.grid.norm_sq(dw - vel)
        rows.append({"eps": m.eps,
                     "err_sup_L2": float(np.sqrt(np.max(diff))),
                     "err_H1_time": float(np.sqrt(trapezoid(ddiff, t)))})
    rows.sort(key=lambda r: -r["eps"])
    return rows


def bump_test_function(grid: SpatialGrid, time: TimeGrid, field, T: float,
                       start: float = 0.0, derivatives: bool = False):
    """``sin(pi (t - start) / (T - start))^4 * field`` on ``[start, T]``, zero elsewhere.

    With ``derivatives`` the exact first three time derivatives are returned
    too, as ``(trajectory, (v1, v2, v3))``.
    """
    if not T > start >= 0:
        raise ValueError("need 0 <= start < T")
    t = time.nodes
    a = np.pi / (T - start)
    inside = (t > start) & (t < T)
    S = np.where(inside, np.sin(a * (np.clip(t, start, T) - start)), 0.0)
    C = np.cos(a * (np.clip(t, start, T) - start))
    f = grid.check_field(field)[None, :]
    traj = Trajectory(grid, time, (S ** 4)[:, None] * f)
    if not derivatives:
        return traj
    d1 = 4 * a * S ** 3 * C
    d2 = 4 * a ** 2 * (3 * S ** 2 * C ** 2 - S ** 4)
    d3 = 4 * a ** 3 * (6 * S * C ** 3 - 10 * S ** 3 * C)
    return traj, tuple(d[:, None] * f for d in (d1, d2, d3))


def write_trace_csv(tr: EnergyTrace, path) -> None:
    """One row per rescaled node, 17 significant digits."""
    cols = (tr.nodes, tr.W, tr.K, tr.D, tr.G, tr.L, tr.Phi, tr.E, tr.E_d)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for row in zip(*cols):
            wr.writerow([f"{x:.17g}" for x in row])
