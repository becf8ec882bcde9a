"""Minimization of the discrete functional and the continuation in ``eps``.

The minimizer is a limited-memory BFGS iteration with backtracking.  Its
initial inverse-Hessian guess is the exact inverse of the functional's
quadratic part, linearized potential included: after a spatial FFT the
Hessian splits into one banded (half-bandwidth 3) symmetric matrix in time
per Fourier mode, factored by banded Cholesky and rebuilt at the current
iterate every few iterations.  For quadratic problems this makes the very
first step the Newton step.

The graded weights ``q_i ~ e^{-t_i}`` make the raw Hessian span many
orders of magnitude; the factorization works on the symmetrically
diagonally scaled matrix, which is well conditioned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded

from .source import ConditionReport, build_f_eps, verify_source_conditions
from .spatial import derivative
from .timeweight import TAIL, TimeGrid, Trajectory
from .variational import (DiscreteFunctional, competitor, grad_J, make_functional,
                          rescale, value_and_scale)

__all__ = [
    "MinimizeOptions",
    "MinimizeResult",
    "Preconditioner",
    "minimize",
    "FamilyMember",
    "continuation",
    "warm_start",
    "EPS_MIN",
    "T_PHYS_MAX",
]

EPS_MIN = 0.05
T_PHYS_MAX = 1.5
_BAND = 3
_APPROX_WOLFE = 0.1


@dataclass(frozen=True)
class MinimizeOptions:
    grad_tol: float | None = None  # None: 1e-7 * max(1, |w0|_inf + |w1|_inf)
    max_iters: int = 20000
    memory: int = 10
    ls_shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60
    refresh: int = 10  # rebuild the preconditioner every so many iterations (0: never)

    def __post_init__(self):
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1 or self.memory < 1:
            raise ValueError("max_iters and memory must be positive")
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must lie in (0, 1)")

    def tolerance(self, F: DiscreteFunctional) -> float:
        if self.grad_tol is not None:
            return self.grad_tol
        return 1e-7 * max(1.0, float(np.max(np.abs(F.w0)) + np.max(np.abs(F.w1))))


@dataclass
class MinimizeResult:
    minimizer: Trajectory
    value: float
    iterations: int
    final_grad_norm: float
    converged: bool
    grad_tol: float
    message: str = ""
    history: list = field(default_factory=list)


def _free_map(F: DiscreteFunctional) -> sp.csr_matrix:
    """Sparse injection of the free nodes into all nodes."""
    size, k = F.time.size, F.constraints.first_free
    m = size - k
    return sp.csr_matrix((np.ones(m), (np.arange(k, size), np.arange(m))), shape=(size, m))


def _to_upper_band(a: sp.spmatrix, n: int) -> np.ndarray:
    ab = np.zeros((_BAND + 1, n))
    a = a.tocoo()
    keep = (a.col >= a.row) & (a.col - a.row <= _BAND)
    if np.any(np.abs(a.col - a.row) > _BAND):
        raise ValueError("time Hessian wider than the assumed band")
    ab[_BAND + a.row[keep] - a.col[keep], a.col[keep]] = a.data[keep]
    return ab


class Preconditioner:
    """Exact inverse of the quadratic part of the Hessian, per Fourier mode.

    The potential's non-quadratic terms enter through the curvature
    ``lam (p - 1) <|D^k u_i|^{p-2}>``, averaged in space at every time node
    of the reference trajectory (exponents below 2 are left out).
    """

    def __init__(self, F: DiscreteFunctional, ref: np.ndarray):
        grid, eps = F.grid, F.eps
        P = _free_map(F)
        Q = sp.diags(F.weights)
        self.n = P.shape[1]
        k = F.constraints.first_free
        inertia = _to_upper_band(P.T @ F.D2.T @ Q @ F.D2 @ P, self.n) / eps ** 2
        damping = _to_upper_band(P.T @ F.D1.T @ Q @ F.D1 @ P, self.n) / eps
        q = F.weights[k:]
        xi = grid.wavenumbers
        lead = F.wspec.leading * np.where(xi > 0, np.abs(xi) ** (2 * F.wspec.m), 0.0)
        # curv[i, j]: curvature at free node i for Fourier mode j
        curv = np.broadcast_to(lead, (self.n, xi.size)).copy()
        for t in F.wspec.terms:
            if t.lam == 0 or t.p < 2:
                continue
            if t.p == 2:
                mean = np.ones(self.n)
            else:
                mean = np.mean(np.abs(derivative(ref[k:], t.k, grid)) ** (t.p - 2), axis=1)
            sym = xi ** (2 * t.k)
            if t.k % 2:
                sym = sym.copy(); sym[-1] = 0.0
            curv += t.lam * (t.p - 1) * np.outer(mean, sym)
        damp = F.gspec.symbol(grid)
        self.factors = []
        for j in range(xi.size):
            ab = inertia + damp[j] * damping
            ab[_BAND] = ab[_BAND] + q * curv[:, j]
            s = 1 / np.sqrt(ab[_BAND])
            scaled = ab.copy()
            for d in range(1, _BAND + 1):
                scaled[_BAND - d, d:] *= s[d:] * s[:-d]
            scaled[_BAND] = 1.0
            self.factors.append((cholesky_banded(scaled), s))
        self.n_x = grid.n_x

    def solve(self, g: np.ndarray) -> np.ndarray:
        """``M^{-1} g`` for a stack of fields on the free nodes."""
        gh = np.fft.rfft(g, axis=1)
        out = np.empty_like(gh)
        for j, (c, s) in enumerate(self.factors):
            rhs = np.stack([gh[:, j].real, gh[:, j].imag], axis=1) * s[:, None]
            sol = cho_solve_banded((c, False), rhs) * s[:, None]
            out[:, j] = sol[:, 0] + 1j * sol[:, 1]
        return np.fft.irfft(out, n=self.n_x, axis=1)


def minimize(F: DiscreteFunctional, init, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Preconditioned L-BFGS on the free nodes.

    Steps are accepted on the Armijo condition, or, when the change in value
    is below the roundoff allowance ``64 eps_mach * scale``, on the
    approximate Wolfe slope test.  Objective values therefore never increase
    by more than that allowance.
    """
    opts = opts or MinimizeOptions()
    tol = opts.tolerance(F)
    U = np.array(init.data if isinstance(init, Trajectory) else init, dtype=float)
    if F.constraints.residual(U) > 1e-12 * (1 + np.max(np.abs(F.w0)) + np.max(np.abs(F.w1))):
        raise ValueError("initial trajectory violates the constraints")
    U = F.constraints.apply(U)
    h = F.grid.spacing
    k = F.constraints.first_free
    M = Preconditioner(F, U)

    def dot(a, b):
        return h * float(np.sum(a * b))

    def full(x):
        Z = U.copy()
        Z[k:] = x
        return F.constraints.apply(Z)

    x = U[k:].copy()
    f, scale = value_and_scale(U, F)
    g = grad_J(U, F, as_trajectory=False)[k:]
    pg = M.solve(g)
    gnorm = float(np.max(np.abs(pg)))
    history = [f]
    S, Y, R = [], [], []
    it, message = 0, "max_iters reached"
    while True:
        if gnorm <= tol:
            message = "converged"
            break
        if it >= opts.max_iters:
            break
        # two-loop recursion with M^{-1} as the initial inverse Hessian
        qv = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(R)):
            a = rho * dot(s, qv)
            alphas.append(a)
            qv -= a * y
        r = M.solve(qv)
        for (s, y, rho), a in zip(zip(S, Y, R), reversed(alphas)):
            r += (a - rho * dot(y, r)) * s
        d = -r
        slope = dot(g, d)
        if not slope < 0:
            S, Y, R = [], [], []
            d, slope = -pg, -dot(g, pg)
        noise = 64 * np.finfo(float).eps * scale
        alpha, accepted, g_new = 1.0, False, None
        for _ in range(opts.max_backtracks):
            x_new = x + alpha * d
            U_new = full(x_new)
            f_new, scale_new = value_and_scale(U_new, F)
            if f_new <= f + opts.armijo * alpha * slope:
                accepted = True
            elif f_new <= f + noise:
                # the value cannot resolve the change (tail nodes weigh ~e^{-T});
                # fall back on the approximate Wolfe test on the slope
                g_new = grad_J(U_new, F, as_trajectory=False)[k:]
                accepted = dot(g_new, d) <= (1 - 2 * _APPROX_WOLFE) * abs(slope)
            if accepted:
                break
            g_new = None
            alpha *= opts.ls_shrink
        if not accepted:
            message = "line search stalled"
            break
        if g_new is None:
            g_new = grad_J(U_new, F, as_trajectory=False)[k:]
        s, y = x_new - x, g_new - g
        sy = dot(s, y)
        if sy > 1e-14 * math.sqrt(dot(s, s) * dot(y, y)) and sy > 0:
            S.append(s); Y.append(y); R.append(1 / sy)
            if len(S) > opts.memory:
                S.pop(0); Y.pop(0); R.pop(0)
        x, g, f, scale = x_new, g_new, f_new, scale_new
        if opts.refresh and (it + 1) % opts.refresh == 0:
            M = Preconditioner(F, U_new)
        pg = M.solve(g)
        gnorm = float(np.max(np.abs(pg)))
        history.append(f)
        it += 1
    U = full(x)
    return MinimizeResult(F.trajectory(U, with_velocity=True), f, it, gnorm, gnorm <= tol, tol, message, history)


@dataclass
class FamilyMember:
    eps: float
    functional: DiscreteFunctional | None
    result: MinimizeResult | None
    w: Trajectory | None
    conditions: ConditionReport | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.result is not None and self.result.converged


def warm_start(prev_w: Trajectory, F: DiscreteFunctional) -> Trajectory:
    """Initial guess for ``F`` from a physical-time trajectory of another ``eps``."""
    t_phys = F.time.nodes * F.eps
    if t_phys[-1] > prev_w.time.horizon + 1e-12:
        raise ValueError("previous trajectory does not cover the new horizon")
    return F.trajectory(F.constraints.apply(prev_w.at(t_phys)))


def continuation(problem, schedule, tau: float = 0.05, source_mode: str = "truncated",
                 opts: MinimizeOptions | None = None, constraint: str = "ghost",
                 warm: bool = True) -> list[FamilyMember]:
    """Minimize for each ``eps`` of a descending schedule, warm-starting each solve."""
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("eps schedule must be strictly descending")
    for e in schedule:
        if not EPS_MIN <= e < 1:
            raise ValueError(f"eps={e} outside the supported range [{EPS_MIN}, 1)")
    if problem.T_phys > T_PHYS_MAX:
        raise ValueError(f"T_phys={problem.T_phys} beyond the supported {T_PHYS_MAX}")
    family, prev = [], None
    for eps in schedule:
        fe = build_f_eps(problem.source, eps, source_mode)
        time = TimeGrid.covering(problem.T_phys / eps + TAIL, tau)
        report = verify_source_conditions(fe, step=tau, horizon=time.horizon)
        try:
            F = make_functional(eps, problem.wspec, problem.gspec, problem.grid, time,
                                problem.w0, problem.w1, fe, constraint)
            init = warm_start(prev, F) if (warm and prev is not None) else competitor(F)
            res = minimize(F, init, opts)
        except (ValueError, FloatingPointError) as exc:
            family.append(FamilyMember(eps, None, None, None, report, str(exc)))
            continue
        w = rescale(res.minimizer, eps)
        family.append(FamilyMember(eps, F, res, w, report,
                                   "" if res.converged else res.message))
        prev = w
    return family
