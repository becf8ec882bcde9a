"""Forcing terms, their truncated approximations ``f_eps`` and condition checks.

A :class:`SourceSpec` wraps a sampler ``t -> field``.  ``breakpoints`` lists
the times where the sampler may jump; quadratures split there and sample
one-sided limits, so indicator-type forcings integrate to roundoff.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson

from .spatial import SpatialGrid
from .timeweight import TAIL, TimeGrid, avg_A2, exp_weights

__all__ = [
    "SourceSpec",
    "ApproxSource",
    "ConditionReport",
    "zero_source",
    "single_mode_source",
    "tabulated_source",
    "read_source_csv",
    "gamma_of",
    "gamma_curve",
    "weighted_integral",
    "build_f_eps",
    "verify_source_conditions",
]

_NUDGE = 1e-12


@dataclass(frozen=True)
class SourceSpec:
    grid: SpatialGrid
    sampler: Callable[[float], np.ndarray]
    descriptor: dict = field(default_factory=dict)
    breakpoints: tuple[float, ...] = ()
    is_zero: bool = False

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.sampler(float(t)), dtype=float)

    def sample(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.is_zero:
            return np.zeros((times.size, self.grid.n_x))
        out = np.array([self(t) for t in times])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("source sampler returned non-finite values")
        return out

    def cell_limits(self, times) -> tuple[np.ndarray, np.ndarray]:
        """One-sided samples inside each cell ``[t_i, t_{i+1}]`` of ``times``.

        Returns the right limits at ``t_i`` and the left limits at
        ``t_{i+1}``, so a jump on a node does not bias cell quadratures.
        """
        times = np.asarray(times, dtype=float)
        shift = 1e-9 * np.diff(times)
        return self.sample(times[:-1] + shift), self.sample(times[1:] - shift)

    def sample_centered(self, times) -> np.ndarray:
        """Mean of the one-sided limits at each node (right limit at the first).

        Nodal forcing built this way keeps hat-weighted sums second-order
        accurate when the source jumps on a node.
        """
        times = np.asarray(times, dtype=float)
        if self.is_zero or times.size < 2:
            return self.sample(times)
        right, left = self.cell_limits(times)
        out = np.empty((times.size, self.grid.n_x))
        out[0], out[-1] = right[0], left[-1]
        out[1:-1] = 0.5 * (left[:-1] + right[1:])
        return out

    def norm_sq(self, t: float) -> float:
        return float(self.grid.norm_sq(self(t)))


def zero_source(grid: SpatialGrid) -> SourceSpec:
    zero = np.zeros(grid.n_x)
    return SourceSpec(grid, lambda t: zero, {"kind": "zero"}, (), True)


def single_mode_source(grid: SpatialGrid, k: int = 1, amplitude: float = 1.0,
                       t_on: float = 0.0, t_off: float = math.inf,
                       kind: str = "sin") -> SourceSpec:
    """``amplitude * sin(2 pi k x / L)`` switched on for ``t`` in ``[t_on, t_off]``."""
    if not t_off > t_on >= 0:
        raise ValueError("need 0 <= t_on < t_off")
    shape = amplitude * grid.mode(k, kind)
    zero = np.zeros(grid.n_x)

    def sampler(t):
        return shape if t_on <= t <= t_off else zero

    desc = {"kind": "single_mode", "k": k, "amplitude": amplitude,
            "t_on": t_on, "t_off": t_off, "mode": kind}
    bps = tuple(b for b in (t_on, t_off) if 0 < b < math.inf)
    return SourceSpec(grid, sampler, desc, bps, amplitude == 0)


def tabulated_source(grid: SpatialGrid, times, values) -> SourceSpec:
    """Piecewise-linear interpolation of tabulated fields; zero outside the table."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or values.shape != (times.size, grid.n_x):
        raise ValueError("table must have one row of n_x values per time")
    if times.size < 2 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("table times must be nonnegative and strictly increasing")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values in tabulated source")
    zero = np.zeros(grid.n_x)

    def sampler(t):
        if t < times[0] or t > times[-1]:
            return zero
        j = min(np.searchsorted(times, t, side="right") - 1, times.size - 2)
        a = (t - times[j]) / (times[j + 1] - times[j])
        return (1 - a) * values[j] + a * values[j + 1]

    bps = tuple(float(b) for b in times if b > 0)
    return SourceSpec(grid, sampler, {"kind": "custom", "rows": int(times.size)}, bps,
                      not np.any(values))


def read_source_csv(path, grid: SpatialGrid) -> SourceSpec:
    """Read a tabulated source: each row is ``t`` followed by ``n_x`` nodal values."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                if rows:
                    raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
                continue  # header line
            if len(rows[-1]) != grid.n_x + 1:
                raise ValueError(f"{path}:{lineno}: expected {grid.n_x + 1} columns")
    table = np.array(rows)
    src = tabulated_source(grid, table[:, 0], table[:, 1:])
    return SourceSpec(grid, src.sampler, {"kind": "custom", "path": str(path)},
                      src.breakpoints, src.is_zero)


def _pieces(a, b, breakpoints):
    cuts = sorted({a, b} | {x for x in breakpoints if a < x < b})
    return list(zip(cuts[:-1], cuts[1:]))


def _simpson_piece(fun, a, b, panels_per_unit=400, min_panels=16):
    n = max(min_panels, int(math.ceil((b - a) * panels_per_unit)))
    n += n % 2
    t = np.linspace(a, b, n + 1)
    d = _NUDGE * max(1.0, b - a)
    t[0], t[-1] = a + d, b - d
    return simpson([fun(s) for s in t], x=np.linspace(a, b, n + 1))


def gamma_of(f: SourceSpec, t: float) -> float:
    """``int_0^t ||f(s)||^2 ds`` by composite Simpson between breakpoints."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if f.is_zero or t == 0:
        return 0.0
    return float(sum(_simpson_piece(f.norm_sq, a, b) for a, b in _pieces(0.0, t, f.breakpoints)))


def gamma_curve(f: SourceSpec, times) -> np.ndarray:
    """``gamma_of`` at every entry of a nondecreasing array, in one sweep."""
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ValueError("times must be nonnegative and nondecreasing")
    out = np.zeros(times.shape)
    if f.is_zero:
        return out
    total, prev = 0.0, 0.0
    for i, t in enumerate(times):
        if t > prev:
            total += sum(_simpson_piece(f.norm_sq, a, b) for a, b in _pieces(prev, t, f.breakpoints))
            prev = t
        out[i] = total
    return out


def weighted_integral(f: SourceSpec, rate: float, upper: float) -> float:
    """``int_0^upper e^{-rate t} ||f(t)||^2 dt``."""
    if f.is_zero:
        return 0.0
    total = 0.0
    for a, b in _pieces(0.0, upper, f.breakpoints):
        total += _simpson_piece(lambda s: math.exp(-rate * s) * f.norm_sq(s), a, b,
                                panels_per_unit=max(400, 40 * rate))
    return float(total)


@dataclass(frozen=True)
class ApproxSource:
    """Truncated (and possibly clipped) forcing ``f_eps`` supported in ``[t_eps, T_eps]``."""

    base: SourceSpec
    eps: float
    t_eps: float
    T_eps: float
    clip_level: float | None
    mode: str
    feasible: bool = True

    @property
    def grid(self) -> SpatialGrid:
        return self.base.grid

    @property
    def support_end_rescaled(self) -> float:
        return self.T_eps / self.eps

    def __call__(self, t: float) -> np.ndarray:
        if not self.feasible or self.base.is_zero or not self.t_eps <= t <= self.T_eps:
            return np.zeros(self.grid.n_x)
        v = self.base(t)
        if self.clip_level is not None:
            nrm = math.sqrt(self.grid.norm_sq(v))
            if nrm > self.clip_level:
                v = v * (self.clip_level / nrm)
        return v

    def as_spec(self) -> SourceSpec:
        bps = tuple(self.base.breakpoints) + tuple(
            b for b in (self.t_eps, self.T_eps) if 0 < b < math.inf)
        return SourceSpec(self.grid, self, {"kind": "approx", "mode": self.mode, "eps": self.eps},
                          bps, self.base.is_zero or not self.feasible)

    def sample_rescaled(self, time: TimeGrid) -> np.ndarray:
        """``phi(t) = f_eps(eps t)`` on the rescaled nodes."""
        return self.as_spec().sample(self.eps * time.nodes)

    def phi_nodes(self, time: TimeGrid) -> np.ndarray:
        """Nodal forcing of the discrete functional: ``sample_rescaled`` with jumps averaged."""
        return self.as_spec().sample_centered(self.eps * time.nodes)


def build_f_eps(f: SourceSpec, eps: float, mode: str = "truncated") -> ApproxSource:
    """Approximating source for one value of ``eps``.

    ``exact`` keeps ``f``; ``truncated`` cuts it to ``[eps, eps^-1/2]``;
    ``strict`` also pushes ``t_eps`` out to
    ``eps * ln((1 + T_eps/eps) / eps^3)`` (the decay bound holds with
    equality) and clips ``||f_eps(t)||`` so both mass bounds hold.  A strict
    source with ``t_eps >= T_eps`` is returned with ``feasible=False``.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if mode == "exact":
        return ApproxSource(f, eps, 0.0, math.inf, None, mode)
    T_eps = eps ** -0.5
    if mode == "truncated":
        return ApproxSource(f, eps, eps, T_eps, None, mode)
    if mode != "strict":
        raise ValueError(f"unknown source mode {mode!r}")
    t_eps = eps * math.log((1 + T_eps / eps) / eps ** 3)
    if t_eps >= T_eps:
        return ApproxSource(f, eps, t_eps, T_eps, None, mode, feasible=False)
    # sup ||f_eps||^2 <= 1 + T_eps/eps gives the weighted mass bound from the
    # decay bound; sup ||f_eps||^2 (T_eps - t_eps) <= 1/eps gives the plain one
    clip = math.sqrt(min(1 + T_eps / eps, 1 / (eps * (T_eps - t_eps))))
    return ApproxSource(f, eps, t_eps, T_eps, clip, mode)


@dataclass
class ConditionReport:
    eps: float
    mode: str
    feasible: bool
    margins: dict[str, float]
    scales: dict[str, float]
    values: dict[str, float]
    rtol: float = 1e-10  # several conditions hold with equality; quadrature roundoff

    @property
    def passed(self) -> dict[str, bool]:
        return {k: bool(self.feasible and m >= -self.rtol * self.scales[k])
                for k, m in self.margins.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"eps": self.eps, "mode": self.mode, "feasible": self.feasible,
                "margins": self.margins, "passed": self.passed, "values": self.values}


def verify_source_conditions(fe: ApproxSource, step: float = 0.05,
                             horizon: float | None = None) -> ConditionReport:
    """Signed margins of every condition imposed on ``f_eps`` and ``phi``.

    A condition passes when its margin is nonnegative up to a relative
    roundoff allowance (several conditions hold with equality by design).
    ``step`` is the rescaled time step used for the averaged condition.
    """
    eps = fe.eps
    base, spec = fe.base, fe.as_spec()
    T_star = fe.support_end_rescaled
    if horizon is None:
        horizon = (T_star if math.isfinite(T_star) else 2 / eps) + TAIL
    time = TimeGrid.covering(horizon, step)
    upper = min(fe.T_eps, eps * time.horizon)

    # ||phi||_L^2 = int e^{-t} ||f_eps(eps t)||^2 dt = (1/eps) int e^{-s/eps} ||f_eps(s)||^2 ds
    phi_L2 = weighted_integral(spec, 1 / eps, upper) / eps
    mass = gamma_of(spec, upper)
    if spec.is_zero:
        # empty support: the window conditions hold vacuously
        supp_end, decay = 0.0, 0.0
    else:
        supp_end, decay = T_star, math.exp(-fe.t_eps / eps) * (1 + T_star)

    n2 = spec.grid.norm_sq(fe.sample_rescaled(time))
    lhs = eps * cumulative_trapezoid(avg_A2(n2, time), dx=time.step, initial=0.0)
    rhs = gamma_curve(base, eps * time.nodes + fe.t_eps) + eps ** 2
    worst = int(np.argmin(rhs - lhs))

    margins = {
        "suppcomt": eps ** -1.5 - supp_end,
        "assogr": eps - math.sqrt(phi_L2),
        "assAq": float(rhs[worst] - lhs[worst]),
        "decay_iii": eps ** 3 - decay,
        "mass_iv": min(1 / eps - mass, eps ** 3 - phi_L2),
    }
    scales = {
        "suppcomt": eps ** -1.5,
        "assogr": eps,
        "assAq": float(rhs[worst] + lhs[worst]),
        "decay_iii": eps ** 3,
        "mass_iv": eps ** 3,
    }
    values = {"T_star": T_star, "phi_L": math.sqrt(phi_L2), "mass": mass,
              "weighted_mass": phi_L2, "t_eps": fe.t_eps, "T_eps": fe.T_eps,
              "clip_level": fe.clip_level if fe.clip_level is not None else math.inf,
              "mass_iv_plain": 1 / eps - mass, "mass_iv_weighted": eps ** 3 - phi_L2}
    return ConditionReport(eps, fe.mode, fe.feasible, margins, scales, values)
