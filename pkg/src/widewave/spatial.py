"""Periodic 1-D spatial discretization and the energy functionals W and G.

Grid functions ("fields") are plain ``numpy`` arrays whose last axis has
length ``grid.n_x``.  Every operator here broadcasts over leading axes, so a
whole trajectory of shape ``(n_t + 1, n_x)`` can be passed in one call.

Derivatives are spectral.  Odd derivatives drop the Nyquist mode (its
symbol ``(i xi)^k`` is not real there); even powers of ``|xi|`` keep it, so
the leading Sobolev term stays coercive on every nonconstant mode.
Integrals use the rectangle rule ``h * sum``, which is exact for
trigonometric polynomials of the grid and makes ``(eval, grad)`` an exactly
compatible pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "SpatialGrid",
    "WTerm",
    "WSpec",
    "GSpec",
    "PRESETS",
    "derivative",
    "sobolev_seminorm_sq",
    "eval_W",
    "grad_W",
    "eval_G",
    "grad_G",
    "g_norm_sq",
    "preset",
]


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite values in {what}")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on ``[0, length)`` with ``n_x`` nodes."""

    n_x: int
    length: float = 2 * np.pi

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 8 or self.n_x % 2:
            raise ValueError(f"n_x must be an even integer >= 8, got {self.n_x}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def spacing(self) -> float:
        return self.length / self.n_x

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_x) * self.spacing

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of the ``rfft`` modes."""
        return 2 * np.pi * np.fft.rfftfreq(self.n_x, d=self.spacing)

    def inner(self, a, b):
        """Discrete L2 inner product over the last axis."""
        return self.spacing * np.sum(np.asarray(a) * np.asarray(b), axis=-1)

    def norm_sq(self, a):
        return self.inner(a, a)

    def mode(self, k: int, kind: str = "sin") -> np.ndarray:
        """``sin`` or ``cos`` of ``2 pi k x / length`` sampled on the nodes."""
        arg = 2 * np.pi * k * self.nodes / self.length
        if kind == "sin":
            return np.sin(arg)
        if kind == "cos":
            return np.cos(arg)
        raise ValueError(f"unknown mode kind {kind!r}")

    def check_field(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.n_x,):
            raise ValueError(f"field has last axis {v.shape[-1:]}, grid has n_x={self.n_x}")
        _check_finite(v, "field")
        return v


def apply_symbol(v, symbol, n_x):
    """Multiply the ``rfft`` of ``v`` by ``symbol`` and transform back."""
    return np.fft.irfft(symbol * np.fft.rfft(v, axis=-1), n=n_x, axis=-1)


def _derivative_symbol(grid: SpatialGrid, k: int) -> np.ndarray:
    xi = grid.wavenumbers
    sym = (1j * xi) ** k
    if k % 2:
        sym = sym.copy()
        sym[-1] = 0.0
    return sym


def derivative(v, k: int, grid: SpatialGrid):
    """Spectral ``k``-th derivative; ``k = 0`` returns ``v`` itself."""
    if k == 0:
        return np.asarray(v, dtype=float)
    return apply_symbol(v, _derivative_symbol(grid, k), grid.n_x)


def _seminorm_symbol(grid: SpatialGrid, m: float) -> np.ndarray:
    xi = grid.wavenumbers
    out = np.zeros_like(xi)
    nz = xi > 0
    out[nz] = xi[nz] ** (2 * m)
    return out


def sobolev_seminorm_sq(v, m: float, grid: SpatialGrid):
    """``sum_xi |xi|^{2m} |v_hat(xi)|^2`` normalized as a discrete L2 norm.

    For integer ``m`` this is ``||D^m v||^2`` (the Nyquist mode, kept here,
    is the only difference for odd ``m``).  The mean contributes nothing.
    """
    if not m > 0:
        raise ValueError(f"m must be positive, got {m}")
    v = grid.check_field(v)
    return grid.inner(v, apply_symbol(v, _seminorm_symbol(grid, m), grid.n_x))


@dataclass(frozen=True)
class WTerm:
    """One lower-order term ``(lam / p) * int |D^k v|^p``."""

    k: int
    lam: float
    p: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be a nonnegative integer, got {self.k}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.p > 1:
            raise ValueError(f"exponent p must exceed 1, got {self.p}")


@dataclass(frozen=True)
class WSpec:
    """Potential energy ``(leading/2) ||v||_{H^m}^2 + sum_k (lam_k/p_k) int |D^k v|^p_k``.

    ``leading`` is 1 for every functional of the semilinear family; the
    p-Laplacian presets set it to 0 because their top-order term is not
    quadratic.
    """

    m: float
    terms: tuple[WTerm, ...] = ()
    theta: float = 0.5
    leading: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.m > 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.leading >= 0:
            raise ValueError("leading coefficient must be nonnegative")
        for t in self.terms:
            if self.leading > 0 and not t.k < self.m:
                raise ValueError(f"term order k={t.k} must be below m={self.m}")

    @property
    def is_quadratic(self) -> bool:
        return all(t.p == 2 or t.lam == 0 for t in self.terms)


@dataclass(frozen=True)
class GSpec:
    """Dissipation ``G(v) = (1/2)(mu0 ||v||^2 + mu1 ||grad v||^2 + mu2 ||lap v||^2)``."""

    mu0: float = 0.0
    mu1: float = 0.0
    mu2: float = 0.0

    def __post_init__(self):
        if min(self.mu0, self.mu1, self.mu2) < 0:
            raise ValueError("dissipation coefficients must be nonnegative")

    def symbol(self, grid: SpatialGrid) -> np.ndarray:
        xi2 = grid.wavenumbers ** 2
        return self.mu0 + self.mu1 * xi2 + self.mu2 * xi2 ** 2

    @property
    def is_zero(self) -> bool:
        return self.mu0 == self.mu1 == self.mu2 == 0


def _signed_power(a, q):
    # |a|^(q-1) sign(a); safe at a = 0 for 1 < q < 2
    return np.sign(a) * np.abs(a) ** (q - 1)


def eval_W(v, spec: WSpec, grid: SpatialGrid):
    v = grid.check_field(v)
    total = np.zeros(v.shape[:-1])
    if spec.leading:
        total = total + 0.5 * spec.leading * sobolev_seminorm_sq(v, spec.m, grid)
    for t in spec.terms:
        if t.lam == 0:
            continue
        dv = derivative(v, t.k, grid)
        total = total + (t.lam / t.p) * grid.spacing * np.sum(np.abs(dv) ** t.p, axis=-1)
    _check_finite(total, "eval_W")
    return total


def grad_W(v, spec: WSpec, grid: SpatialGrid):
    """L2 gradient of :func:`eval_W` (Riesz representative in the grid inner product)."""
    v = grid.check_field(v)
    g = np.zeros_like(v)
    if spec.leading:
        g += spec.leading * apply_symbol(v, _seminorm_symbol(grid, spec.m), grid.n_x)
    for t in spec.terms:
        if t.lam == 0:
            continue
        flux = t.lam * _signed_power(derivative(v, t.k, grid), t.p)
        g += (-1) ** t.k * derivative(flux, t.k, grid)
    _check_finite(g, "grad_W")
    return g


def grad_G(v, spec: GSpec, grid: SpatialGrid):
    """Field representing ``a(v, .)``, i.e. ``mu0 v - mu1 lap v + mu2 lap^2 v``."""
    v = grid.check_field(v)
    if spec.is_zero:
        return np.zeros_like(v)
    g = apply_symbol(v, spec.symbol(grid), grid.n_x)
    _check_finite(g, "grad_G")
    return g


def eval_G(v, spec: GSpec, grid: SpatialGrid):
    v = grid.check_field(v)
    return 0.5 * grid.inner(v, grad_G(v, spec, grid))


def g_norm_sq(v, spec: GSpec, grid: SpatialGrid):
    """``||v||^2 + 2 G(v)``."""
    v = grid.check_field(v)
    return grid.norm_sq(v) + 2 * eval_G(v, spec, grid)


def _theta(*exponents):
    return 1 - 1 / max((2.0,) + tuple(exponents))


def _semilinear_W(p):
    return WSpec(m=1, terms=(WTerm(0, 1.0, p),), theta=_theta(p))


def _plap_W(p, q):
    # no quadratic top-order term: theta = 1 - 1/max(p, q)
    return WSpec(m=1, terms=(WTerm(1, 1.0, p), WTerm(0, 1.0, q)),
                 theta=1 - 1 / max(p, q), leading=0.0)


PRESETS = {
    "wave": ((), lambda: (WSpec(m=1), GSpec())),
    "nlw": (("p",), lambda p: (_semilinear_W(p), GSpec())),
    "telegraph": (("p",), lambda p: (_semilinear_W(p), GSpec(mu0=1.0))),
    "telegraph_plap": (("p", "q"), lambda p, q: (_plap_W(p, q), GSpec(mu0=1.0))),
    "strong_damped": (("p",), lambda p: (_semilinear_W(p), GSpec(mu1=1.0))),
    "strong_damped_plap": (("p", "q"), lambda p, q: (_plap_W(p, q), GSpec(mu1=1.0))),
    "damped_h1": (("p",), lambda p: (_semilinear_W(p), GSpec(mu0=1.0, mu1=1.0))),
    "damped_h2": (("p",), lambda p: (_semilinear_W(p), GSpec(mu2=1.0))),
}

PRESET_DEFAULTS = {"p": 2.0, "q": 2.0}


def preset(name: str, **params) -> tuple[WSpec, GSpec]:
    """(W, G) pair of one of the worked examples.

    Parameters default to ``p = q = 2``.  ``wave`` is the linear wave
    equation ``w'' = w_xx`` (no parameters), ``nlw`` the undamped
    nonlinear wave equation; the ``*_plap`` variants use the p-Laplacian
    potential ``(1/p)|grad v|^p + (1/q)|v|^q``.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    names, build = PRESETS[name]
    unknown = set(params) - set(names)
    if unknown:
        raise ValueError(f"preset {name!r} takes parameters {names}, got {sorted(unknown)}")
    args = []
    for key in names:
        value = float(params.get(key, PRESET_DEFAULTS[key]))
        if not value > 1:
            raise ValueError(f"preset parameter {key} must exceed 1, got {value}")
        args.append(value)
    return build(*args)
