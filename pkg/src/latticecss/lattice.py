"""Lattice fields, difference and covariant operators, gauge transformations.

Fields live on a finite window ``n_min..n_max`` of the integer lattice; every
site outside the window is treated as zero (Dirichlet truncation).  Half-site
quantities such as the spatial gauge potential ``A1(n + 1/2)`` are stored per
bond, aligned with the left site of the bond, so an array of ``N - 1`` entries
covers the bonds inside an ``N``-site window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class LatticeWindow:
    n_min: int
    n_max: int
    h: float

    def __post_init__(self):
        if self.n_max - self.n_min + 1 < 3:
            raise ValueError(
                f"window [{self.n_min}, {self.n_max}] must hold at least 3 sites")
        if not self.h > 0:
            raise ValueError(f"lattice spacing h must be positive, got {self.h}")

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def sites(self) -> NDArray[np.int64]:
        return np.arange(self.n_min, self.n_max + 1)

    def index(self, n: int) -> int:
        """Array index of lattice site ``n``."""
        if not self.n_min <= n <= self.n_max:
            raise IndexError(f"site {n} outside window [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def with_h(self, h: float) -> "LatticeWindow":
        return LatticeWindow(self.n_min, self.n_max, h)

    @classmethod
    def centered(cls, half_width: int, h: float) -> "LatticeWindow":
        return cls(-half_width, half_width, h)


@dataclass(frozen=True)
class ComplexField:
    """Complex lattice sequence on a window (scalar field or profile)."""

    window: LatticeWindow
    values: NDArray[np.complex128]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.window.size,):
            raise ValueError(
                f"field has {vals.shape} values, window needs {self.window.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, n: int) -> complex:
        return complex(self.values[self.window.index(n)])


@dataclass(frozen=True)
class GaugeTriple:
    """Gauge potentials; ``alpha``/``beta`` are the limits of A0/A2 at +infinity
    and act as the padding values beyond ``n_max``."""

    a0: NDArray[np.float64]
    a1: NDArray[np.float64]
    a2: NDArray[np.float64]
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        a0 = np.asarray(self.a0, dtype=float)
        a1 = np.asarray(self.a1, dtype=float)
        a2 = np.asarray(self.a2, dtype=float)
        if a0.shape != a2.shape or a1.shape != (a0.size - 1,):
            raise ValueError("need len(a0) == len(a2) == len(a1) + 1")
        for name, arr in (("a0", a0), ("a1", a1), ("a2", a2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def is_spatial_gauge(self) -> bool:
        return not np.any(self.a1)


@dataclass(frozen=True)
class ModelParams:
    """One problem instance: coupling, power, frequency, spacing, and the limit
    ``gamma`` of the combined potential g at +infinity."""

    lam: float
    p: float
    omega: float
    h: float
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("lam", "p", "omega", "h"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                key = "lambda" if name == "lam" else name
                raise ValueError(f"{key} must be positive, got {value}")

    def with_h(self, h: float) -> "ModelParams":
        return ModelParams(self.lam, self.p, self.omega, h, self.gamma)

    def with_omega(self, omega: float) -> "ModelParams":
        return ModelParams(self.lam, self.p, omega, self.h, self.gamma)


def _shift_up(f, pad):
    # f(n+1) with pad beyond n_max
    out = np.empty_like(f)
    out[:-1] = f[1:]
    out[-1] = pad
    return out


def _shift_down(f, pad):
    # f(n-1) with pad before n_min
    out = np.empty_like(f)
    out[1:] = f[:-1]
    out[0] = pad
    return out


def forward_difference(f: ArrayLike, h: float, pad=0.0) -> NDArray:
    """``(f(n+1) - f(n)) / h``; ``pad`` is the value assumed beyond ``n_max``."""
    f = np.asarray(f)
    return (_shift_up(f, pad) - f) / h


def backward_difference(f: ArrayLike, h: float, pad=0.0) -> NDArray:
    """``(f(n) - f(n-1)) / h``; ``pad`` is the value assumed before ``n_min``."""
    f = np.asarray(f)
    return (f - _shift_down(f, pad)) / h


def discrete_laplacian(f: ArrayLike, h: float) -> NDArray:
    f = np.asarray(f)
    return (_shift_up(f, 0.0) - 2.0 * f + _shift_down(f, 0.0)) / h**2


def _bond_phase(a1, h, sign):
    a1 = np.asarray(a1, dtype=float)
    return np.exp(sign * 1j * h * a1)


def covariant_derivative_plus(phi: ArrayLike, a1: ArrayLike, h: float) -> NDArray:
    """``(exp(-i h A1(n+1/2)) phi(n+1) - phi(n)) / h``."""
    phi = np.asarray(phi, dtype=complex)
    nxt = np.zeros_like(phi)
    nxt[:-1] = _bond_phase(a1, h, -1.0) * phi[1:]
    return (nxt - phi) / h


def covariant_derivative_minus(phi: ArrayLike, a1: ArrayLike, h: float) -> NDArray:
    """``(phi(n) - exp(i h A1(n-1/2)) phi(n-1)) / h``."""
    phi = np.asarray(phi, dtype=complex)
    prv = np.zeros_like(phi)
    prv[1:] = _bond_phase(a1, h, 1.0) * phi[:-1]
    return (phi - prv) / h


def bond_difference(chi: ArrayLike, h: float) -> NDArray:
    """Forward difference of a site sequence restricted to the bonds inside the window."""
    chi = np.asarray(chi, dtype=float)
    return np.diff(chi) / h


def gauge_transform(phi: ArrayLike, gauge: GaugeTriple, chi: ArrayLike,
                    chi_dot: ArrayLike, h: float):
    """Apply the lattice gauge transformation generated by ``chi``.

    Returns ``(exp(i chi) phi, GaugeTriple(A0 + chi_dot, A1 + grad chi, A2))``.
    """
    chi = np.asarray(chi, dtype=float)
    phi_t = np.exp(1j * chi) * np.asarray(phi, dtype=complex)
    new = GaugeTriple(
        a0=gauge.a0 + np.asarray(chi_dot, dtype=float),
        a1=gauge.a1 + bond_difference(chi, h),
        a2=gauge.a2.copy(),
        alpha=gauge.alpha,
        beta=gauge.beta,
    )
    return phi_t, new


def gauge_transform_rates(phi, phi_t, a1_t, chi, chi_dot, h):
    """Transform the time derivatives that accompany :func:`gauge_transform`.

    ``d/dt exp(i chi) phi = exp(i chi) (phi_t + i chi_dot phi)`` and
    ``d/dt (A1 + grad chi) = A1_t + grad chi_dot``.
    """
    chi = np.asarray(chi, dtype=float)
    chi_dot = np.asarray(chi_dot, dtype=float)
    phi = np.asarray(phi, dtype=complex)
    new_phi_t = np.exp(1j * chi) * (np.asarray(phi_t, dtype=complex) + 1j * chi_dot * phi)
    new_a1_t = np.asarray(a1_t, dtype=float) + bond_difference(chi_dot, h)
    return new_phi_t, new_a1_t


def mass(phi: ArrayLike, h: float) -> float:
    """Conserved mass ``h * sum |phi(n)|^2``."""
    phi = np.asarray(phi)
    return float(h * np.sum(np.abs(phi) ** 2))


def constraint_residuals(phi: ArrayLike, gauge: GaugeTriple, h: float):
    """Residuals of the two constraints of the spatial-gauge system.

    ``r0 = grad+ A0 - A2 |phi|^2`` and ``r2 = grad+ A2 - |phi|^2 / 2``, with A0
    and A2 padded by ``alpha`` and ``beta`` beyond the window.
    """
    if not gauge.is_spatial_gauge:
        raise ValueError("constraint residuals need the spatial gauge (a1 == 0)")
    rho = np.abs(np.asarray(phi)) ** 2
    r0 = forward_difference(gauge.a0, h, gauge.alpha) - gauge.a2 * rho
    r2 = forward_difference(gauge.a2, h, gauge.beta) - 0.5 * rho
    return r0, r2


@dataclass
class SystemResidual:
    """Sitewise residuals of the four equations of the lattice CSS system."""

    schrodinger: NDArray[np.complex128]
    a1_evolution: NDArray[np.float64]
    a2_evolution: NDArray[np.float64]
    constraint: NDArray[np.float64]
    norms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.norms = {
            name: float(np.max(np.abs(getattr(self, name))))
            for name in ("schrodinger", "a1_evolution", "a2_evolution", "constraint")
        }


def system_residual(phi, phi_t, gauge: GaugeTriple, a1_t, a2_t, h, lam, p) -> SystemResidual:
    """Residuals of the full gauge-covariant lattice CSS system at one instant.

    The A1 equation is evaluated on the bonds inside the window; the others on
    every site.
    """
    phi = np.asarray(phi, dtype=complex)
    rho = np.abs(phi) ** 2
    d0 = np.asarray(phi_t, dtype=complex) - 1j * gauge.a0 * phi
    dd = covariant_derivative_minus(covariant_derivative_plus(phi, gauge.a1, h), gauge.a1, h)
    eq1 = 1j * d0 + dd - gauge.a2**2 * phi + lam * rho**p * phi
    eq2 = np.asarray(a1_t, dtype=float) - bond_difference(gauge.a0, h) + gauge.a2[:-1] * rho[:-1]
    flux = np.imag(np.conj(phi) * covariant_derivative_plus(phi, gauge.a1, h))
    eq3 = np.asarray(a2_t, dtype=float) + _shift_down(flux, 0.0)
    eq4 = forward_difference(gauge.a2, h, gauge.beta) - 0.5 * rho
    return SystemResidual(eq1, eq2, eq3, eq4)


def product_identity_residual(phi: ArrayLike, h: float) -> NDArray:
    """Sitewise defect of the discrete product rule with A1 = 0:

    ``grad+(conj(phi) D+ phi)(n) = |D+ phi(n)|^2 + conj(phi(n+1)) D- D+ phi(n+1)``.
    """
    phi = np.asarray(phi, dtype=complex)
    zero = np.zeros(phi.size - 1)
    dp = covariant_derivative_plus(phi, zero, h)
    lhs = forward_difference(np.conj(phi) * dp, h)
    dmdp = covariant_derivative_minus(dp, zero, h)
    rhs = np.abs(dp) ** 2 + _shift_up(np.conj(phi), 0.0) * _shift_up(dmdp, 0.0)
    return lhs - rhs


def residual_norms(r: ArrayLike) -> dict:
    """Both the l1 and l-infinity norms of a residual."""
    r = np.abs(np.asarray(r))
    return {"l1": float(np.sum(r)), "linf": float(np.max(r)) if r.size else 0.0}
