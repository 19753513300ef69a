"""Time evolution of the gauge-fixed lattice CSS system.

In the spatial gauge the system closes on the scalar field alone:

    i phi_t + Lap phi + g[phi] phi + lam |phi|^(2p) phi = 0,

with ``g`` rebuilt from ``phi`` by a tail sum at every stage evaluation.  The
flow is integrated with the Dormand-Prince 5(4) embedded pair and an adaptive
step whose size is capped by the explicit stability limit ``~ h**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .gauge import reconstruct_a2, reconstruct_g
from .lattice import (
    ModelParams,
    _shift_down,
    discrete_laplacian,
    forward_difference,
    mass,
)

log = logging.getLogger(__name__)

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6] + (0.0,)
_E = tuple(b - bs for b, bs in zip(
    _B, (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)))

# dt <= STABILITY_FACTOR * h**2
STABILITY_FACTOR = 0.5


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    t_end: float
    dt_initial: float = 1e-3
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    record_every: float = 0.1
    transport_a2: bool = True

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not (self.dt_initial > 0 and self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("dt_initial and tolerances must be positive")
        if not self.record_every > 0:
            raise ValueError("record_every must be positive")


@dataclass
class EvolutionTrace:
    times: NDArray[np.float64]
    mass_series: NDArray[np.float64]
    constraint_series: NDArray[np.float64]
    snapshots: list = field(default_factory=list)
    transported_constraint_series: NDArray[np.float64] | None = None
    steps_accepted: int = 0
    steps_rejected: int = 0

    @property
    def final(self) -> NDArray[np.complex128]:
        return self.snapshots[-1][1]

    @property
    def mass_drift(self) -> float:
        m0 = self.mass_series[0]
        drift = np.max(np.abs(self.mass_series - m0))
        return float(drift / m0) if m0 > 0 else float(drift)


def nonlinearity(phi: NDArray, p: float) -> NDArray:
    # |phi|^(2p) phi, continuous at phi = 0 for every p > 0
    return (np.abs(phi) ** 2) ** p * phi


def rhs(phi: ArrayLike, params: ModelParams) -> NDArray[np.complex128]:
    """``d phi / dt = i (Lap phi + g phi + lam |phi|^(2p) phi)``."""
    phi = np.asarray(phi, dtype=complex)
    g = reconstruct_g(phi, params.gamma, params.h)
    return 1j * (discrete_laplacian(phi, params.h) + g * phi
                 + params.lam * nonlinearity(phi, params.p))


def a2_rate(phi: NDArray, h: float) -> NDArray[np.float64]:
    """``d A2(n)/dt = -Im(conj(phi(n-1)) grad+ phi(n-1))`` with A1 = 0."""
    flux = np.imag(np.conj(phi) * forward_difference(phi, h))
    return -_shift_down(flux, 0.0)


def dopri_step(f, t: float, y: NDArray, dt: float, k1: NDArray | None = None):
    """One Dormand-Prince step; returns ``(y_new, error_estimate, f(y_new))``."""
    k = [f(t, y) if k1 is None else k1]
    for i in range(1, 7):
        yi = y + dt * sum(a * kj for a, kj in zip(_A[i], k) if a)
        k.append(f(t + _C[i] * dt, yi))
    # the 7th stage is evaluated at the 5th-order solution (FSAL)
    y_new = y + dt * sum(b * kj for b, kj in zip(_B, k) if b)
    err = dt * sum(e * kj for e, kj in zip(_E, k) if e)
    return y_new, err, k[6]


def _constraint_linf(phi, a2, h, beta):
    rho = np.abs(phi) ** 2
    return float(np.max(np.abs(forward_difference(a2, h, beta) - 0.5 * rho)))


def integrate(phi0: ArrayLike, params: ModelParams, config: EvolutionConfig,
              beta: float = 0.0) -> EvolutionTrace:
    """Adaptive integration of the reduced flow with mass and constraint diagnostics.

    The constraint ``grad+ A2 - |phi|^2 / 2`` is monitored twice: for A2 rebuilt
    from each snapshot, and (when ``config.transport_a2``) for A2 carried along
    by its own evolution equation starting from the closed form at t = 0.
    """
    phi0 = np.asarray(phi0, dtype=complex)
    if not np.all(np.isfinite(phi0)):
        raise ValueError("initial field must be finite")
    n = phi0.size
    h = params.h
    transport = config.transport_a2

    def f(t, y):
        phi = y[:n]
        dphi = rhs(phi, params)
        if not transport:
            return dphi
        return np.concatenate([dphi, a2_rate(phi, h)])

    y = phi0.copy()
    if transport:
        y = np.concatenate([y, reconstruct_a2(phi0, beta, h).astype(complex)])

    times, masses, cons, tcons, snaps = [], [], [], [], []

    def record(t, y):
        phi = y[:n]
        times.append(t)
        masses.append(mass(phi, h))
        cons.append(_constraint_linf(phi, reconstruct_a2(phi, beta, h), h, beta))
        if transport:
            tcons.append(_constraint_linf(phi, y[n:].real, h, beta))
        snaps.append((t, phi.copy()))

    t = 0.0
    record(t, y)
    dt_max = STABILITY_FACTOR * h * h
    dt = min(config.dt_initial, dt_max)
    next_record = config.record_every
    k1 = None
    accepted = rejected = 0
    while t < config.t_end:
        target = min(next_record, config.t_end)
        step = min(dt, target - t)
        if step < 1e-14 * max(1.0, abs(t)):
            if target - t <= 1e-14 * max(1.0, abs(t)):
                t = target
            else:
                raise IntegrationError(f"step size underflow at t={t:.6g} (dt={step:.3g})")
        else:
            y_new, err, k_last = dopri_step(f, t, y, step, k1)
            if not np.all(np.isfinite(y_new)):
                raise IntegrationError(f"non-finite state at t={t:.6g}")
            scale = config.abs_tol + config.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            e = float(np.max(np.abs(err) / scale))
            if e <= 1.0:
                t += step
                y = y_new
                k1 = k_last
                accepted += 1
                fac = 5.0 if e == 0 else min(5.0, 0.9 * e ** -0.2)
                # a step clipped to hit a record time says nothing about dt
                if step >= dt:
                    dt = min(dt * fac, dt_max)
            else:
                rejected += 1
                dt = step * max(0.2, 0.9 * e ** -0.2)
                continue
        if t >= target:
            t = target if abs(t - target) < 1e-12 * max(1.0, target) else t
            record(t, y)
            next_record += config.record_every
    log.debug("integrate: %d accepted, %d rejected steps", accepted, rejected)
    return EvolutionTrace(
        times=np.array(times),
        mass_series=np.array(masses),
        constraint_series=np.array(cons),
        snapshots=snaps,
        transported_constraint_series=np.array(tcons) if transport else None,
        steps_accepted=accepted,
        steps_rejected=rejected,
    )


def integrate_fixed(phi0: ArrayLike, params: ModelParams, dt: float, t_end: float):
    """Fixed-step Dormand-Prince integration; used to measure convergence order."""
    y = np.asarray(phi0, dtype=complex).copy()
    steps = int(round(t_end / dt))
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * t_end:
        raise ValueError("t_end must be an integer multiple of dt")

    def f(t, y):
        return rhs(y, params)

    t, k1 = 0.0, None
    for _ in range(steps):
        y, _, k1 = dopri_step(f, t, y, dt, k1)
        t += dt
    return y


def balance_residual(phi_before: ArrayLike, phi_after: ArrayLike, dt: float, h: float) -> float:
    """l-infinity norm of the discrete local mass balance

    ``(|phi|^2)_t / 2 + grad+ Im(conj(phi(n-1)) D+ phi(n-1)) = 0``

    with the time derivative replaced by a forward difference over ``dt`` and
    the flux taken at ``phi_before``; first order in ``dt``.
    """
    a = np.asarray(phi_before, dtype=complex)
    b = np.asarray(phi_after, dtype=complex)
    drho = 0.5 * (np.abs(b) ** 2 - np.abs(a) ** 2) / dt
    flux = np.imag(np.conj(a) * forward_difference(a, h))
    res = drho + forward_difference(_shift_down(flux, 0.0), h, pad=flux[-1])
    return float(np.max(np.abs(res)))
