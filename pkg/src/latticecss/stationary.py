"""Stationary bound states ``phi = exp(i Omega t) U``, ``g = G``.

The profile solves ``F(U, h) = 0`` with

    F_n = (lam |U_n|^(2p) - Omega + (h^2/4) sum_{k>=n} U_k^4) U_n + Lap U_n,

which folds the potential G (limit 0 at +infinity) into the residual.  Newton
iterations start from anti-continuum configurations: a single excited site
with amplitude ``U(h)`` or two adjacent sites with amplitudes ``W(h), U(h)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .gauge import reconstruct_g, tail_sum
from .lattice import LatticeWindow, ModelParams, discrete_laplacian, mass

log = logging.getLogger(__name__)

SEED_KINDS = ("single_site", "double_site", "external_field")


def _monotone_root(fun, dfun, hi: float, rtol: float = 1e-15) -> float:
    """Unique positive root of an increasing ``fun`` with ``fun(0) < 0 <= fun(hi)``.

    Bisection shrinks the bracket, Newton polishes inside it.
    """
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fun(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-3 * hi:
            break
    x = 0.5 * (lo + hi)
    for _ in range(50):
        fx = fun(x)
        if fx == 0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        step = fx / dfun(x)
        x_new = x - step
        if not lo <= x_new <= hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= rtol * x:
            return x_new
        x = x_new
    return x


def scalar_root_single(params: ModelParams) -> float:
    """Positive root of ``lam x^(2p) + (h^2/4) x^4 - Omega = 0``."""
    lam, p, om, h = params.lam, params.p, params.omega, params.h
    q = 0.25 * h * h
    hi = min((om / lam) ** (1 / (2 * p)), (om / q) ** 0.25)
    return _monotone_root(
        lambda x: lam * x ** (2 * p) + q * x**4 - om,
        lambda x: 2 * p * lam * x ** (2 * p - 1) + 4 * q * x**3,
        hi,
    )


def scalar_root_double(params: ModelParams, u_single: float | None = None) -> float:
    """Positive root of ``lam x^(2p) + (h^2/4) x^4 - lam U^(2p) = 0``."""
    lam, p, h = params.lam, params.p, params.h
    if u_single is None:
        u_single = scalar_root_single(params)
    q = 0.25 * h * h
    level = lam * u_single ** (2 * p)
    return _monotone_root(
        lambda x: lam * x ** (2 * p) + q * x**4 - level,
        lambda x: 2 * p * lam * x ** (2 * p - 1) + 4 * q * x**3,
        u_single,
    )


def continuum_soliton(x: ArrayLike, params: ModelParams) -> NDArray[np.float64]:
    """``Q(x) = (Omega (p+1) / lam)^(1/(2p)) sech(sqrt(Omega) p x)^(1/p)``.

    Solves ``Q'' - Omega Q + lam Q^(2p+1) = 0``; for ``p = 1`` the amplitude
    is ``sqrt(2 Omega / lam)``.
    """
    x = np.asarray(x, dtype=float)
    om, p = params.omega, params.p
    amp = (om * (p + 1) / params.lam) ** (1 / (2 * p))
    arg = np.abs(math.sqrt(om) * p * x)
    # sech written through exp(-|arg|) to stay finite far out
    sech = 2 * np.exp(-arg) / (1 + np.exp(-2 * arg))
    return amp * sech ** (1 / p)


def sampled_soliton(window: LatticeWindow, params: ModelParams) -> NDArray[np.float64]:
    return continuum_soliton(window.h * window.sites, params)


def stationary_residual(u: ArrayLike, params: ModelParams) -> NDArray[np.float64]:
    u = np.asarray(u, dtype=float)
    local = params.lam * np.abs(u) ** (2 * params.p) - params.omega + reconstruct_g(u, 0.0, params.h)
    return local * u + discrete_laplacian(u, params.h)


def residual_h_derivative(u: ArrayLike, params: ModelParams) -> NDArray[np.float64]:
    """``dF/dh`` at fixed U."""
    u = np.asarray(u, dtype=float)
    h = params.h
    return 0.5 * h * tail_sum(u**4) * u - 2.0 / h * discrete_laplacian(u, h)


def stationary_jacobian(u: ArrayLike, params: ModelParams) -> NDArray[np.float64]:
    """Dense ``dF/dU``: tridiagonal part plus the upper-triangular block
    ``h^2 U_m^3 U_n`` (m > n) coming from the tail sum."""
    u = np.asarray(u, dtype=float)
    lam, p, om, h = params.lam, params.p, params.omega, params.h
    n = u.size
    jac = np.triu(h * h * np.outer(u, u**3), 1)
    diag = ((2 * p + 1) * lam * np.abs(u) ** (2 * p) - om
            + 0.25 * h * h * tail_sum(u**4) + h * h * u**4 - 2.0 / h**2)
    jac[np.diag_indices(n)] = diag
    off = np.arange(n - 1)
    jac[off, off + 1] += 1.0 / h**2
    jac[off + 1, off] += 1.0 / h**2
    return jac


@dataclass(frozen=True)
class SeedSpec:
    kind: str = "single_site"
    center: int = 0
    data: NDArray[np.float64] | None = None

    def __post_init__(self):
        if self.kind not in SEED_KINDS:
            raise ValueError(f"seed kind must be one of {SEED_KINDS}, got {self.kind!r}")
        if self.kind == "external_field" and self.data is None:
            raise ValueError("external_field seed needs data")

    def build(self, window: LatticeWindow, params: ModelParams) -> NDArray[np.float64]:
        if self.kind == "external_field":
            data = np.asarray(self.data, dtype=float)
            if data.size != window.size:
                raise ValueError("external seed does not match the window")
            return data.copy()
        last = self.center + (1 if self.kind == "double_site" else 0)
        if self.center - window.n_min < 2 or window.n_max - last < 2:
            raise ValueError("seed needs a margin of at least 2 sites inside the window")
        u = np.zeros(window.size)
        big = scalar_root_single(params)
        if self.kind == "single_site":
            u[window.index(self.center)] = big
        else:
            u[window.index(self.center)] = scalar_root_double(params, big)
            u[window.index(self.center + 1)] = big
        return u


@dataclass(frozen=True)
class StationaryState:
    u: NDArray[np.float64]
    g: NDArray[np.float64]
    params: ModelParams
    window: LatticeWindow
    residual_linf: float
    iterations: int
    converged: bool
    message: str = ""

    @property
    def h(self) -> float:
        return self.params.h

    @property
    def mass(self) -> float:
        return mass(self.u, self.params.h)

    @classmethod
    def from_profile(cls, u, params, window, iterations=0, converged=None, tol=1e-12,
                     message=""):
        u = np.asarray(u, dtype=float)
        res = float(np.max(np.abs(stationary_residual(u, params))))
        if converged is None:
            converged = res <= tol
        return cls(u=u, g=reconstruct_g(u, 0.0, params.h), params=params, window=window,
                   residual_linf=res, iterations=iterations, converged=converged,
                   message=message)

    def value(self, n: int) -> float:
        return float(self.u[self.window.index(n)])


@dataclass
class NewtonOptions:
    tol: float = 1e-12
    max_iter: int = 50
    max_halvings: int = 30
    cond_limit: float = 1e14
    expand_threshold: float = 1e-10
    expand_by: int = 10
    max_size: int = 2001
    jacobian: object = field(default=stationary_jacobian, repr=False)


def boundary_ratio(u: NDArray) -> float:
    peak = np.max(np.abs(u))
    if peak == 0:
        return 0.0
    return float(max(abs(u[0]), abs(u[-1])) / peak)


def expand_window(u: NDArray, window: LatticeWindow, left: int, right: int):
    grown = LatticeWindow(window.n_min - left, window.n_max + right, window.h)
    return np.concatenate([np.zeros(left), u, np.zeros(right)]), grown


def _newton_iterate(u, params, opts: NewtonOptions):
    res = stationary_residual(u, params)
    norm = float(np.max(np.abs(res)))
    for it in range(opts.max_iter + 1):
        if norm <= opts.tol:
            return u, norm, it, True, "converged"
        if it == opts.max_iter:
            break
        jac = opts.jacobian(u, params)
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            return u, norm, it, False, "singular Jacobian"
        if not np.all(np.isfinite(step)):
            return u, norm, it, False, "singular Jacobian"
        scale = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = u - scale * step
            trial_res = stationary_residual(trial, params)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < norm:
                break
            scale *= 0.5
        else:
            if np.linalg.cond(jac) > opts.cond_limit:
                return u, norm, it, False, "singular Jacobian"
            return u, norm, it, False, "residual growth after full backtracking"
        u, res, norm = trial, trial_res, trial_norm
    return u, norm, opts.max_iter, False, "max_iter reached"


def newton_solve(seed, params: ModelParams, window: LatticeWindow | None = None,
                 tol: float = 1e-12, max_iter: int = 50,
                 options: NewtonOptions | None = None,
                 auto_expand: bool = True) -> StationaryState:
    """Damped Newton iteration for ``F(U, h) = 0``.

    ``seed`` is a :class:`SeedSpec` or a real profile on ``window``.  Steps are
    halved (Armijo-style, on the sup-norm residual) until the residual drops.
    When the converged profile is not negligible at the window edges the window
    is widened and the solve repeated.  Failures return a non-converged state
    with a diagnostic message rather than raising.
    """
    opts = options or NewtonOptions()
    opts = replace(opts, tol=tol, max_iter=max_iter)
    if window is None:
        window = LatticeWindow.centered(default_half_width(params), params.h)
    elif window.h != params.h:
        window = window.with_h(params.h)
    if isinstance(seed, SeedSpec):
        u = seed.build(window, params)
    else:
        u = np.asarray(seed, dtype=float).copy()
        if u.size != window.size:
            raise ValueError("seed profile does not match the window")
    if not np.all(np.isfinite(u)):
        raise ValueError("seed must be finite")

    total = 0
    while True:
        u, norm, its, ok, msg = _newton_iterate(u, params, opts)
        total += its
        if not ok or not auto_expand:
            break
        if boundary_ratio(u) <= opts.expand_threshold or window.size >= opts.max_size:
            break
        left = opts.expand_by if abs(u[0]) > opts.expand_threshold * np.max(np.abs(u)) else 0
        right = opts.expand_by if abs(u[-1]) > opts.expand_threshold * np.max(np.abs(u)) else 0
        u, window = expand_window(u, window, left, right)
        log.debug("widened window to [%d, %d]", window.n_min, window.n_max)
    return StationaryState.from_profile(u, params, window, iterations=total,
                                        converged=ok, tol=tol, message=msg)


def default_half_width(params: ModelParams, floor: float = 1e-13) -> int:
    """Half-width in sites after which a tail decaying like the linear
    right-hand tail (rate ``h^2 Omega``) has dropped below ``floor``."""
    z = params.h**2 * params.omega
    ratio = (2 + z - math.sqrt(z * (z + 4))) / 2
    sites = math.log(floor) / math.log(ratio)
    return int(min(max(8, math.ceil(sites) + 4), 400))


def asymmetric_tail_check(u: ArrayLike, params: ModelParams):
    """Sums of the solvability constraint obtained by testing ``F`` against
    ``U_{n+1} - U_{n-1}``.

    Returns ``(quintic, full)`` where ``quintic = sum U_n^5 U_{n+1}`` and
    ``full = (h^2/4) quintic + lam sum U_{n+1} U_n (|U_n|^(2p) - |U_{n+1}|^(2p))``;
    ``full`` vanishes for every solution.
    """
    u = np.asarray(u, dtype=float)
    nxt = np.append(u[1:], 0.0)
    quintic = float(math.fsum(u**5 * nxt))
    power = np.abs(u) ** (2 * params.p)
    power_nxt = np.append(power[1:], 0.0)
    local = math.fsum(nxt * u * (power - power_nxt))
    full = 0.25 * params.h**2 * quintic + params.lam * local
    return quintic, float(full)


def constraint_pairing(u: ArrayLike, params: ModelParams) -> float:
    """``sum F_n (U_{n+1} - U_{n-1})``.

    For any profile this equals ``full`` from :func:`asymmetric_tail_check`
    plus the boundary term ``(U_last^2 - U_first^2) / h^2`` left by the
    Laplacian, which is negligible once the tails have decayed.
    """
    u = np.asarray(u, dtype=float)
    f = stationary_residual(u, params)
    nxt = np.append(u[1:], 0.0)
    prv = np.insert(u[:-1], 0, 0.0)
    return float(math.fsum(f * (nxt - prv)))
