"""Self-check suites bundled behind the ``verify`` subcommand.

Each suite measures one quantity that is zero (or bounded) by construction
and compares it with a tolerance.  A suite never raises on a failed check; an
exception inside a suite is caught and reported as a failure of that suite.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import EvolutionConfig, integrate
from .lattice import (
    GaugeTriple,
    ModelParams,
    covariant_derivative_minus,
    covariant_derivative_plus,
    gauge_transform,
    gauge_transform_rates,
    product_identity_residual,
    system_residual,
)
from .stationary import (
    SeedSpec,
    asymmetric_tail_check,
    continuum_soliton,
    newton_solve,
    scalar_root_double,
    scalar_root_single,
    stationary_jacobian,
)

log = logging.getLogger(__name__)

DEFAULT_TOLERANCES = {
    "gauge_covariance": 1e-12,
    "product_identity": 1e-12,
    "constraint_preservation": 1e-8,
    "jacobian_fd": 1e-6,
    "scalar_roots": 1e-13,
    "constraint_identity": 10.0,  # multiple of tol * 2||U||_1
    "soliton_ode": 1e-5,
}
SUITES = tuple(DEFAULT_TOLERANCES)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _random_complex(rng, n, scale=1.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def gauge_covariance_deviation(rng, trials: int = 100, size: int = 16) -> float:
    """Largest deviation from exact covariance of the covariant derivatives and
    from invariance of the sitewise residual moduli (relative to the residual
    size when that exceeds one), over random data."""
    worst = 0.0
    for _ in range(trials):
        h = rng.uniform(0.5, 2.0)
        phi = _random_complex(rng, size)
        phi_t = _random_complex(rng, size)
        a1 = rng.uniform(-2, 2, size - 1)
        gauge = GaugeTriple(rng.standard_normal(size), a1, rng.standard_normal(size),
                            alpha=rng.standard_normal(), beta=rng.standard_normal())
        a1_t = rng.standard_normal(size - 1)
        a2_t = rng.standard_normal(size)
        chi = rng.uniform(-np.pi, np.pi, size)
        chi_dot = rng.standard_normal(size)
        lam, p = rng.uniform(0.5, 2), rng.uniform(0.5, 3)

        phi2, gauge2 = gauge_transform(phi, gauge, chi, chi_dot, h)
        phase = np.exp(1j * chi)
        dp = np.max(np.abs(covariant_derivative_plus(phi2, gauge2.a1, h)
                           - phase * covariant_derivative_plus(phi, a1, h)))
        dm = np.max(np.abs(covariant_derivative_minus(phi2, gauge2.a1, h)
                           - phase * covariant_derivative_minus(phi, a1, h)))
        phi2_t, a1_t2 = gauge_transform_rates(phi, phi_t, a1_t, chi, chi_dot, h)
        r1 = system_residual(phi, phi_t, gauge, a1_t, a2_t, h, lam, p)
        r2 = system_residual(phi2, phi2_t, gauge2, a1_t2, a2_t, h, lam, p)
        # residual moduli are invariant; compare relative to their size
        dr = max(
            np.max(np.abs(np.abs(r1.schrodinger) - np.abs(r2.schrodinger)))
            / max(1.0, r1.norms["schrodinger"]),
            np.max(np.abs(r1.a1_evolution - r2.a1_evolution)) / max(1.0, r1.norms["a1_evolution"]),
            np.max(np.abs(r1.a2_evolution - r2.a2_evolution)) / max(1.0, r1.norms["a2_evolution"]),
            np.max(np.abs(r1.constraint - r2.constraint)) / max(1.0, r1.norms["constraint"]),
        )
        worst = max(worst, dp, dm, dr)
    return float(worst)


def product_identity_deviation(rng, trials: int = 100, size: int = 16) -> float:
    worst = 0.0
    for _ in range(trials):
        h = rng.uniform(0.5, 2.0)
        worst = max(worst, float(np.max(np.abs(product_identity_residual(
            _random_complex(rng, size), h)))))
    return worst


def constraint_preservation_ratio(rng, params: ModelParams, size: int = 41,
                                  t_end: float = 1.0) -> float:
    """Largest constraint residual along a short run, relative to ``max |phi|^2``.

    Both the per-snapshot reconstruction and the transported A2 are checked.
    """
    phi0 = _random_complex(rng, size)
    phi0 /= np.sqrt(params.h * np.sum(np.abs(phi0) ** 2))
    trace = integrate(phi0, params, EvolutionConfig(t_end=t_end, record_every=t_end / 10))
    scale = max(np.max(np.abs(phi) ** 2) for _, phi in trace.snapshots)
    worst = max(np.max(trace.constraint_series), np.max(trace.transported_constraint_series))
    return float(worst / scale)


def fd_jacobian(u, params, step: float = 1e-6, residual=None):
    from .stationary import stationary_residual
    residual = residual or stationary_residual
    u = np.asarray(u, dtype=float)
    jac = np.empty((u.size, u.size))
    for j in range(u.size):
        e = np.zeros(u.size)
        e[j] = step
        jac[:, j] = (residual(u + e, params) - residual(u - e, params)) / (2 * step)
    return jac


def jacobian_fd_deviation(rng, params: ModelParams, trials: int = 10, size: int = 41,
                          jacobian=stationary_jacobian) -> float:
    """Largest entrywise analytic-vs-central-difference mismatch, relative to ``max |J|``."""
    worst = 0.0
    for _ in range(trials):
        u = rng.uniform(-1.0, 1.0, size)
        ja = jacobian(u, params)
        jf = fd_jacobian(u, params)
        worst = max(worst, float(np.max(np.abs(ja - jf)) / np.max(np.abs(jf))))
    return worst


def scalar_root_deviation(params: ModelParams, hs=None) -> float:
    hs = np.logspace(-2, 4, 25) if hs is None else hs
    worst = 0.0
    lam, p, om = params.lam, params.p, params.omega
    for h in hs:
        q = params.with_h(float(h))
        u = scalar_root_single(q)
        w = scalar_root_double(q, u)
        single = abs(lam * u ** (2 * p) + 0.25 * h * h * u**4 - om)
        double = abs(lam * w ** (2 * p) - om + 0.25 * h * h * (w**4 + u**4))
        worst = max(worst, single / om, double / om)
    return float(worst)


def constraint_identity_ratio(params: ModelParams, tol: float = 1e-12):
    """``|full constraint| / (tol * 2 ||U||_1)`` on a solved single-site state.

    The denominator bounds ``sum F_n (U_{n+1} - U_{n-1})`` for a state whose
    residual is at most ``tol``.
    """
    state = newton_solve(SeedSpec("single_site"), params, tol=tol)
    if not state.converged:
        raise RuntimeError(f"stationary solve failed: {state.message}")
    full = asymmetric_tail_check(state.u, params)[1]
    return abs(full) / (tol * 2 * np.sum(np.abs(state.u))), state


def soliton_ode_deviation(params: ModelParams, dx: float = 5e-4, half_length: float = 10.0) -> float:
    """Central-difference residual of ``Q'' - Omega Q + lam Q^(2p+1)`` relative to ``Omega Q(0)``."""
    x = np.arange(-half_length, half_length + dx / 2, dx)
    q = continuum_soliton(x, params)
    qpp = (q[2:] - 2 * q[1:-1] + q[:-2]) / dx**2
    mid = q[1:-1]
    res = qpp - params.omega * mid + params.lam * mid ** (2 * params.p + 1)
    return float(np.max(np.abs(res)) / (params.omega * q.max()))


def run_suites(params: ModelParams, seed: int = 0, tolerance: float | None = None,
               jacobian=stationary_jacobian, trials: int = 100,
               only: tuple | None = None) -> list[SuiteResult]:
    """Run the verification suites; ``tolerance`` overrides every default tolerance."""
    rng = np.random.default_rng(seed)
    unit = ModelParams(params.lam, params.p, params.omega, 1.0, params.gamma)
    jobs = {
        "gauge_covariance": lambda: gauge_covariance_deviation(rng, trials),
        "product_identity": lambda: product_identity_deviation(rng, trials),
        "constraint_preservation": lambda: constraint_preservation_ratio(rng, unit),
        "jacobian_fd": lambda: jacobian_fd_deviation(rng, unit, max(1, trials // 10),
                                                     jacobian=jacobian),
        "scalar_roots": lambda: scalar_root_deviation(params),
        "constraint_identity": lambda: constraint_identity_ratio(params)[0],
        "soliton_ode": lambda: soliton_ode_deviation(params),
    }
    results = []
    for name in SUITES:
        if only and name not in only:
            continue
        tol = DEFAULT_TOLERANCES[name] if tolerance is None else tolerance
        try:
            measured = jobs[name]()
        except Exception as exc:  # reported, not raised
            log.exception("suite %s crashed", name)
            results.append(SuiteResult(name, False, float("nan"), tol, f"error: {exc}"))
            continue
        ok = bool(np.isfinite(measured) and measured <= tol)
        detail = "" if ok else "tolerance exceeded"
        results.append(SuiteResult(name, ok, measured, tol, detail))
        log.info("%s: %s (measured %.3g, tolerance %.3g)", name,
                 "pass" if ok else "FAIL", measured, tol)
    return results
