"""Continuation of stationary branches in the lattice spacing h.

Two drivers are provided.  :func:`natural_continue` steps h directly and warm
starts Newton from the previous profile; it stalls at a fold.
:func:`arclength_continue` follows the curve ``F(U, h) = 0`` in the extended
unknown ``(U, h)`` with a tangent predictor and a bordered Newton corrector, so
it turns around folds.  Folds are detected from sign changes of the
h-component of the unit tangent and refined by :func:`locate_fold`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .lattice import LatticeWindow, ModelParams, discrete_laplacian
from .stationary import (
    NewtonOptions,
    SeedSpec,
    StationaryState,
    asymmetric_tail_check,
    boundary_ratio,
    expand_window,
    newton_solve,
    residual_h_derivative,
    stationary_jacobian,
    stationary_residual,
)

log = logging.getLogger(__name__)


@dataclass
class StepControl:
    """Step-size policy shared by both continuation drivers.

    Steps start at ``initial_fraction * h`` (measured in h), halve on
    rejection, double after ``grow_after`` consecutive acceptances, and give up
    below ``floor_fraction * h``.
    """

    initial_fraction: float = 0.1
    grow_after: int = 4
    floor_fraction: float = 1e-6
    max_fraction: float = 0.25
    tol: float = 1e-12
    corrector_iter: int = 15
    max_jump: float = 0.5
    min_cos: float = 0.9
    expand_threshold: float = 1e-10
    expand_by: int = 10
    max_size: int = 1201


@dataclass
class BranchPoint:
    h: float
    state: StationaryState
    mass: float
    arc_param: float
    tangent_dh: float
    fold_flag: bool = False

    @property
    def residual(self) -> float:
        return self.state.residual_linf

    @property
    def iterations(self) -> int:
        return self.state.iterations


@dataclass
class Branch:
    points: list
    params: ModelParams
    seed_kind: str = "single_site"
    weight: float = 1.0
    termination: str = ""
    folds: list = field(default_factory=list)

    @property
    def fold_h(self) -> float | None:
        return self.folds[0] if self.folds else None

    @property
    def h_values(self) -> NDArray[np.float64]:
        return np.array([pt.h for pt in self.points])

    @property
    def masses(self) -> NDArray[np.float64]:
        return np.array([pt.mass for pt in self.points])

    def fold_brackets(self) -> list:
        """Indices ``i`` with a tangent sign change between points ``i`` and ``i+1``."""
        return [i for i in range(len(self.points) - 1)
                if self.points[i + 1].fold_flag]


class FoldNotFound(LookupError):
    pass


def _pad_to(u: NDArray, window: LatticeWindow, target: LatticeWindow) -> NDArray:
    left = window.n_min - target.n_min
    right = target.n_max - window.n_max
    return np.concatenate([np.zeros(left), u, np.zeros(right)])


def _union(a: LatticeWindow, b: LatticeWindow, h: float) -> LatticeWindow:
    return LatticeWindow(min(a.n_min, b.n_min), max(a.n_max, b.n_max), h)


def _weighted_dot(a, b, w):
    return w * w * float(np.dot(a[:-1], b[:-1])) + float(a[-1] * b[-1])


def _normalize(t, w):
    return t / math.sqrt(_weighted_dot(t, t, w))


def _extended_jacobian(u, params, t, w):
    # last unknown is ln h, so its column is h dF/dh
    n = u.size
    a = np.empty((n + 1, n + 1))
    a[:n, :n] = stationary_jacobian(u, params)
    a[:n, n] = params.h * residual_h_derivative(u, params)
    a[n, :n] = w * w * t[:-1]
    a[n, n] = t[-1]
    return a


def tangent(u: NDArray, params: ModelParams, weight: float,
            previous: NDArray | None = None) -> NDArray:
    """Unit tangent (weighted norm) of the solution curve at ``(u, ln h)``.

    With a previous tangent the bordered system is used, which stays regular
    at folds; the result is oriented to agree with ``previous``.
    """
    n = u.size
    if previous is None:
        jac = stationary_jacobian(u, params)
        f_eta = params.h * residual_h_derivative(u, params)
        try:
            z = np.linalg.solve(jac, -f_eta)
            t = np.append(z, 1.0)
        except np.linalg.LinAlgError:
            a = np.hstack([jac, f_eta[:, None]])
            t = np.linalg.svd(a)[2][-1]
        return _normalize(t, weight)
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    t = np.linalg.solve(_extended_jacobian(u, params, previous, weight), rhs)
    t = _normalize(t, weight)
    if _weighted_dot(t, previous, weight) < 0:
        t = -t
    return t


def _correct(x0, t0, ds, params, weight, ctl: StepControl):
    """Bordered Newton corrector from the predictor ``x0 + ds t0``."""
    n = x0.size - 1
    y = x0 + ds * t0
    for it in range(ctl.corrector_iter):
        if not np.isfinite(y[n]):
            return None, it
        p = params.with_h(math.exp(y[n]))
        f = stationary_residual(y[:n], p)
        g = _weighted_dot(t0, y - x0, weight) - ds
        if np.max(np.abs(f)) <= ctl.tol and abs(g) <= ctl.tol * max(1.0, abs(ds)):
            return y, it
        try:
            dy = np.linalg.solve(_extended_jacobian(y[:n], p, t0, weight), np.append(f, g))
        except np.linalg.LinAlgError:
            return None, it
        if not np.all(np.isfinite(dy)):
            return None, it
        y = y - dy
    if np.max(np.abs(stationary_residual(y[:n], params.with_h(math.exp(y[n]))))) <= ctl.tol:
        return y, ctl.corrector_iter
    return None, ctl.corrector_iter


def _make_point(u, window, params, h, arc, t_h, iterations, tol, fold=False):
    p = params.with_h(h)
    state = StationaryState.from_profile(u, p, window.with_h(h), iterations=iterations, tol=tol)
    return BranchPoint(h=h, state=state, mass=state.mass, arc_param=arc,
                       tangent_dh=float(t_h), fold_flag=fold)


def _maybe_expand(u, window, ctl: StepControl):
    if boundary_ratio(u) <= ctl.expand_threshold or window.size >= ctl.max_size:
        return u, window, 0, 0
    peak = np.max(np.abs(u))
    left = ctl.expand_by if abs(u[0]) > ctl.expand_threshold * peak else 0
    right = ctl.expand_by if abs(u[-1]) > ctl.expand_threshold * peak else 0
    u, window = expand_window(u, window, left, right)
    return u, window, left, right


def natural_continue(start: StationaryState, h_target: float,
                     control: StepControl | None = None, seed_kind: str = "single_site",
                     max_points: int = 10_000) -> Branch:
    """Step h from ``start.h`` toward ``h_target`` with warm-started Newton solves.

    A rejected step (Newton failure, or a profile change larger than
    ``max_jump`` relative to the peak) halves the step; once the step falls
    below the floor the branch terminates and the termination record names
    the last h reached.
    """
    ctl = control or StepControl()
    if not start.converged:
        raise ValueError("continuation needs a converged start state")
    params = start.params
    weight = 1.0 / max(np.linalg.norm(start.u), 1e-300)
    direction = 1.0 if h_target >= start.h else -1.0
    opts = NewtonOptions(tol=ctl.tol, expand_threshold=ctl.expand_threshold,
                         expand_by=ctl.expand_by, max_size=ctl.max_size)
    trivial = not np.any(start.u)

    u, window, h = start.u.copy(), start.window, start.h
    t = np.append(np.zeros_like(u), 1.0) if trivial else tangent(u, params, weight)
    if t[-1] * direction < 0:
        t = -t
    points = [BranchPoint(h, start, start.mass, 0.0, float(h * t[-1]))]
    branch = Branch(points, params, seed_kind, weight)
    dh = ctl.initial_fraction * h
    streak, arc = 0, 0.0
    while True:
        if direction * (h_target - h) <= 1e-14 * h:
            branch.termination = "target reached"
            break
        if len(points) >= max_points:
            branch.termination = "max_points"
            break
        if dh < ctl.floor_fraction * h:
            branch.termination = f"step floor reached at h={h:.10g}"
            break
        step = min(dh, abs(h_target - h))
        h_new = h + direction * step
        p_new = params.with_h(h_new)
        state = newton_solve(u, p_new, window, tol=ctl.tol, max_iter=30, options=opts)
        ok = state.converged
        if ok and not trivial:
            prev = _pad_to(u, window, state.window)
            peak = max(np.max(np.abs(state.u)), 1e-300)
            ok = np.max(np.abs(state.u - prev)) / peak <= ctl.max_jump
        if not ok:
            dh *= 0.5
            streak = 0
            continue
        u_prev = _pad_to(u, window, state.window)
        t_prev = np.append(_pad_to(t[:-1], window, state.window), t[-1])
        u, window, h_old, h = state.u, state.window, h, h_new
        t_new = t_prev if trivial else tangent(u, p_new, weight, t_prev)
        fold = bool(np.sign(t_new[-1]) != np.sign(t[-1]))
        d = np.append(u - u_prev, math.log(h / h_old))
        arc += math.sqrt(_weighted_dot(d, d, weight))
        t = t_new
        points.append(BranchPoint(h, state, state.mass, arc, float(h * t[-1]), fold))
        streak += 1
        if streak >= ctl.grow_after:
            dh *= 2.0
            streak = 0
    log.info("natural continuation: %d points, %s", len(points), branch.termination)
    return branch


def arclength_continue(start: StationaryState, direction: int = -1,
                       control: StepControl | None = None, max_points: int = 2000,
                       h_min: float = 1e-3, h_max: float = 1e4, max_folds: int | None = None,
                       seed_kind: str = "single_site", detect_loop: bool = True) -> Branch:
    """Pseudo-arclength continuation in ``(U, ln h)`` from a converged state.

    ``direction`` selects the initial sense of travel in h (+1 or -1).  The
    field part of the arclength is weighted by ``1 / ||U_start||`` and the
    parameter enters as ``ln h``, so both components are relative.  Stops on
    leaving ``[h_min, h_max]``, one point after the ``max_folds``-th fold, when
    the curve closes on itself, after ``max_points`` points, or when the
    corrector keeps failing below the step floor.
    """
    ctl = control or StepControl()
    if not start.converged:
        raise ValueError("continuation needs a converged start state")
    if direction not in (-1, 1):
        raise ValueError("direction must be +1 or -1")
    params = start.params
    norm_u = np.linalg.norm(start.u)
    if norm_u == 0:
        raise ValueError("arclength continuation needs a nonzero start state")
    weight = 1.0 / norm_u

    window = start.window
    x = np.append(start.u, math.log(start.h))
    t = tangent(start.u, params.with_h(start.h), weight)
    if np.sign(t[-1]) != direction:
        t = -t
    points = [BranchPoint(start.h, start, start.mass, 0.0, float(start.h * t[-1]))]
    branch = Branch(points, params, seed_kind, weight)
    ds = min(ctl.initial_fraction / max(abs(t[-1]), 1e-3), ctl.max_fraction)
    ds_floor = ctl.floor_fraction
    streak, arc, n_folds = 0, 0.0, 0
    x_start, t_start = x.copy(), t.copy()

    def pad(v, left, right):
        return np.concatenate([np.zeros(left), v[:-1], np.zeros(right), v[-1:]])

    while True:
        if len(points) >= max_points:
            branch.termination = "max_points"
            break
        if ds < ds_floor:
            branch.termination = (
                f"corrector failed at step floor near h={math.exp(x[-1]):.10g}")
            break
        y, its = _correct(x, t, ds, params, weight, ctl)
        accepted = False
        if y is not None:
            pred = x + ds * t
            dist = math.sqrt(_weighted_dot(y - pred, y - pred, weight))
            if dist <= ctl.max_jump * ds:
                t_new = tangent(y[:-1], params.with_h(math.exp(y[-1])), weight, t)
                accepted = _weighted_dot(t_new, t, weight) >= ctl.min_cos
        if not accepted:
            ds *= 0.5
            streak = 0
            continue
        fold = bool(np.sign(t_new[-1]) != np.sign(t[-1]))
        arc += ds
        h_new = math.exp(y[-1])
        u, window, left, right = _maybe_expand(y[:-1], window.with_h(h_new), ctl)
        if left or right:
            t_new = pad(t_new, left, right)
            x_start, t_start = pad(x_start, left, right), pad(t_start, left, right)
            polished = newton_solve(u, params.with_h(h_new), window, tol=ctl.tol,
                                    auto_expand=False)
            if polished.converged:
                u = polished.u
        x_prev = pad(x, left, right)
        x = np.append(u, y[-1])
        t = t_new
        points.append(_make_point(u, window, params, h_new, arc, h_new * t[-1], its,
                                  ctl.tol, fold))
        if fold:
            n_folds += 1
            log.info("fold between h=%.8g and h=%.8g", points[-2].h, h_new)
        streak += 1
        if streak >= ctl.grow_after:
            ds = min(2.0 * ds, ctl.max_fraction)
            streak = 0
        if h_new < h_min or h_new > h_max:
            branch.termination = f"left h range at h={h_new:.10g}"
            break
        if max_folds is not None and n_folds >= max_folds and not fold:
            branch.termination = f"fold limit {max_folds}"
            break
        if detect_loop and arc > 4 * ctl.max_fraction:
            # crossing the hyperplane through the start point, close to it
            before = _weighted_dot(x_prev - x_start, t_start, weight)
            after = _weighted_dot(x - x_start, t_start, weight)
            d = x - x_start
            if before < 0 <= after and math.sqrt(_weighted_dot(d, d, weight)) < 2 * ds:
                branch.termination = "closed loop"
                break
    branch.folds = [locate_fold(branch, i, control=ctl) for i in branch.fold_brackets()]
    log.info("arclength continuation: %d points, %d folds, %s",
             len(points), len(branch.folds), branch.termination)
    return branch


def locate_fold(branch: Branch, index: int | None = None, rtol: float = 1e-6,
                control: StepControl | None = None) -> float:
    """Refine the fold between points ``index`` and ``index + 1`` of ``branch``.

    Bisects along the arclength on the sign of the tangent h-component until
    the bracket's h values agree to well below ``rtol``.  Raises
    :class:`FoldNotFound` when the branch has no tangent sign change.
    """
    ctl = control or StepControl()
    brackets = branch.fold_brackets()
    if not brackets:
        raise FoldNotFound("no sign change of dh/ds along the branch")
    if index is None:
        index = brackets[0]
    a, b = branch.points[index], branch.points[index + 1]
    params, w = branch.params, branch.weight
    win = _union(a.state.window, b.state.window, a.h)
    x0 = np.append(_pad_to(a.state.u, a.state.window, win), math.log(a.h))
    xb = np.append(_pad_to(b.state.u, b.state.window, win), math.log(b.h))
    t0 = tangent(x0[:-1], params.with_h(a.h), w)
    # orient along the direction of travel
    if _weighted_dot(t0, xb - x0, w) < 0:
        t0 = -t0
    sign_a = np.sign(t0[-1])
    lo, hi = 0.0, b.arc_param - a.arc_param
    h_lo, h_hi = a.h, b.h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        y, _ = _correct(x0, t0, mid, params, w, ctl)
        if y is None:
            break
        h_mid = math.exp(y[-1])
        t_mid = tangent(y[:-1], params.with_h(h_mid), w, t0)
        if np.sign(t_mid[-1]) == sign_a:
            lo, h_lo = mid, h_mid
        else:
            hi, h_hi = mid, h_mid
        if abs(h_hi - h_lo) <= 1e-3 * rtol * h_mid and hi - lo <= 1e-3 * rtol * max(hi, 1e-12):
            break
    # h is extremal at the fold
    return float(min(h_lo, h_hi) if sign_a < 0 else max(h_lo, h_hi))


def fold_h_or_none(branch: Branch) -> float | None:
    try:
        return locate_fold(branch)
    except FoldNotFound:
        return None


def connection_mismatch(branch: Branch, index: int = -1) -> dict:
    """Distance from a branch point to the anti-continuum seeds solved at the same h.

    Returns the relative l-infinity distance, minimised over small lattice
    shifts and reflection, to the converged single-site and double-site states (``inf`` when that solve fails).  A small value means
    the branch has landed on that family; both large is recorded as a
    mismatch, the signature of branches that connect elsewhere.
    """
    pt = branch.points[index]
    u, win = pt.state.u, pt.state.window
    params = branch.params.with_h(pt.h)
    out = {"h": pt.h}
    for kind in ("single_site", "double_site"):
        ref = newton_solve(SeedSpec(kind), params)
        if not ref.converged:
            out[kind] = math.inf
            continue
        both = _union(win, ref.window, pt.h)
        a, b = _pad_to(u, win, both), _pad_to(ref.u, ref.window, both)
        a, b = np.pad(a, 3), np.pad(b, 3)
        # states are defined up to lattice translation and reflection
        out[kind] = min(float(np.max(np.abs(np.roll(c, k) - b)) / np.max(np.abs(b)))
                        for c in (a, a[::-1]) for k in range(-3, 4))
    out["mismatch"] = min(out["single_site"], out["double_site"]) > 1e-6
    return out


SCALING_PRESETS = {
    "critical": lambda p: 1.0 / (2.0 - p),
    "unit": lambda p: 1.0,
    "inverse": lambda p: -1.0,
}


def scaling_exponent(preset: str, p: float) -> float:
    if preset == "critical" and p == 2:
        raise ValueError("the critical scaling exponent 1/(2-p) is undefined for p = 2")
    return SCALING_PRESETS[preset](p)


def scaled_coefficients(h, p, a):
    """Coefficients of the rescaled first equation:
    ``(laplacian, frequency factor h^(2ap), potential)``.

    Written with ``**`` only so symbolic ``h`` is accepted.
    """
    return h ** (-2 * (1 - a * p)), h ** (2 * a * p), h ** (2 + 2 * a * (p - 2))


def scale_solution(u: ArrayLike, g: ArrayLike, params: ModelParams, a: float):
    """``U~ = h^a U``, ``G~ = h^(4a-2) G``, ``Omega~ = h^(2ap) Omega``."""
    h = params.h
    return (h**a * np.asarray(u, dtype=float), h ** (4 * a - 2) * np.asarray(g, dtype=float),
            h ** (2 * a * params.p) * params.omega)


def scaled_system_residual(u_tilde: ArrayLike, g_tilde: ArrayLike, params: ModelParams,
                           a: float | str) -> NDArray[np.float64]:
    """Residual of the rescaled stationary equations for scaling exponent ``a``.

    ``a`` may be a number or one of the presets ``critical`` (1/(2-p)),
    ``unit`` (1) or ``inverse`` (-1).  ``params.omega`` is the unscaled
    frequency; the scaled one is ``h^(2ap) Omega``.  Returns the first
    equation sitewise; see :func:`scaled_potential_residual` for the second.
    """
    if isinstance(a, str):
        a = scaling_exponent(a, params.p)
    u = np.asarray(u_tilde, dtype=float)
    g = np.asarray(g_tilde, dtype=float)
    c_lap, c_om, c_g = scaled_coefficients(params.h, params.p, a)
    lap = discrete_laplacian(u, 1.0)
    return (c_lap * lap - c_om * params.omega * u + c_g * g * u
            + params.lam * np.abs(u) ** (2 * params.p) * u)


def scaled_potential_residual(u_tilde: ArrayLike, g_tilde: ArrayLike,
                              gamma_tilde: float = 0.0) -> NDArray[np.float64]:
    """``G~(n+1) - G~(n) + |U~(n)|^4 / 4``, padded with ``gamma_tilde``."""
    u = np.asarray(u_tilde, dtype=float)
    g = np.asarray(g_tilde, dtype=float)
    nxt = np.append(g[1:], gamma_tilde)
    return nxt - g + 0.25 * u**4


def constraint_defect(point: BranchPoint) -> float:
    """Full solvability-constraint sum at a branch point (zero for true solutions)."""
    return asymmetric_tail_check(point.state.u, point.state.params)[1]
