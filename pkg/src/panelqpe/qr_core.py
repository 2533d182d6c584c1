"""Check-loss machinery and the local linear quantile regression fit.

The estimator minimizes, jointly over per-unit intercepts and a common
slope, the kernel-weighted check loss of residuals around the evaluation
point. A smoothing homotopy drives the fit: for a geometrically shrinking
smoothing parameter a joint Newton pass (intercept block eliminated through
its diagonal structure) minimizes the smoothed loss over all coordinates at
once, and the fine smoothing levels interleave exact weighted-quantile
intercept updates with a guarded majorize-minimize slope step. Pure block
alternation is not used on its own: it can stall at points that are
blockwise but not jointly optimal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._smooth_newton import SmoothedCheckLoss, minimize_arrowhead
from .errors import AllWeightsZero, NoLocalData, RankDeficientDesign
from .kernels import EPANECHNIKOV, KernelSpec, kernel_weights
from .model import EvalSpec, PanelData


def check_loss(u, tau: float):
    """Piecewise-linear quantile loss (tau - 1{u <= 0}) u."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    out = np.where(u > 0.0, tau * u, (tau - 1.0) * u)
    return float(out) if out.ndim == 0 else out


def weighted_quantile(values, weights, tau: float) -> float:
    """Exact minimizer of sum_t w_t rho_tau(v_t - q) over q.

    Returns the left endpoint when the minimizing set is an interval; the
    result is always one of the input values.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape or v.ndim != 1:
        raise ValueError("values and weights must be 1-d and of equal length")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    keep = w > 0.0
    if not keep.any():
        raise AllWeightsZero("all weights are zero")
    v, w = v[keep], w[keep]
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cw = np.cumsum(w)
    k = int(np.argmax(cw >= tau * cw[-1]))
    return float(v[k])


class _SlotQuantile:
    """Vectorized per-unit weighted quantiles over a fixed slot layout.

    Requires the slot array to be non-decreasing with every slot occupied,
    which holds for the active-observation layout produced by `localize`.
    """

    def __init__(self, slot: np.ndarray, n_slots: int):
        if slot.size and np.any(np.diff(slot) < 0):
            raise ValueError("slot array must be non-decreasing")
        self.slot = slot
        self.n = n_slots
        self.starts = np.flatnonzero(np.r_[True, slot[1:] != slot[:-1]])
        self.ends = np.r_[self.starts[1:], slot.size] - 1
        self.positions = np.arange(slot.size)

    def __call__(self, values: np.ndarray, weights: np.ndarray, tau: float) -> np.ndarray:
        order = np.lexsort((values, self.slot))
        v = values[order]
        cw = np.cumsum(weights[order])
        base = np.r_[0.0, cw[self.ends[:-1]]]
        seg_cw = cw - base[self.slot]
        totals = seg_cw[self.ends]
        ok = seg_cw >= tau * totals[self.slot]
        idx = np.where(ok, self.positions, self.slot.size)
        first = np.minimum.reduceat(idx, self.starts)
        return v[first]


@dataclass(frozen=True)
class QrOptions:
    """Solver controls for the homotopy check-loss fit."""

    max_iter: int = 500
    beta_tol: float = 1e-8
    obj_rel_tol: float = 1e-12
    eps_scale: float = 0.1
    eps_factor: float = 0.5
    eps_floor: float = 1e-10


@dataclass(frozen=True)
class FitResult:
    """Estimated slope, per-unit intercepts, and solver diagnostics.

    ``eta`` has one entry per panel unit; units with zero total kernel
    weight carry NaN and are listed in ``dropped_units``.
    """

    beta: np.ndarray
    eta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    dropped_units: frozenset = frozenset()
    status: str = "converged"
    objective_trace: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class LocalProblem:
    """Kernel-active observations around one evaluation point."""

    n_all: int
    retained: np.ndarray      # original unit indices with positive mass
    dropped: frozenset
    slot: np.ndarray          # (m,) retained-slot index per active observation
    y: np.ndarray             # (m,)
    xdiff: np.ndarray         # (m, d) regressor offsets X - x
    w: np.ndarray             # (m,) strictly positive kernel weights
    scale: float

    @property
    def n_units(self) -> int:
        return len(self.retained)


def localize(p: PanelData, spec: EvalSpec, kernel: KernelSpec = EPANECHNIKOV) -> LocalProblem:
    """Extract the observations with positive kernel weight at spec.x."""
    if spec.dim != p.dim:
        raise ValueError(f"evaluation point has dim {spec.dim}, panel has {p.dim}")
    xdiff = p.x - spec.x
    w = kernel_weights(kernel, xdiff / spec.h)
    active = w > 0.0
    if not active.any():
        raise NoLocalData("no observation has positive kernel weight at x")
    unit_mass = active.any(axis=1)
    retained = np.flatnonzero(unit_mass)
    dropped = frozenset(int(i) for i in np.flatnonzero(~unit_mass))
    slot_of_unit = np.full(p.n_units, -1, dtype=np.intp)
    slot_of_unit[retained] = np.arange(len(retained))
    ii, tt = np.nonzero(active)
    y = p.y[ii, tt]
    std = float(np.std(y))
    return LocalProblem(
        n_all=p.n_units,
        retained=retained,
        dropped=dropped,
        slot=slot_of_unit[ii],
        y=y,
        xdiff=xdiff[ii, tt],
        w=w[ii, tt],
        scale=std if std > 0.0 else 1.0,
    )


def check_design_rank(design: np.ndarray, w: np.ndarray, slot: np.ndarray, n_slots: int):
    """Require the within-unit weighted design variation to span all columns."""
    p = design.shape[1]
    totals = np.bincount(slot, weights=w, minlength=n_slots)
    means = np.empty((n_slots, p))
    for j in range(p):
        means[:, j] = np.bincount(slot, weights=w * design[:, j], minlength=n_slots) / totals
    centered = (design - means[slot]) * np.sqrt(w)[:, None]
    if np.linalg.matrix_rank(centered) < p:
        raise RankDeficientDesign(
            f"local design spans fewer than {p} dimensions after demeaning"
        )


def _objective(loc: LocalProblem, design: np.ndarray, phi: np.ndarray,
               eta_s: np.ndarray, tau: float) -> float:
    r = loc.y - design @ phi - eta_s[loc.slot]
    return float(np.dot(loc.w, check_loss(r, tau)))


def _subgradient_certificate(loc: LocalProblem, design: np.ndarray, phi: np.ndarray,
                             eta_s: np.ndarray, tau: float) -> bool:
    """Blockwise optimality of the slope given the intercepts.

    Observations with (numerically) zero residual contribute a subgradient
    interval; the check verifies componentwise that zero is attainable.
    """
    r = loc.y - design @ phi - eta_s[loc.slot]
    ztol = 1e-6 * max(loc.scale, 1e-12)
    zero = np.abs(r) <= ztol
    psi = np.where(r > 0.0, tau, tau - 1.0)
    wd = loc.w[:, None] * design
    g_fixed = (psi[~zero, None] * wd[~zero]).sum(axis=0)
    lo = np.minimum((tau - 1.0) * wd[zero], tau * wd[zero]).sum(axis=0)
    hi = np.maximum((tau - 1.0) * wd[zero], tau * wd[zero]).sum(axis=0)
    pad = 1e-6 * (1.0 + np.abs(wd).sum(axis=0))
    target = -g_fixed
    return bool(np.all(lo - pad <= target) and np.all(target <= hi + pad))


def fit_llqr(
    p: PanelData,
    spec: EvalSpec,
    opts: QrOptions | None = None,
    *,
    kernel: KernelSpec = EPANECHNIKOV,
    init: FitResult | None = None,
) -> FitResult:
    """Local linear quantile regression with one intercept per unit.

    The slope is carried internally in bandwidth units for conditioning and
    converted back on output. See the module docstring for the solver.
    """
    opts = opts or QrOptions()
    tau = spec.tau
    loc = localize(p, spec, kernel)
    design = loc.xdiff / spec.h
    d = design.shape[1]
    n = loc.n_units
    check_design_rank(design, loc.w, loc.slot, n)
    quantiles = _SlotQuantile(loc.slot, n)
    ones = np.ones_like(loc.w)

    if init is not None:
        phi = np.asarray(init.beta, dtype=float) * spec.h
        eta_s = np.asarray(init.eta, dtype=float)[loc.retained]
        bad = ~np.isfinite(eta_s)
        if bad.any():
            eta_s = np.where(bad, quantiles(loc.y, ones, tau), eta_s)
    else:
        phi = np.zeros(d)
        eta_s = quantiles(loc.y, ones, tau)

    eps0 = max(opts.eps_scale * loc.scale, opts.eps_floor)
    eps_gate = max(opts.eps_floor, 1e-9 * max(loc.scale, 1.0)) * (1.0 + 1e-12)
    max_step = 10.0 * (loc.scale + 1.0)
    half_shift = (tau - 0.5) * (loc.w[:, None] * design).sum(axis=0)

    obj = _objective(loc, design, phi, eta_s, tau)
    trace = [obj]
    stop_rule = False
    iterations = 0
    for it in range(opts.max_iter):
        iterations = it + 1
        eps = max(eps0 * opts.eps_factor ** it, opts.eps_floor)
        at_floor = eps <= eps_gate
        phi_prev, eta_prev, obj_prev = phi, eta_s, obj

        # track each level's smoothed optimum just closely enough: the
        # smoothing itself perturbs the solution by O(eps)
        level_tol = 1e-6 if eps > 1e-5 * loc.scale else 1e-9
        info = minimize_arrowhead(
            loc.y, design, loc.slot, loc.w, n,
            SmoothedCheckLoss(tau, eps), eta_s, phi,
            max_iter=12, grad_tol=level_tol, max_step=max_step,
        )
        eta_s, phi = info.eta, info.coef

        if eps <= 1e-2 * loc.scale:
            # exact intercept update, then one MM slope step: weighted least
            # squares against the quadratic majorizer of the smoothed loss
            eta_s = quantiles(loc.y - design @ phi, loc.w, tau)
            level = loc.y - eta_s[loc.slot]
            wq = loc.w / (2.0 * (eps + np.abs(level - design @ phi)))
            a_mat = design.T @ (wq[:, None] * design)
            rhs = design.T @ (wq * level) + half_shift
            try:
                phi_cand = np.linalg.solve(a_mat, rhs)
            except np.linalg.LinAlgError:
                phi_cand = np.linalg.lstsq(a_mat, rhs, rcond=None)[0]
            if _objective(loc, design, phi_cand, eta_s, tau) <= _objective(
                loc, design, phi, eta_s, tau
            ):
                phi = phi_cand

        obj_new = _objective(loc, design, phi, eta_s, tau)
        if obj_new > obj_prev:
            # smoothing can lift the true loss by at most eps/4 per unit of
            # kernel mass; keep the previous iterate and just shrink eps
            phi, eta_s, obj_new = phi_prev, eta_prev, obj_prev

        move = float(np.max(np.abs(phi - phi_prev))) / spec.h
        drop = obj - obj_new
        obj = obj_new
        trace.append(obj)
        if (
            at_floor
            and move < opts.beta_tol
            and drop < opts.obj_rel_tol * max(1.0, abs(obj))
        ):
            stop_rule = True
            break

    # final exact intercept polish so the profiling identity holds exactly
    eta_s = quantiles(loc.y - design @ phi, loc.w, tau)
    obj = _objective(loc, design, phi, eta_s, tau)
    trace.append(obj)

    certified = _subgradient_certificate(loc, design, phi, eta_s, tau)
    converged = stop_rule and certified
    if converged:
        status = "converged"
    elif not stop_rule:
        status = "max_iterations"
    else:
        status = "stationarity_unverified"

    eta = np.full(loc.n_all, np.nan)
    eta[loc.retained] = eta_s
    return FitResult(
        beta=phi / spec.h,
        eta=eta,
        objective=obj,
        iterations=iterations,
        converged=converged,
        dropped_units=loc.dropped,
        status=status,
        objective_trace=tuple(trace),
    )


def llqr_objective(
    eta, beta, p: PanelData, spec: EvalSpec, kernel: KernelSpec = EPANECHNIKOV
) -> float:
    """Kernel-weighted check loss at an arbitrary (eta, beta).

    Units with zero total kernel weight contribute nothing, whatever their
    eta entry holds.
    """
    eta = np.asarray(eta, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    xdiff = p.x - spec.x
    w = kernel_weights(kernel, xdiff / spec.h)
    active = w > 0.0
    if not active.any():
        return 0.0
    ii, tt = np.nonzero(active)
    r = p.y[ii, tt] - eta[ii] - xdiff[ii, tt] @ beta
    return float(np.dot(w[ii, tt], check_loss(r, spec.tau)))
