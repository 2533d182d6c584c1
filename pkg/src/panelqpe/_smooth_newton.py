"""Newton solver for losses with one intercept per unit plus a common slope.

The Hessian of such problems is an arrowhead matrix: a diagonal block with
one entry per intercept, bordered by a small dense slope block. The Newton
step eliminates the intercept block first and solves only the slope-sized
Schur complement, then back-substitutes; this matches a dense factorization
of the full Hessian exactly while costing O(units x slope_dim^2).

Losses are evaluated through residuals, so line-search trials cost two
vector passes via an incremental residual update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SolveInfo:
    eta: np.ndarray
    coef: np.ndarray
    value: float
    grad_inf: float
    iterations: int
    converged: bool
    status: str


def blocks_from_residuals(r, w, d1, d2, design, slot, n_slots):
    """Gradient and Hessian blocks of sum_i w_i loss(r_i) wrt (eta, coef).

    ``d1``/``d2`` are the loss derivatives at the residuals; the residual is
    y - eta_slot - design @ coef, so the chain rule contributes a sign flip
    on gradients and none on the Hessian.
    """
    wd1 = w * d1
    wd2 = w * d2
    grad_eta = -np.bincount(slot, weights=wd1, minlength=n_slots)
    grad_coef = -(design.T @ wd1)
    hess_eta = np.bincount(slot, weights=wd2, minlength=n_slots)
    p = design.shape[1]
    hess_cross = np.empty((n_slots, p))
    for j in range(p):
        hess_cross[:, j] = np.bincount(slot, weights=wd2 * design[:, j], minlength=n_slots)
    hess_coef = design.T @ (wd2[:, None] * design)
    return grad_eta, grad_coef, hess_eta, hess_cross, hess_coef


def arrowhead_direction(grad_eta, grad_coef, hess_eta, hess_cross, hess_coef,
                        reg: float = 1e-10):
    """Newton direction via Schur elimination of the intercept block.

    Returns (d_eta, d_coef, newton_used); falls back to steepest descent
    when the regularized diagonal block or the Schur complement fails to be
    positive definite (the smoothed loss need not be convex).
    """
    d_diag = hess_eta + reg * (1.0 + np.abs(hess_eta))
    if np.all(d_diag > 0.0):
        schur = hess_coef - hess_cross.T @ (hess_cross / d_diag[:, None])
        rhs = -grad_coef + hess_cross.T @ (grad_eta / d_diag)
        try:
            chol = np.linalg.cholesky(schur)
            d_coef = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            d_eta = (-grad_eta - hess_cross @ d_coef) / d_diag
            if float(grad_eta @ d_eta + grad_coef @ d_coef) < 0.0:
                return d_eta, d_coef, True
        except np.linalg.LinAlgError:
            pass
    return -grad_eta, -grad_coef, False


def minimize_arrowhead(
    y: np.ndarray,
    design: np.ndarray,
    slot: np.ndarray,
    w: np.ndarray,
    n_slots: int,
    loss,
    eta0: np.ndarray,
    coef0: np.ndarray,
    *,
    max_iter: int = 200,
    grad_tol: float = 1e-8,
    armijo_c: float = 1e-4,
    backtrack: float = 0.5,
    max_backtracks: int = 60,
    reg: float = 1e-10,
    max_step: float = np.inf,
) -> SolveInfo:
    """Damped Newton with arrowhead elimination and Armijo line search.

    ``loss`` provides vectorized ``value``, ``d1`` and ``d2`` of the
    per-observation loss as functions of the residual. Every accepted step
    strictly decreases the weighted objective. ``max_step`` caps the
    direction's max-norm: near-zero curvature rows otherwise blow the
    Newton direction up beyond what any line search can rescue.
    """
    eta = np.array(eta0, dtype=float)
    coef = np.atleast_1d(np.array(coef0, dtype=float))
    r = y - design @ coef - eta[slot]
    val = float(np.dot(w, loss.value(r)))
    status = "max_iterations"
    it = 0
    grad_inf = np.inf
    for it in range(1, max_iter + 1):
        d1 = loss.d1(r)
        d2 = loss.d2(r)
        g_eta, g_coef, h_eta, h_cross, h_coef = blocks_from_residuals(
            r, w, d1, d2, design, slot, n_slots
        )
        grad_inf = max(
            float(np.max(np.abs(g_eta))) if g_eta.size else 0.0,
            float(np.max(np.abs(g_coef))),
        )
        if grad_inf < grad_tol * (1.0 + abs(val)):
            return SolveInfo(eta, coef, val, grad_inf, it - 1, True, "converged")

        d_eta, d_coef, _ = arrowhead_direction(g_eta, g_coef, h_eta, h_cross, h_coef, reg)
        slope = float(g_eta @ d_eta + g_coef @ d_coef)
        if slope >= 0.0:
            d_eta, d_coef = -g_eta, -g_coef
            slope = -(float(g_eta @ g_eta) + float(g_coef @ g_coef))
        norm = max(
            float(np.max(np.abs(d_eta))) if d_eta.size else 0.0,
            float(np.max(np.abs(d_coef))),
        )
        if norm > max_step:
            shrink = max_step / norm
            d_eta = d_eta * shrink
            d_coef = d_coef * shrink
            slope *= shrink

        dr = design @ d_coef + d_eta[slot]
        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            r_trial = r - step * dr
            trial_val = float(np.dot(w, loss.value(r_trial)))
            if trial_val <= val + armijo_c * step * slope:
                accepted = True
                break
            step *= backtrack
        if not accepted:
            status = "line_search_failed"
            break
        eta = eta + step * d_eta
        coef = coef + step * d_coef
        r = r_trial
        val = trial_val

    converged = grad_inf < grad_tol * (1.0 + abs(val))
    if converged:
        status = "converged"
    return SolveInfo(eta, coef, val, grad_inf, it, converged, status)


class SmoothedCheckLoss:
    """Check loss convolved with an Epanechnikov kernel of half-width eps.

    Convex, twice continuously differentiable in the interior of the band,
    with a continuous second derivative everywhere; it sandwiches the check
    loss within 0.1875 eps. Outside the band the derivative equals the
    exact check-loss slope.
    """

    def __init__(self, tau: float, eps: float):
        self.tau = tau
        self.eps = eps

    def value(self, r):
        s = np.clip(r * (1.0 / self.eps), -1.0, 1.0)
        s2 = s * s
        cdf = 0.5 + s * (0.75 - 0.25 * s2)
        ramp = r * cdf - self.eps * (s2 * (0.375 - 0.1875 * s2) - 0.1875)
        return (self.tau - 1.0) * r + ramp

    def d1(self, r):
        s = np.clip(r * (1.0 / self.eps), -1.0, 1.0)
        return (self.tau - 0.5) + s * (0.75 - 0.25 * s * s)

    def d2(self, r):
        s = r * (1.0 / self.eps)
        s2 = s * s
        return np.where(s2 <= 1.0, (0.75 / self.eps) * (1.0 - s2), 0.0)
