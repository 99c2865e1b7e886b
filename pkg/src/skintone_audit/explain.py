"""Pertinent-positive explanations by accelerated proximal gradient.

Solves, for a net ``f`` whose decision on ``x`` is class ``k``::

    min_d  c * f_kappa(d) + beta * ||d||_1 + ||d||_2^2    s.t.  0 <= d <= x

with ``f_kappa(d) = max(max_{j != k} f(d)_j - f(d)_k, -kappa)``. The smooth
part is ``c * f_kappa + ||d||^2``; the L1 term and the box are handled
together by a prox step (soft-threshold, then clip to the box).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Diverged, EmptyGroup, NotClassifiedK
from .model.net import MALE, FEMALE, CompactNet

log = logging.getLogger(__name__)

WINDOW = 20
MAX_BACKTRACKS = 60
KINK_TOL = 1e-6


@dataclass(frozen=True)
class CemParams:
    kappa: float = 10.0
    beta: float = 0.1
    c_grid: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    max_iters: int = 1000
    step_size: float = 1.0
    tolerance: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))
        if not self.c_grid or min(self.c_grid) <= 0:
            raise ValueError("c_grid must hold positive values")
        if self.kappa < 0 or self.beta < 0:
            raise ValueError("kappa and beta must be nonnegative")
        if self.max_iters <= 0 or self.step_size <= 0 or self.tolerance <= 0:
            raise ValueError("max_iters, step_size and tolerance must be positive")


@dataclass(frozen=True, eq=False)
class PertinentPositive:
    delta: np.ndarray
    achieved_f_kappa: float
    chosen_c: float
    objective_trace: tuple[float, ...]
    converged: bool
    iterations: int = 0
    target_class: int = 0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def l1(self) -> float:
        return float(np.abs(self.delta).sum())


@dataclass(frozen=True, eq=False)
class AverageMask:
    label: str
    mean: np.ndarray
    count: int


def f_kappa(logit_vec, k: int, kappa: float) -> float:
    z = np.asarray(logit_vec, dtype=np.float64)
    others = np.delete(z, k)
    return float(max(others.max() - z[k], -kappa))


def decision_class(logit_vec) -> int:
    """Male only on a strict logit win, matching ``s > 0.5``."""
    z = np.asarray(logit_vec)
    return MALE if z[MALE] > z[FEMALE] else FEMALE


def soft_threshold(v, lam: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_elastic_box(v, lam: float, upper) -> np.ndarray:
    """argmin_z 0.5*(z - v)^2 + lam*|z| over 0 <= z <= upper, elementwise.

    Separable and convex per coordinate, so the box-constrained minimizer is
    the clipped unconstrained one.
    """
    return np.clip(soft_threshold(v, lam), 0.0, upper)


def _margin_and_grad(net: CompactNet, delta: np.ndarray, k: int):
    """``max_{j != k} z_j - z_k`` and its input gradient."""
    out, caches = net.forward(delta[None])
    z = out[0]
    others = [j for j in range(len(z)) if j != k]
    j = max(others, key=lambda i: (z[i], -i))
    dz = np.zeros_like(z)
    dz[j], dz[k] = 1.0, -1.0
    dx, _ = net.backward(caches, dz[None])
    return float(z[j] - z[k]), dx[0]


def composite_objective(net: CompactNet, x_delta, k: int, c: float, params: CemParams) -> float:
    d = np.asarray(x_delta, dtype=np.float64)
    fk = f_kappa(net.logits(d), k, params.kappa)
    return c * fk + params.beta * float(np.abs(d).sum()) + float(np.sum(d * d))


def pertinent_positive(net: CompactNet, x, k: int, c: float,
                       params: CemParams | None = None) -> PertinentPositive:
    """Accelerated projected proximal gradient (FISTA) with backtracking.

    Momentum restarts whenever a step would raise the objective; such steps
    are rejected, so the iterate objective is nonincreasing. If the run ends
    on the hinge kink, prox-linear refinement steps continue within the same
    iteration budget.
    """
    params = params or CemParams()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} does not match net {net.input_shape}")
    if x.min() < 0:
        raise ValueError("input must be nonnegative (normalized pixel space)")
    if decision_class(net.logits(x)) != k:
        raise NotClassifiedK(f"model does not classify the input as class {k}")
    kappa, beta = params.kappa, params.beta

    def smooth(d):
        margin, g = _margin_and_grad(net, d, k)
        if margin > -kappa:
            value, grad = c * margin + float(np.sum(d * d)), c * g + 2.0 * d
        else:
            value, grad = -c * kappa + float(np.sum(d * d)), 2.0 * d
        return value, grad, max(margin, -kappa)

    def smooth_value(d):
        fk = f_kappa(net.logits(d), k, kappa)
        return c * fk + float(np.sum(d * d)), fk

    def total(smooth_value, d):
        return smooth_value + beta * float(np.abs(d).sum())

    cur = np.zeros_like(x)
    g_cur, _, fk_cur = smooth(cur)
    f_cur = total(g_cur, cur)
    y = cur.copy()
    t = 1.0
    lip = 1.0 / params.step_size
    trace = [f_cur]
    converged = False
    support = cur > 0
    support_since = 0
    it = 0
    for it in range(1, params.max_iters + 1):
        g_y, grad_y, _ = smooth(y)
        for _ in range(MAX_BACKTRACKS):
            cand = prox_elastic_box(y - grad_y / lip, beta / lip, x)
            g_cand, fk_cand = smooth_value(cand)
            step = cand - y
            if g_cand <= g_y + float(np.sum(grad_y * step)) + 0.5 * lip * float(np.sum(step * step)) + 1e-12:
                break
            lip *= 2.0
        f_cand = total(g_cand, cand)
        if not math.isfinite(f_cand):
            raise Diverged(f"objective became {f_cand} at iteration {it}")
        if f_cand > f_cur:
            # Rejected step: restart momentum from the current iterate.
            t, y = 1.0, cur.copy()
        else:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = cand + ((t - 1.0) / t_next) * (cand - cur)
            t = t_next
            cur, f_cur, fk_cur = cand, f_cand, fk_cand
        trace.append(f_cur)

        new_support = cur > 0
        if np.array_equal(new_support, support):
            support_since += 1
        else:
            support, support_since = new_support, 0
        if len(trace) > WINDOW and trace[-WINDOW - 1] - trace[-1] < params.tolerance:
            converged = True
            break
    # A saturated hinge with settled support also counts as converged, but is not
    # a reason to stop early: the elastic-net term can still shrink the iterate.
    converged = converged or (fk_cur <= -kappa and support_since >= WINDOW)

    margin, grad_m = _margin_and_grad(net, cur, k)
    if abs(margin + kappa) <= KINK_TOL * max(1.0, kappa) and it < params.max_iters:
        # Gradient steps stall when the optimum sits on the hinge kink; slide
        # along it with prox-linear steps, which model the kink exactly.
        lip = KINK_TOL
        for it in range(it + 1, params.max_iters + 1):
            for _ in range(MAX_BACKTRACKS):
                cand = _prox_linear_step(cur, margin, grad_m, c, params, lip, x)
                f_cand, fk_cand = smooth_value(cand)
                f_cand = total(f_cand, cand)
                if f_cand <= f_cur:
                    break
                lip *= 2.0
            else:
                break
            gain = f_cur - f_cand
            cur, f_cur, fk_cur = cand, f_cand, fk_cand
            trace.append(f_cur)
            if gain < params.tolerance:
                converged = True
                break
            lip = max(lip / 2.0, KINK_TOL)
            margin, grad_m = _margin_and_grad(net, cur, k)
    return PertinentPositive(cur, fk_cur, c, tuple(trace), converged, it, k)


def _prox_linear_step(d, margin, grad_m, c, params: CemParams, lip, upper):
    """Exact minimizer over the box of the model with the margin linearized at ``d``.

    ``c * max(a, -kappa) = max over lam in [0, 1] of c * (lam * a - (1 - lam) * kappa)``,
    and for fixed ``lam`` the problem separates per coordinate. The dual is
    concave in ``lam``, so its maximizer is found by bisection on the slope.
    """
    def primal(lam):
        return np.clip((lip * d - c * lam * grad_m - params.beta) / (2.0 + lip), 0.0, upper)

    def slope(lam):
        return margin + float(np.sum(grad_m * (primal(lam) - d))) + params.kappa

    if slope(0.0) <= 0.0:
        return primal(0.0)
    if slope(1.0) >= 0.0:
        return primal(1.0)
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if slope(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return primal(hi)


def search_c(net: CompactNet, x, k: int, params: CemParams | None = None) -> PertinentPositive:
    """Solve for every c; keep the sparsest run that preserves class ``k``.

    If no run reaches ``f_kappa < 0``, the run with the lowest ``f_kappa``
    is returned with ``converged=False``.
    """
    params = params or CemParams()
    runs = [pertinent_positive(net, x, k, c, params) for c in params.c_grid]
    keep = [r for r in runs if r.achieved_f_kappa < 0]
    if keep:
        return min(keep, key=lambda r: (r.l1, r.chosen_c))
    best = min(runs, key=lambda r: (r.achieved_f_kappa, r.chosen_c))
    return PertinentPositive(best.delta, best.achieved_f_kappa, best.chosen_c,
                             best.objective_trace, False, best.iterations, best.target_class)


def average_mask(explanations: Sequence[PertinentPositive], label: str) -> AverageMask:
    used = [e.delta for e in explanations if e.converged]
    if not used:
        raise EmptyGroup(f"group {label!r} has no converged explanation")
    return AverageMask(label, np.mean(np.stack(used), axis=0), len(used))
