"""Self-bounding training: gradient descent on a barrier-penalized bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import (BoundKind, BoundReport, DEFAULT_DELTA, SCALARS_OF, SHARED_DELTA_NOTE,
                     bound_value, check_kind, objective, psi_terms)
from .divergence import BarrierConfig
from .params import Layout, PosteriorParams
from .risks import empirical_stats, majority_vote_predict
from .voters import PredictionCache, vote_mass

OPTIMIZERS = ("adaptive_moment", "coin_betting")


class OptimizationError(RuntimeError):
    def __init__(self, message, iteration=None, snapshot=None):
        super().__init__(message)
        self.iteration = iteration
        self.snapshot = snapshot


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 1000
    tol: float = 1e-9
    learning_rate: float = 0.1
    weight_decay: float = 0.05
    barrier_t: float = 100.0
    optimizer: str | None = None     # None: coin betting for CTandem, adaptive moment otherwise
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0 or not self.learning_rate > 0 or not self.barrier_t > 0:
            raise ValueError("tol, learning_rate and barrier_t must be > 0")
        if self.optimizer is not None and self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def optimizer_for(self, kind: BoundKind) -> str:
        if self.optimizer is not None:
            return self.optimizer
        return "coin_betting" if kind is BoundKind.CTandem else "adaptive_moment"


# ---------------------------------------------------------------------------
# update rules
# ---------------------------------------------------------------------------

class AdamWState:
    def __init__(self, size):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0


def adaptive_moment_step(x, grad, state: AdamWState, lr=0.1, weight_decay=0.05,
                         decay_mask=None, betas=(0.9, 0.999), eps=1e-8):
    """One AdamW step (decoupled weight decay, bias-corrected moments)."""
    b1, b2 = betas
    state.t += 1
    x = np.array(x, dtype=float)
    if weight_decay:
        decay = lr * weight_decay * x
        if decay_mask is not None:
            decay = np.where(decay_mask, decay, 0.0)
        x -= decay
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    return x - lr * m_hat / (np.sqrt(v_hat) + eps)


class CocobState:
    def __init__(self, x0, eps=1e-8):
        self.w1 = np.array(x0, dtype=float)
        self.scale = np.full_like(self.w1, eps)
        self.abs_sum = np.zeros_like(self.w1)
        self.reward = np.zeros_like(self.w1)
        self.grad_sum = np.zeros_like(self.w1)


def coin_betting_step(x, grad, state: CocobState, alpha=100.0):
    """One COCOB-Backprop step: per-coordinate wealth, no learning rate."""
    x = np.asarray(x, dtype=float)
    state.scale = np.maximum(state.scale, np.abs(grad))
    state.abs_sum = state.abs_sum + np.abs(grad)
    state.reward = np.maximum(state.reward - (x - state.w1) * grad, 0.0)
    state.grad_sum = state.grad_sum + grad
    L = state.scale
    bet = state.grad_sum / (L * np.maximum(state.abs_sum + L, alpha * L))
    return state.w1 - bet * (L + state.reward)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def free_mask(kind: BoundKind, params: PosteriorParams, layout: Layout) -> np.ndarray:
    mask = layout.logit_mask()
    for name in SCALARS_OF.get(kind, ()):
        mask[layout.scalar[name]] = True
    if params.alpha_mode == "learnable":
        mask[layout.alpha] = True
        mask[layout.alpha_v] = True
    return mask


class Problem:
    """Data side of a run: cache blocks, labels and the confidence level."""

    def __init__(self, cache: PredictionCache, labels, delta=DEFAULT_DELTA,
                 labeled_block="train", unlabeled_block="unlabeled"):
        self.cache = cache
        self.labels = np.asarray(labels, dtype=np.int64)
        self.delta = delta
        self.labeled_block = labeled_block
        self.unlabeled_block = unlabeled_block

    def stats(self, params, with_grad=False):
        return empirical_stats(self.cache, params.rho, params.Q, self.labels,
                               self.labeled_block, self.unlabeled_block, with_grad)

    def evaluate(self, kind, params, barrier, with_grad=True, kl_eps=None):
        s = self.stats(params, with_grad)
        psi = psi_terms(params, s.m, s.n, self.delta, with_grad)
        kw = {} if kl_eps is None else {"kl_eps": kl_eps}
        return objective(kind, s, psi, params, barrier, with_grad, **kw)


def initial_params(cache: PredictionCache, alpha_mode="fixed", alpha=1.1,
                   rho_prior=None, q_priors=None) -> PosteriorParams:
    """Q_v = P_v, rho = pi (uniform unless given), lambdas = gamma = 1."""
    if rho_prior is None:
        rho_prior = np.full(cache.n_views, 1.0 / cache.n_views)
    if q_priors is None:
        q_priors = [np.full(h, 1.0 / h) for h in cache.n_voters]
    return PosteriorParams.from_priors(rho_prior, q_priors, alpha_mode=alpha_mode,
                                       alpha_fixed=alpha if alpha_mode == "fixed" else 1.1)


def minimize(kind, cache: PredictionCache, labels, cfg: OptimConfig = OptimConfig(),
             params: PosteriorParams | None = None, delta=DEFAULT_DELTA,
             test_labels=None, labeled_block="train", unlabeled_block="unlabeled",
             test_block="test", callback=None):
    """Minimize one objective; return ``(final params, BoundReport)``.

    Stops when two consecutive objective values differ by at most
    ``cfg.tol`` or after ``cfg.max_iters`` updates. ``trace[-1]`` is the
    objective at the returned parameters. ``callback(iteration, params)``
    runs after every update.
    """
    kind = check_kind(kind, cache.n_classes)
    problem = Problem(cache, labels, delta, labeled_block, unlabeled_block)
    params = (params if params is not None else initial_params(cache)).copy()
    params.clamp()
    layout = Layout.of(params)
    free = free_mask(kind, params, layout)
    decay = layout.logit_mask()
    barrier = BarrierConfig(cfg.barrier_t)
    opt = cfg.optimizer_for(kind)
    x = layout.pack(params)
    state = AdamWState(layout.size) if opt == "adaptive_moment" else CocobState(x)

    trace, prev, converged = [], None, False
    for k in range(cfg.max_iters + 1):
        value, grad = problem.evaluate(kind, params, barrier)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise OptimizationError(
                f"non-finite objective/gradient for {kind} at iteration {k}", k, params.summary())
        trace.append(value)
        if prev is not None and abs(value - prev) <= cfg.tol:
            converged = True
            break
        if k == cfg.max_iters:
            break
        prev = value
        grad = np.where(free, grad, 0.0)
        x = layout.pack(params)
        if opt == "adaptive_moment":
            x_new = adaptive_moment_step(x, grad, state, cfg.learning_rate, cfg.weight_decay, decay)
        else:
            x_new = coin_betting_step(x, grad, state)
        x_new = np.where(free, x_new, x)
        params = layout.unpack(x_new, params)
        params.clamp()
        if callback is not None:
            callback(k + 1, params)

    report = certify(kind, cache, problem.labels, params, delta, trace, converged,
                     test_labels, labeled_block, unlabeled_block, test_block)
    return params, report


def certify(kind, cache, labels, params, delta=DEFAULT_DELTA, trace=(), converged=False,
            test_labels=None, labeled_block="train", unlabeled_block="unlabeled",
            test_block="test") -> BoundReport:
    """Evaluate the certified bound and MV risks of a posterior from scratch."""
    kind = BoundKind.parse(kind)
    s = empirical_stats(cache, params.rho, params.Q, labels, labeled_block, unlabeled_block)
    psi = psi_terms(params, s.m, s.n, delta)
    bv = bound_value(kind, s, psi, params)
    test_risk = None
    if test_labels is not None and cache.block_size(test_block) > 0:
        mass = vote_mass(cache, params.rho, params.Q, test_block)
        test_risk = float(np.mean(majority_vote_predict(mass) != np.asarray(test_labels)))
    notes = [SHARED_DELTA_NOTE] if kind in (BoundKind.CBound, BoundKind.CTandem) else []
    return BoundReport(kind, bv.certified, bv.raw, bv.components, s.mv_risk, test_risk,
                       list(trace), converged, params.summary(), notes)


def grad_check(kind, params: PosteriorParams, cache: PredictionCache, labels,
               delta=DEFAULT_DELTA, barrier=BarrierConfig(), step=1e-6,
               unlabeled_block="unlabeled", kl_eps=1e-15, floor=1e-4) -> float:
    """Worst relative error between the analytic gradient and central differences.

    Only the coordinates the objective trains are compared. Inversions are
    solved to ``kl_eps`` so their own bisection error does not swamp the
    finite differences. Components smaller than ``floor`` are compared on an
    absolute scale: central differences carry roughly ``1e-9`` of roundoff on
    an O(1) objective, which a smaller floor would report as gradient error.
    """
    kind = check_kind(kind, cache.n_classes)
    problem = Problem(cache, labels, delta, unlabeled_block=unlabeled_block)
    layout = Layout.of(params)
    _, grad = problem.evaluate(kind, params, barrier, True, kl_eps)
    x0 = layout.pack(params)
    worst = 0.0
    for i in np.flatnonzero(free_mask(kind, params, layout)):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += step
        xm[i] -= step
        fp, _ = problem.evaluate(kind, layout.unpack(xp, params), barrier, False, kl_eps)
        fm, _ = problem.evaluate(kind, layout.unpack(xm, params), barrier, False, kl_eps)
        numeric = (fp - fm) / (2.0 * step)
        scale = max(abs(grad[i]), abs(numeric), floor)
        worst = max(worst, abs(grad[i] - numeric) / scale)
    return worst
