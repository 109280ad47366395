"""Scalar divergence kernel.

Categorical KL and Rényi divergences, the binary KL, its upper/lower
inversion by bisection, the implicit gradients of those inversions and the
log-barrier extension. Every function here is pure and works on plain floats
or 1-D numpy arrays; gradients are written out by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BISECT_EPS = 1e-9
BISECT_MAX_ITER = 1000
# bisection also keeps going until |KL(q||p) - psi| is this small, so steep
# regions near p = 0 or 1 do not inherit a large residual from the width test
BISECT_RESIDUAL = 1e-9

# raw values below this give alpha - 1 < 1e-4, where ln(S)/(alpha - 1) starts
# losing digits; learnable orders are clamped here
ALPHA_RAW_MIN = math.log(1e-4)


@dataclass
class AlphaParam:
    """Rényi order kept above 1 through ``alpha = 1 + exp(raw)``."""

    raw: float = 0.0

    @property
    def alpha(self) -> float:
        return 1.0 + math.exp(self.raw)

    @classmethod
    def from_alpha(cls, alpha: float) -> "AlphaParam":
        if not alpha > 1.0:
            raise ValueError(f"alpha must be > 1, got {alpha}")
        return cls(math.log(alpha - 1.0))


@dataclass(frozen=True)
class BarrierConfig:
    t: float = 100.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"barrier parameter t must be > 0, got {self.t}")


# ---------------------------------------------------------------------------
# binary KL
# ---------------------------------------------------------------------------

def _xlogy(x: float, y: float) -> float:
    return 0.0 if x == 0.0 else x * math.log(y)


def kl_binary(q: float, p: float) -> float:
    """KL between Bernoulli(q) and Bernoulli(p), with 0 ln 0 = 0."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    val = _xlogy(q, q / p) + _xlogy(1.0 - q, (1.0 - q) / (1.0 - p))
    return max(val, 0.0)


def _kl_binary_unchecked(q, p):
    a = q * math.log(q / p) if q > 0.0 else 0.0
    b = (1.0 - q) * math.log((1.0 - q) / (1.0 - p)) if q < 1.0 else 0.0
    return a + b


def _done(kl, psi, p_min, p_max, p, eps) -> bool:
    if kl == psi or p == p_min or p == p_max:   # exact, or interval at float resolution
        return True
    return (p_max - p_min) < eps and abs(kl - psi) <= BISECT_RESIDUAL


def kl_inv_upper(q: float, psi: float, eps: float = BISECT_EPS,
                 T_max: int = BISECT_MAX_ITER) -> float:
    """Largest p in [q, 1) with KL(q || p) <= psi, found by bisection.

    Saturates at ``1 - 10 eps`` when the budget exceeds what any p < 1 can
    absorb numerically.
    """
    if psi < 0:
        raise ValueError(f"psi must be >= 0, got {psi}")
    if q >= 1.0:
        return 1.0
    q = max(q, 0.0)
    if psi == 0.0:
        return q
    ceiling = 1.0 - 10.0 * eps
    if q >= ceiling or _kl_binary_unchecked(q, ceiling) <= psi:
        return ceiling
    p_min, p_max = q, 1.0
    p = 0.5 * (p_min + p_max)
    for _ in range(T_max):
        p = 0.5 * (p_min + p_max)
        kl = _kl_binary_unchecked(q, p)
        if _done(kl, psi, p_min, p_max, p, eps):
            return p
        if kl > psi:
            p_max = p
        else:
            p_min = p
    return p


def kl_inv_lower(q: float, psi: float, eps: float = BISECT_EPS,
                 T_max: int = BISECT_MAX_ITER) -> float:
    """Smallest p in (0, q] with KL(q || p) <= psi, found by bisection."""
    if psi < 0:
        raise ValueError(f"psi must be >= 0, got {psi}")
    if q <= 0.0:
        return 0.0
    q = min(q, 1.0)
    if psi == 0.0:
        return q
    floor = 10.0 * eps
    if q <= floor or _kl_binary_unchecked(q, floor) <= psi:
        return floor
    p_min, p_max = 0.0, q
    p = 0.5 * (p_min + p_max)
    for _ in range(T_max):
        p = 0.5 * (p_min + p_max)
        kl = _kl_binary_unchecked(q, p)
        if _done(kl, psi, p_min, p_max, p, eps):
            return p
        if kl > psi:
            p_min = p
        else:
            p_max = p
    return p


def kl_inv_grad(q: float, psi: float, p: float, mode: str = "upper"):
    """Implicit derivatives ``(dp/dq, dp/dpsi)`` of the root of KL(q||p) = psi.

    Uses dKL/dp = (p - q) / (p (1 - p)) and
    dKL/dq = ln(q/p) - ln((1-q)/(1-p)). A saturated inversion (p pinned at
    its numeric floor/ceiling) is locally constant and returns zeros. At p = q
    (zero budget) dp/dq is 1 and dp/dpsi diverges.
    """
    if mode not in ("upper", "lower"):
        raise ValueError(f"mode must be 'upper' or 'lower', got {mode!r}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be strictly inside (0, 1), got {p}")
    if (mode == "upper" and p >= 1.0 - 10.0 * BISECT_EPS) or (
            mode == "lower" and p <= 10.0 * BISECT_EPS):
        return 0.0, 0.0
    if abs(p - q) < 1e-15:
        return 1.0, math.inf
    qc = min(max(q, 1e-300), 1.0 - 1e-16)
    dkl_dp = (p - q) / (p * (1.0 - p))
    dkl_dq = math.log(qc / p) - math.log((1.0 - qc) / (1.0 - p))
    return -dkl_dq / dkl_dp, 1.0 / dkl_dp


def kl_inv_upper_grad(q, psi, eps=BISECT_EPS, T_max=BISECT_MAX_ITER):
    """Return ``(p, dp/dq, dp/dpsi)`` for the upper inversion."""
    p = kl_inv_upper(q, psi, eps, T_max)
    if q >= 1.0:
        return p, 0.0, 0.0
    dq, dpsi = kl_inv_grad(q, psi, p, "upper")
    return p, dq, dpsi


def kl_inv_lower_grad(q, psi, eps=BISECT_EPS, T_max=BISECT_MAX_ITER):
    """Return ``(p, dp/dq, dp/dpsi)`` for the lower inversion."""
    p = kl_inv_lower(q, psi, eps, T_max)
    if q <= 0.0:
        return p, 0.0, 0.0
    dq, dpsi = kl_inv_grad(q, psi, p, "lower")
    return p, dq, dpsi


# ---------------------------------------------------------------------------
# categorical divergences
# ---------------------------------------------------------------------------

def _check_support(Q, P):
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    if Q.shape != P.shape:
        raise ValueError(f"shape mismatch: {Q.shape} vs {P.shape}")
    if np.any((P <= 0) & (Q > 0)):
        raise ValueError("Q is not absolutely continuous w.r.t. P")
    return Q, P


def kl_categorical(Q, P) -> float:
    Q, P = _check_support(Q, P)
    mask = Q > 0
    val = float(np.sum(Q[mask] * np.log(Q[mask] / P[mask])))
    return max(val, 0.0)


def kl_categorical_grad(Q, P):
    """Value and gradient w.r.t. Q (treating Q's entries as free)."""
    Q, P = _check_support(Q, P)
    mask = Q > 0
    grad = np.zeros_like(Q)
    logr = np.log(Q[mask] / P[mask])
    # zero-mass entries keep grad 0; the softmax chain scales them by Q_h = 0
    grad[mask] = logr + 1.0
    return max(float(np.sum(Q[mask] * logr)), 0.0), grad


def _renyi_log_s(Q, P, alpha):
    mask = Q > 0
    terms = alpha * np.log(Q[mask]) + (1.0 - alpha) * np.log(P[mask])
    top = terms.max()
    w = np.exp(terms - top)
    s = w.sum()
    return top + math.log(s), mask, w / s


def renyi_div(Q, P, alpha: float) -> float:
    """D_alpha(Q||P) = ln(sum Q^alpha P^(1-alpha)) / (alpha - 1), alpha > 1."""
    if not alpha > 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    Q, P = _check_support(Q, P)
    log_s, _, _ = _renyi_log_s(Q, P, alpha)
    return max(log_s / (alpha - 1.0), 0.0)


def renyi_div_grad(Q, P, alpha: float):
    """Return ``(value, dD/dQ, dD/dalpha)``."""
    if not alpha > 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    Q, P = _check_support(Q, P)
    log_s, mask, weights = _renyi_log_s(Q, P, alpha)
    am1 = alpha - 1.0
    value = log_s / am1
    grad_q = np.zeros_like(Q)
    # d ln S / dQ_h = alpha Q_h^(alpha-1) P_h^(1-alpha) / S = alpha w_h / Q_h
    grad_q[mask] = alpha * weights / (Q[mask] * am1)
    dlogs_dalpha = float(np.sum(weights * np.log(Q[mask] / P[mask])))
    grad_alpha = dlogs_dalpha / am1 - log_s / am1 ** 2
    return max(value, 0.0), grad_q, grad_alpha


def divergence_grad(Q, P, alpha: float | None):
    """KL when ``alpha`` is None, Rényi otherwise: ``(value, dQ, dalpha)``."""
    if alpha is None:
        val, g = kl_categorical_grad(Q, P)
        return val, g, 0.0
    return renyi_div_grad(Q, P, alpha)


# ---------------------------------------------------------------------------
# log-barrier extension
# ---------------------------------------------------------------------------

def log_barrier(a: float, cfg: BarrierConfig | float = BarrierConfig()):
    """Log-barrier extension of the constraint ``a <= 0``.

    Returns ``(value, derivative)``. Logarithmic for a <= -1/t^2, linear
    continuation beyond, C1 at the knot.
    """
    t = cfg.t if isinstance(cfg, BarrierConfig) else float(cfg)
    if a <= -1.0 / t ** 2:
        return -math.log(-a) / t, -1.0 / (t * a)
    return t * a - math.log(1.0 / t ** 2) / t + 1.0 / t, t
