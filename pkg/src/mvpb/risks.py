"""Empirical statistics of a (rho, Q) posterior pair over a prediction cache.

Everything is computed from the per-sample label mass
``q_i[y] = sum_v rho_v sum_h Q_v(h) [h(x_i^v) = y]``. With c_i = q_i[y_i]:

* Gibbs risk      mean_i (1 - c_i)
* joint error     mean_i (1 - c_i)^2       (two independent voter draws both err)
* disagreement    mean_i (1 - sum_y q_i[y]^2), over labeled and unlabeled rows
* MV risk         mean_i [argmax_y q_i[y] != y_i]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .voters import PredictionCache, vote_mass

TIE_TOL = 1e-12


@dataclass
class EmpiricalStats:
    gibbs: float
    joint: float
    disagreement: float
    mv_risk: float
    m: int
    n: int
    n_classes: int = 2
    # name -> (d/d rho_logits, [d/d q_logits per view]); empty unless requested
    grads: dict = field(default_factory=dict, repr=False)


def majority_vote_predict(mass) -> np.ndarray:
    """Row-wise argmax; labels within 1e-12 of the max tie to the lowest id."""
    mass = np.asarray(mass, dtype=float)
    top = mass.max(axis=1, keepdims=True)
    return np.argmax(mass >= top - TIE_TOL, axis=1)


def softmax_backward(p, grad_p):
    """Chain a gradient w.r.t. simplex coordinates back to its logits."""
    return p * (grad_p - np.dot(grad_p, p))


def _mean(x) -> float:
    return math.fsum(x) / len(x) if len(x) else 0.0


def empirical_stats(cache: PredictionCache, rho, Q, labels, labeled_block="train",
                    unlabeled_block="unlabeled", with_grad=False) -> EmpiricalStats:
    """Gibbs risk, joint error, disagreement and MV risk (optionally with logit gradients)."""
    labels = np.asarray(labels, dtype=np.int64)
    m = cache.block_size(labeled_block)
    if m == 0:
        raise ValueError("labeled block is empty")
    if labels.shape[0] != m:
        raise ValueError(f"{labels.shape[0]} labels for a labeled block of {m} samples")
    rho = np.asarray(rho, dtype=float)
    Q = [np.asarray(q, dtype=float) for q in Q]

    mass_l = vote_mass(cache, rho, Q, labeled_block)
    rows = np.arange(m)
    loss = 1.0 - mass_l[rows, labels]
    has_unl = unlabeled_block in cache.blocks and cache.block_size(unlabeled_block) > 0
    mass_u = vote_mass(cache, rho, Q, unlabeled_block) if has_unl else np.zeros((0, cache.n_classes))
    dis_l = 1.0 - np.sum(mass_l ** 2, axis=1)
    dis_u = 1.0 - np.sum(mass_u ** 2, axis=1)
    n = m + mass_u.shape[0]

    stats = EmpiricalStats(
        gibbs=_mean(loss),
        joint=_mean(loss ** 2),
        disagreement=(math.fsum(dis_l) + math.fsum(dis_u)) / n,
        mv_risk=float(np.mean(majority_vote_predict(mass_l) != labels)),
        m=m,
        n=n,
        n_classes=cache.n_classes,
    )
    if with_grad:
        stats.grads = _stat_grads(cache, rho, Q, labels, labeled_block,
                                  unlabeled_block if has_unl else None,
                                  loss, mass_l, mass_u, n)
    return stats


def _stat_grads(cache, rho, Q, labels, lb, ub, loss, mass_l, mass_u, n):
    # gradient w.r.t. the effective voter weight w_vh = rho_v Q_v(h), then
    # split into rho and Q parts and chained through the two softmaxes
    m = labels.shape[0]
    keys = ("gibbs", "joint", "disagreement")
    preds_l = cache.block(lb)
    preds_u = cache.block(ub) if ub is not None else [None] * cache.n_views
    rows = np.arange(m)
    d_rho = {k: np.zeros(cache.n_views) for k in keys}
    d_q = {k: [] for k in keys}
    for v in range(cache.n_views):
        correct = (preds_l[v] == labels).astype(float)          # (H, m)
        dw_gibbs = -correct.mean(axis=1)
        dw_joint = -2.0 * (correct @ loss) / m
        mass_at_pred = mass_l[rows, preds_l[v]]                  # (H, m)
        dw_dis = -2.0 * mass_at_pred.sum(axis=1)
        if preds_u[v] is not None:
            ru = np.arange(mass_u.shape[0])
            dw_dis = dw_dis - 2.0 * mass_u[ru, preds_u[v]].sum(axis=1)
        dw_dis /= n
        for key, dw in (("gibbs", dw_gibbs), ("joint", dw_joint), ("disagreement", dw_dis)):
            d_rho[key][v] = np.dot(Q[v], dw)
            d_q[key].append(softmax_backward(Q[v], rho[v] * dw))
    return {key: (softmax_backward(rho, d_rho[key]), d_q[key]) for key in keys}
