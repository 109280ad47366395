"""Brute-force reference computations.

These deliberately avoid the per-sample mass shortcut used in
:mod:`mvpb.risks`: Gibbs risk is a double sum over (view, voter) and the
joint error and disagreement are quadruple sums over voter pairs. They are
exact but slow, so inputs are size-guarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .risks import EmpiricalStats, TIE_TOL
from .voters import PredictionCache

MAX_VOTERS = 64
MAX_SAMPLES = 256


class OracleSizeError(ValueError):
    pass


def _guard(cache: PredictionCache, n_samples: int):
    if sum(cache.n_voters) > MAX_VOTERS:
        raise OracleSizeError(f"oracle limited to {MAX_VOTERS} voters, got {sum(cache.n_voters)}")
    if n_samples > MAX_SAMPLES:
        raise OracleSizeError(f"oracle limited to {MAX_SAMPLES} samples, got {n_samples}")


def _voters(cache, rho, Q, block):
    """Flat list of (weight, prediction row) over all (view, voter) pairs."""
    preds = cache.block(block)
    out = []
    for v in range(cache.n_views):
        for h in range(preds[v].shape[0]):
            out.append((float(rho[v]) * float(Q[v][h]), preds[v][h]))
    return out


def brute_stats(cache: PredictionCache, rho, Q, labels, labeled_block="train",
                unlabeled_block="unlabeled") -> EmpiricalStats:
    labels = np.asarray(labels, dtype=np.int64)
    m = cache.block_size(labeled_block)
    n_u = cache.block_size(unlabeled_block) if unlabeled_block in cache.blocks else 0
    _guard(cache, m + n_u)
    lab = _voters(cache, rho, Q, labeled_block)

    gibbs = 0.0
    for w, pred in lab:
        gibbs += w * np.mean(pred != labels)

    joint = 0.0
    dis_sum = 0.0
    for w, pred in lab:
        for w2, pred2 in lab:
            joint += w * w2 * np.mean((pred != labels) & (pred2 != labels))
            dis_sum += w * w2 * np.sum(pred != pred2)
    if n_u:
        unl = _voters(cache, rho, Q, unlabeled_block)
        for w, pred in unl:
            for w2, pred2 in unl:
                dis_sum += w * w2 * np.sum(pred != pred2)

    # majority vote by accumulating each voter's weight on its predicted label
    votes = np.zeros((m, cache.n_classes))
    for w, pred in lab:
        for i in range(m):
            votes[i, pred[i]] += w
    errors = 0
    for i in range(m):
        top = votes[i].max()
        winner = next(y for y in range(cache.n_classes) if votes[i, y] >= top - TIE_TOL)
        errors += winner != labels[i]

    return EmpiricalStats(gibbs=float(gibbs), joint=float(joint),
                          disagreement=float(dis_sum / (m + n_u)),
                          mv_risk=errors / m, m=m, n=m + n_u, n_classes=cache.n_classes)


@dataclass
class InequalityCheck:
    name: str
    lhs: float
    rhs: float
    checked: bool = True
    tol: float = 0.0    # float slack; the first- and second-order checks are exact

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return (not self.checked) or self.lhs <= self.rhs + self.tol


def c_bound_oracle(gibbs: float, disagreement: float) -> float:
    return 1.0 - (1.0 - 2.0 * gibbs) ** 2 / (1.0 - 2.0 * disagreement)


def oracle_inequalities(cache: PredictionCache, rho, Q, labels, labeled_block="train",
                        unlabeled_block=None) -> list:
    """Check the oracle bounds with the sample playing the role of the population.

    Disagreement is taken on the labeled block only, so all quantities refer
    to the same empirical distribution.
    """
    s = brute_stats(cache, rho, Q, labels, labeled_block,
                    unlabeled_block if unlabeled_block else "__none__")
    checks = [
        InequalityCheck("mv <= 2 gibbs", s.mv_risk, 2.0 * s.gibbs),
        InequalityCheck("mv <= 4 joint", s.mv_risk, 4.0 * s.joint),
    ]
    if cache.n_classes == 2 and s.gibbs < 0.5:
        # the ratio form rounds, so it gets a tiny tolerance
        checks.append(InequalityCheck("mv <= C-bound", s.mv_risk,
                                      c_bound_oracle(s.gibbs, s.disagreement), tol=1e-12))
    else:
        checks.append(InequalityCheck("mv <= C-bound", s.mv_risk, float("nan"), checked=False))
    return checks


def random_instance(rng, n_views=None, max_voters=4, n_samples=None, n_classes=None,
                    n_unlabeled=0):
    """Random cache, posteriors and labels for property checks."""
    V = n_views or int(rng.integers(1, 4))
    C = n_classes or int(rng.integers(2, 4))
    m = n_samples or int(rng.integers(1, 21))
    H = rng.integers(1, max_voters + 1, size=V)
    preds = [rng.integers(0, C, size=(h, m + n_unlabeled)) for h in H]
    blocks = {"train": (0, m), "unlabeled": (m, m + n_unlabeled)}
    cache = PredictionCache(preds, blocks, C)
    rho = rng.dirichlet(np.ones(V))
    Q = [rng.dirichlet(np.ones(h)) for h in H]
    labels = rng.integers(0, C, size=m)
    return cache, rho, Q, labels
