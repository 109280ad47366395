"""Posterior parameters and their flat-vector layout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import ALPHA_RAW_MIN

LAMBDA_MIN, LAMBDA_MAX = 1e-4, 2.0 - 1e-4
GAMMA_MIN = 1e-4
ALPHA_RAW_MAX = math.log(1e3)

ALPHA_MODES = ("kl", "fixed", "learnable")


def logsumexp(x) -> float:
    top = np.max(x)
    return float(top + np.log(np.sum(np.exp(x - top))))


def softmax(x) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass
class PosteriorParams:
    """Everything the optimizer updates, plus the fixed priors.

    ``alpha_mode`` is ``"kl"`` (KL everywhere), ``"fixed"`` (Rényi with a
    constant ``alpha_fixed`` for the hyper-posterior and every view) or
    ``"learnable"`` (global ``1 + exp(alpha_raw)`` for rho and per-view
    ``1 + exp(alpha_v_raw[v])``).
    """

    rho_logits: np.ndarray
    q_logits: list
    rho_prior: np.ndarray
    q_priors: list
    lam: float = 1.0
    lam1: float = 1.0
    lam2: float = 1.0
    gamma: float = 1.0
    alpha_mode: str = "fixed"
    alpha_fixed: float = 1.1
    alpha_raw: float = 0.0
    alpha_v_raw: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.alpha_mode == "fixed" and not self.alpha_fixed > 1.0:
            raise ValueError(f"fixed alpha must be > 1, got {self.alpha_fixed}")
        self.rho_logits = np.asarray(self.rho_logits, dtype=float)
        self.q_logits = [np.asarray(q, dtype=float) for q in self.q_logits]
        if self.alpha_v_raw is None:
            self.alpha_v_raw = np.zeros(len(self.q_logits))
        self.alpha_v_raw = np.asarray(self.alpha_v_raw, dtype=float)

    @classmethod
    def from_priors(cls, rho_prior, q_priors, **kw) -> "PosteriorParams":
        """Start at Q_v = P_v and rho = pi."""
        rho_prior = np.asarray(rho_prior, dtype=float)
        q_priors = [np.asarray(p, dtype=float) for p in q_priors]
        return cls(np.log(rho_prior), [np.log(p) for p in q_priors], rho_prior, q_priors, **kw)

    @classmethod
    def uniform(cls, n_voters, **kw) -> "PosteriorParams":
        return cls.from_priors(uniform(len(n_voters)), [uniform(h) for h in n_voters], **kw)

    @property
    def n_views(self) -> int:
        return len(self.q_logits)

    @property
    def rho(self) -> np.ndarray:
        return softmax(self.rho_logits)

    @property
    def Q(self) -> list:
        return [softmax(q) for q in self.q_logits]

    @property
    def alpha(self):
        """Order for D(rho || pi); None means KL."""
        if self.alpha_mode == "kl":
            return None
        if self.alpha_mode == "fixed":
            return self.alpha_fixed
        return 1.0 + math.exp(self.alpha_raw)

    @property
    def alpha_v(self) -> list:
        """Per-view orders for D(Q_v || P_v); None entries mean KL."""
        if self.alpha_mode == "kl":
            return [None] * self.n_views
        if self.alpha_mode == "fixed":
            return [self.alpha_fixed] * self.n_views
        return [1.0 + math.exp(r) for r in self.alpha_v_raw]

    def copy(self) -> "PosteriorParams":
        return replace(self, rho_logits=self.rho_logits.copy(),
                       q_logits=[q.copy() for q in self.q_logits],
                       alpha_v_raw=self.alpha_v_raw.copy())

    def clamp(self) -> None:
        """Project scalars back into their domains and recentre every logit vector."""
        self.lam = float(np.clip(self.lam, LAMBDA_MIN, LAMBDA_MAX))
        self.lam1 = float(np.clip(self.lam1, LAMBDA_MIN, LAMBDA_MAX))
        self.lam2 = float(np.clip(self.lam2, LAMBDA_MIN, LAMBDA_MAX))
        self.gamma = float(max(self.gamma, GAMMA_MIN))
        self.alpha_raw = float(np.clip(self.alpha_raw, ALPHA_RAW_MIN, ALPHA_RAW_MAX))
        self.alpha_v_raw = np.clip(self.alpha_v_raw, ALPHA_RAW_MIN, ALPHA_RAW_MAX)
        self.rho_logits = self.rho_logits - logsumexp(self.rho_logits)
        self.q_logits = [q - logsumexp(q) for q in self.q_logits]

    def summary(self) -> dict:
        return {
            "rho": self.rho.tolist(),
            "lambda": self.lam, "lambda1": self.lam1, "lambda2": self.lam2,
            "gamma": self.gamma,
            "alpha_mode": self.alpha_mode,
            "alpha": self.alpha,
            "alpha_v": self.alpha_v,
        }


class Layout:
    """Flat vector layout ``[rho | Q_1..Q_V | lam lam1 lam2 gamma | alpha | alpha_1..alpha_V]``."""

    SCALARS = ("lam", "lam1", "lam2", "gamma")

    def __init__(self, n_voters):
        self.n_voters = list(n_voters)
        V = len(self.n_voters)
        self.V = V
        self.rho = slice(0, V)
        pos = V
        self.q = []
        for h in self.n_voters:
            self.q.append(slice(pos, pos + h))
            pos += h
        self.scalar = {name: pos + i for i, name in enumerate(self.SCALARS)}
        pos += len(self.SCALARS)
        self.alpha = pos
        self.alpha_v = slice(pos + 1, pos + 1 + V)
        self.size = pos + 1 + V

    @classmethod
    def of(cls, params: PosteriorParams) -> "Layout":
        return cls([q.shape[0] for q in params.q_logits])

    def logit_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[: self.q[-1].stop] = True
        return mask

    def pack(self, params: PosteriorParams) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.rho] = params.rho_logits
        for s, q in zip(self.q, params.q_logits):
            x[s] = q
        for name, i in self.scalar.items():
            x[i] = getattr(params, name)
        x[self.alpha] = params.alpha_raw
        x[self.alpha_v] = params.alpha_v_raw
        return x

    def unpack(self, x, template: PosteriorParams) -> PosteriorParams:
        p = template.copy()
        p.rho_logits = np.array(x[self.rho])
        p.q_logits = [np.array(x[s]) for s in self.q]
        for name, i in self.scalar.items():
            setattr(p, name, float(x[i]))
        p.alpha_raw = float(x[self.alpha])
        p.alpha_v_raw = np.array(x[self.alpha_v])
        return p

    def logit_grad(self, d_rho, d_q) -> np.ndarray:
        g = np.zeros(self.size)
        g[self.rho] = d_rho
        for s, dq in zip(self.q, d_q):
            g[s] = dq
        return g
