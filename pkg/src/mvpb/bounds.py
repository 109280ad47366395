"""Complexity terms, certified bounds and the barrier-penalized training objectives."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import divergence as dv
from .params import Layout, PosteriorParams
from .risks import EmpiricalStats, softmax_backward

DEFAULT_DELTA = 0.05
CERTIFIED_MAX = 4.0


class BoundError(ValueError):
    pass


class DegenerateBound(BoundError):
    pass


class BoundKind(str, enum.Enum):
    R = "R"
    K = "K"
    E = "E"
    Ku = "Ku"
    E2 = "E2"
    K2 = "K2"
    R2 = "R2"
    Ku2 = "Ku2"
    CBound = "CBound"
    CTandem = "CTandem"
    McAllester = "McAllester"
    Catoni = "Catoni"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, name) -> "BoundKind":
        if isinstance(name, cls):
            return name
        for k in cls:
            if k.value.lower() == str(name).strip().lower():
                return k
        raise BoundError(f"unknown bound kind {name!r}; choose from "
                         f"{', '.join(k.value for k in cls)}")


TRAINABLE = (BoundKind.R, BoundKind.K, BoundKind.E, BoundKind.Ku, BoundKind.E2,
             BoundKind.K2, BoundKind.R2, BoundKind.Ku2, BoundKind.CBound, BoundKind.CTandem)
BINARY_ONLY = frozenset({BoundKind.R2, BoundKind.Ku2, BoundKind.CBound})
EVALUATION_ONLY = frozenset({BoundKind.McAllester, BoundKind.Catoni})

# which scalar parameters each objective trains
SCALARS_OF = {
    BoundKind.R: ("lam",), BoundKind.E2: ("lam",), BoundKind.R2: ("lam", "gamma"),
    BoundKind.E: ("lam1", "lam2"),
}


def check_kind(kind, n_classes: int) -> BoundKind:
    kind = BoundKind.parse(kind)
    if kind in BINARY_ONLY and n_classes != 2:
        raise BoundError(f"{kind} is a binary-only bound; the data has {n_classes} classes")
    return kind


# ---------------------------------------------------------------------------
# forward-mode scalar carrying a gradient over the flat parameter layout
# ---------------------------------------------------------------------------

class _D:
    __slots__ = ("v", "g")

    def __init__(self, v, g=None):
        self.v = float(v)
        self.g = g

    @staticmethod
    def _lift(x):
        return x if isinstance(x, _D) else _D(x)

    @staticmethod
    def _lin(a, ga, b, gb):
        if ga is None:
            return None if gb is None else b * gb
        if gb is None:
            return a * ga
        return a * ga + b * gb

    def __add__(self, o):
        o = self._lift(o)
        return _D(self.v + o.v, self._lin(1.0, self.g, 1.0, o.g))

    __radd__ = __add__

    def __sub__(self, o):
        o = self._lift(o)
        return _D(self.v - o.v, self._lin(1.0, self.g, -1.0, o.g))

    def __rsub__(self, o):
        return self._lift(o) - self

    def __neg__(self):
        return _D(-self.v, None if self.g is None else -self.g)

    def __mul__(self, o):
        o = self._lift(o)
        return _D(self.v * o.v, self._lin(o.v, self.g, self.v, o.g))

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._lift(o)
        return _D(self.v / o.v, self._lin(1.0 / o.v, self.g, -self.v / o.v ** 2, o.g))

    def __rtruediv__(self, o):
        return self._lift(o) / self

    def apply(self, value, deriv):
        return _D(value, None if self.g is None else deriv * self.g)

    def sqrt(self):
        r = math.sqrt(self.v)
        return self.apply(r, 0.5 / r if r > 0 else 0.0)

    def square(self):
        return self * self


def _const_min(x: _D, c: float) -> _D:
    return _D(c) if x.v > c else x


def _const_max(x: _D, c: float) -> _D:
    return _D(c) if x.v < c else x


def _kl_up(q: _D, psi: _D, eps: float) -> _D:
    p = dv.kl_inv_upper(q.v, psi.v, eps)
    if q.g is None and psi.g is None:
        return _D(p)
    dq, dpsi = (0.0, 0.0) if q.v >= 1.0 else dv.kl_inv_grad(q.v, psi.v, p, "upper")
    return _D(p, _D._lin(dq, q.g, dpsi, psi.g))


def _kl_low(q: _D, psi: _D, eps: float) -> _D:
    p = dv.kl_inv_lower(q.v, psi.v, eps)
    if q.g is None and psi.g is None:
        return _D(p)
    dq, dpsi = (0.0, 0.0) if q.v <= 0.0 else dv.kl_inv_grad(q.v, psi.v, p, "lower")
    return _D(p, _D._lin(dq, q.g, dpsi, psi.g))


def _lam_upper(x: _D, psi: _D, lam: _D) -> _D:
    a = 1.0 - lam * 0.5
    return x / a + psi / (lam * a)


def _gamma_lower(x: _D, psi: _D, gamma: _D) -> _D:
    return (1.0 - gamma * 0.5) * x - psi / gamma


def _barrier(a: _D, t: float) -> _D:
    val, der = dv.log_barrier(a.v, t)
    return a.apply(val, der)


# ---------------------------------------------------------------------------
# complexity terms
# ---------------------------------------------------------------------------

@dataclass
class PsiTerms:
    psi_r: float
    psi_e: float
    psi_d: float
    delta: float
    m: int
    n: int
    divergence: float
    view_divergences: list = field(default_factory=list)
    hyper_divergence: float = 0.0
    # gradient of the total divergence over the flat layout (None unless requested)
    grad_divergence: np.ndarray | None = field(default=None, repr=False)


def total_divergence(params: PosteriorParams, with_grad=False):
    """E_rho[D_{alpha_v}(Q_v||P_v)] + D_alpha(rho||pi), optionally with its gradient."""
    rho, Q = params.rho, params.Q
    alphas_v = params.alpha_v
    layout = Layout.of(params) if with_grad else None
    view_vals, d_q, d_alpha_v = [], [], np.zeros(params.n_views)
    for v, (q, p, a) in enumerate(zip(Q, params.q_priors, alphas_v)):
        val, gq, ga = dv.divergence_grad(q, p, a)
        view_vals.append(val)
        if with_grad:
            d_q.append(softmax_backward(q, rho[v] * gq))
            d_alpha_v[v] = rho[v] * ga
    hyper, g_rho, ga_rho = dv.divergence_grad(rho, params.rho_prior, params.alpha)
    total = float(np.dot(rho, view_vals)) + hyper
    if not with_grad:
        return total, view_vals, hyper, None
    grad = layout.logit_grad(softmax_backward(rho, np.asarray(view_vals) + g_rho), d_q)
    if params.alpha_mode == "learnable":
        grad[layout.alpha] = ga_rho * math.exp(params.alpha_raw)
        grad[layout.alpha_v] = d_alpha_v * np.exp(params.alpha_v_raw)
    return total, view_vals, hyper, grad


def psi_terms(params: PosteriorParams, m: int, n: int, delta: float = DEFAULT_DELTA,
              with_grad=False, divergence_override: float | None = None) -> PsiTerms:
    """psi_r = (D + ln(2 sqrt m / delta)) / m, psi_e = (2D + ln(4 sqrt m / delta)) / m,
    psi_d = (2D + ln(4 sqrt n / delta)) / n.

    ``divergence_override`` replaces D by a given value (used to probe the
    terms' monotonicity).
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    D, views, hyper, grad = total_divergence(params, with_grad)
    if divergence_override is not None:
        D, grad = float(divergence_override), None
    return PsiTerms(
        psi_r=(D + math.log(2.0 * math.sqrt(m) / delta)) / m,
        psi_e=(2.0 * D + math.log(4.0 * math.sqrt(m) / delta)) / m,
        psi_d=(2.0 * D + math.log(4.0 * math.sqrt(n) / delta)) / n,
        delta=delta, m=m, n=n, divergence=D,
        view_divergences=list(views), hyper_divergence=hyper, grad_divergence=grad,
    )


# ---------------------------------------------------------------------------
# bound expressions
# ---------------------------------------------------------------------------

@dataclass
class BoundValue:
    kind: BoundKind
    raw: float
    certified: float
    components: dict


def _inputs(stats, psi, params, layout):
    """Lift statistics, psi terms and scalar parameters to forward-mode values."""
    def stat(name):
        g = None
        if layout is not None and name in stats.grads:
            g = layout.logit_grad(*stats.grads[name])
        return _D(getattr(stats, name), g)

    def unit(i):
        if layout is None:
            return None
        e = np.zeros(layout.size)
        e[i] = 1.0
        return e

    gD = psi.grad_divergence if layout is not None else None
    env = {
        "g": stat("gibbs"), "e": stat("joint"), "d": stat("disagreement"),
        "psi_r": _D(psi.psi_r, None if gD is None else gD / psi.m),
        "psi_e": _D(psi.psi_e, None if gD is None else 2.0 * gD / psi.m),
        "psi_d": _D(psi.psi_d, None if gD is None else 2.0 * gD / psi.n),
    }
    for name in Layout.SCALARS:
        env[name] = _D(getattr(params, name),
                       unit(layout.scalar[name]) if layout is not None else None)
    return env


def _expression(kind: BoundKind, env, psi, catoni_c, kl_eps=dv.BISECT_EPS):
    """Return (bound, [constraint arguments a <= 0], components)."""
    g, e, d = env["g"], env["e"], env["d"]
    pr, pe, pd = env["psi_r"], env["psi_e"], env["psi_d"]
    K = BoundKind
    comp = {}
    if kind is K.R:
        r = _lam_upper(g, pr, env["lam"])
        comp["gibbs_upper"] = r.v
        return 2.0 * r, [r - 0.5], comp
    if kind is K.E:
        ee = _lam_upper(e, pe, env["lam1"])
        dd = _lam_upper(d, pd, env["lam2"])
        comp.update(joint_upper=ee.v, disagreement_upper=dd.v)
        return 2.0 * ee + dd, [ee - 0.25, dd - 2.0 * (ee.sqrt() - ee)], comp
    if kind is K.E2:
        ee = _lam_upper(e, pe, env["lam"])
        comp["joint_upper"] = ee.v
        return 4.0 * ee, [ee - 0.25], comp
    if kind is K.R2:
        r = _lam_upper(g, pr, env["lam"])
        dl = _gamma_lower(d, pd, env["gamma"])
        comp.update(gibbs_upper=r.v, disagreement_lower=dl.v)
        return 4.0 * r - 2.0 * dl, [r - 0.5, dl - 0.5], comp
    if kind is K.K:
        r = _kl_up(g, pr, kl_eps)
        comp["kl_upper_gibbs"] = r.v
        return 2.0 * r, [r - 0.5], comp
    if kind is K.Ku:
        ee = _kl_up(e, pe, kl_eps)
        dd = _kl_up(d, pd, kl_eps)
        comp.update(kl_upper_joint=ee.v, kl_upper_disagreement=dd.v)
        return 2.0 * ee + dd, [ee - 0.25, dd - 2.0 * (ee.sqrt() - ee)], comp
    if kind is K.K2:
        ee = _kl_up(e, pe, kl_eps)
        comp["kl_upper_joint"] = ee.v
        return 4.0 * ee, [ee - 0.25], comp
    if kind is K.Ku2:
        r = _kl_up(g, pr, kl_eps)
        dl = _kl_low(d, pd, kl_eps)
        comp.update(kl_upper_gibbs=r.v, kl_lower_disagreement=dl.v)
        return 4.0 * r - 2.0 * dl, [r - 0.5, dl - 0.5], comp
    if kind is K.CBound:
        r = _kl_up(g, pr, kl_eps)
        dl = _kl_low(d, pd, kl_eps)
        comp.update(kl_upper_gibbs=r.v, kl_lower_disagreement=dl.v)
        num = (1.0 - 2.0 * _const_min(r, 0.5)).square()
        den = 1.0 - 2.0 * _const_max(dl, 0.0)
        if den.v <= 0.0:
            raise DegenerateBound("degenerate C-Bound: disagreement lower bound reaches 1/2")
        return 1.0 - num / den, [r - 0.5], comp
    if kind is K.CTandem:
        ee = _kl_up(e, pe, kl_eps)
        rl = _kl_low(g, pr, kl_eps)
        ru = _kl_up(g, pr, kl_eps)
        comp.update(kl_upper_joint=ee.v, kl_lower_gibbs=rl.v, kl_upper_gibbs=ru.v)
        den = ee - ru + 0.25
        if den.v <= 0.0:
            raise DegenerateBound(f"degenerate C-Tandem: denominator {den.v:.3g} <= 0")
        return (ee - rl.square()) / den, [ru - 0.5, ee - 0.25], comp
    if kind is K.McAllester:
        val = g.v + math.sqrt((psi.divergence + math.log(2.0 * math.sqrt(psi.m) / psi.delta))
                              / (2.0 * psi.m))
        return _D(val), [], comp
    if kind is K.Catoni:
        c = catoni_c
        inner = c * g.v + (psi.divergence + math.log(1.0 / psi.delta)) / psi.m
        comp["catoni_c"] = c
        return _D((1.0 - math.exp(-inner)) / (1.0 - math.exp(-c))), [], comp
    raise BoundError(f"unhandled bound kind {kind}")


def bound_value(kind, stats: EmpiricalStats, psi: PsiTerms, params: PosteriorParams,
                catoni_c: float = math.log(2.0)) -> BoundValue:
    """Raw bound, its certified (clamped) value and the intermediate terms."""
    kind = check_kind(kind, stats.n_classes)
    env = _inputs(stats, psi, params, None)
    bound, _, comp = _expression(kind, env, psi, catoni_c)
    comp.update(gibbs=stats.gibbs, joint=stats.joint, disagreement=stats.disagreement,
                psi_r=psi.psi_r, psi_e=psi.psi_e, psi_d=psi.psi_d, divergence=psi.divergence)
    if kind in SCALARS_OF:
        for name in SCALARS_OF[kind]:
            comp[name] = getattr(params, name)
    raw = bound.v
    return BoundValue(kind, raw, float(min(max(raw, 0.0), CERTIFIED_MAX)), comp)


def eval_bound(kind, stats: EmpiricalStats, psi: PsiTerms, params: PosteriorParams,
               catoni_c: float = math.log(2.0)) -> float:
    """Certified value of a bound: the raw value clamped to [0, 4]."""
    return bound_value(kind, stats, psi, params, catoni_c).certified


def objective(kind, stats: EmpiricalStats, psi: PsiTerms, params: PosteriorParams,
              barrier: dv.BarrierConfig = dv.BarrierConfig(), with_grad=True,
              kl_eps: float = dv.BISECT_EPS):
    """Bound plus one log-barrier term per constraint.

    Returns ``(value, grad)`` where ``grad`` follows :class:`Layout` (None
    when ``with_grad`` is False). ``stats`` and ``psi`` must carry gradients
    when ``with_grad`` is set. ``kl_eps`` is the bisection width used for the
    KL inversions.
    """
    kind = check_kind(kind, stats.n_classes)
    if kind in EVALUATION_ONLY:
        raise BoundError(f"{kind} is evaluation-only and has no training objective")
    layout = Layout.of(params) if with_grad else None
    if with_grad and (not stats.grads or psi.grad_divergence is None):
        raise ValueError("objective gradient needs stats and psi computed with_grad=True")
    env = _inputs(stats, psi, params, layout)
    bound, constraints, _ = _expression(kind, env, psi, math.log(2.0), kl_eps)
    total = bound
    for a in constraints:
        total = total + _barrier(a, barrier.t)
    if not with_grad:
        return total.v, None
    grad = total.g if total.g is not None else np.zeros(layout.size)
    return total.v, grad


# union-bound caveat attached to reports of bounds that combine two inversions
SHARED_DELTA_NOTE = ("C-Bound/C-Tandem combine two inverted-KL terms using the psi "
                     "constants as printed; no extra delta split across the two inversions")


@dataclass
class BoundReport:
    kind: BoundKind
    certified_value: float
    raw_value: float
    components: dict
    mv_train_risk: float
    mv_test_risk: float | None
    trace: list
    converged: bool = False
    posterior: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": str(self.kind),
            "certified_value": self.certified_value,
            "raw_value": self.raw_value,
            "components": self.components,
            "mv_train_risk": self.mv_train_risk,
            "mv_test_risk": self.mv_test_risk,
            "iterations": len(self.trace),
            "converged": self.converged,
            "initial_objective": self.trace[0] if self.trace else None,
            "final_objective": self.trace[-1] if self.trace else None,
            "posterior": self.posterior,
            "notes": self.notes,
        }
