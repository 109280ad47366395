import math

import numpy as np
import pytest

from mvpb.bounds import BoundKind, TRAINABLE, eval_bound, psi_terms
from mvpb.divergence import BarrierConfig
from mvpb.oracle import random_instance
from mvpb.optimize import (AdamWState, CocobState, OptimConfig, adaptive_moment_step,
                           coin_betting_step, grad_check, initial_params, minimize)
from mvpb.params import LAMBDA_MAX, LAMBDA_MIN, PosteriorParams
from mvpb.risks import empirical_stats
from mvpb.voters import PredictionCache


def test_adamw_zero_gradient_is_still():
    x = np.array([1.0, -2.0])
    out = adaptive_moment_step(x, np.zeros(2), AdamWState(2), lr=0.1, weight_decay=0.0)
    assert np.array_equal(out, x)


def test_adamw_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    out = adaptive_moment_step(np.zeros(3), g, AdamWState(3), lr=0.1, weight_decay=0.0)
    assert np.allclose(out, -0.1 * g / (np.abs(g) + 1e-8), atol=1e-15)


def test_adamw_constant_gradient_step_tends_to_lr():
    x, state = np.zeros(1), AdamWState(1)
    for _ in range(500):
        new = adaptive_moment_step(x, np.array([0.7]), state, lr=0.05, weight_decay=0.0)
        step, x = new - x, new
    assert step[0] == pytest.approx(-0.05, rel=1e-6)


def test_adamw_decay_mask():
    x = np.array([1.0, 1.0])
    out = adaptive_moment_step(x, np.zeros(2), AdamWState(2), lr=0.1, weight_decay=0.5,
                               decay_mask=np.array([True, False]))
    assert out.tolist() == [0.95, 1.0]


def test_cocob_zero_gradient_is_still():
    x = np.array([0.5, -1.0])
    state = CocobState(x)
    for _ in range(10):
        x2 = coin_betting_step(x, np.zeros(2), state)
        assert np.array_equal(x2, x)


def test_cocob_moves_against_constant_sign():
    x = np.zeros(2)
    state = CocobState(x)
    traj = []
    for _ in range(50):
        x = coin_betting_step(x, np.array([1.0, -0.5]), state)
        traj.append(x.copy())
    traj = np.array(traj)
    assert np.all(np.diff(traj[:, 0]) < 0) and np.all(np.diff(traj[:, 1]) > 0)


def perfect_cache(V=3, m=30):
    labels = np.arange(m) % 2
    preds = [labels[None].copy() for _ in range(V)]
    return PredictionCache(preds, {"train": (0, m)}, 2), labels


def test_perfect_voters_reach_closed_form():
    cache, labels = perfect_cache()
    params, rep = minimize("K", cache, labels, OptimConfig(max_iters=100),
                           initial_params(cache, "kl"))
    s = empirical_stats(cache, params.rho, params.Q, labels)
    assert s.gibbs == 0.0
    psi = psi_terms(params, s.m, s.n)
    assert rep.certified_value <= 2 * (1 - math.exp(-psi.psi_r)) + 1e-8
    assert rep.trace[-1] <= rep.trace[0]


def test_identical_views_keep_uniform_rho():
    rng = np.random.default_rng(0)
    block = rng.integers(0, 2, size=(4, 40))
    labels = rng.integers(0, 2, size=40)
    cache = PredictionCache([block, block.copy()], {"train": (0, 40)}, 2)
    params, _ = minimize("K", cache, labels, OptimConfig(max_iters=200))
    assert np.allclose(params.rho, 0.5, atol=1e-3)


def _instance(seed, C=2):
    rng = np.random.default_rng(seed)
    cache, _, _, labels = random_instance(rng, n_views=3, max_voters=5, n_samples=60,
                                          n_classes=C, n_unlabeled=30)
    return cache, labels


@pytest.mark.parametrize("kind", [str(k) for k in TRAINABLE])
def test_descent_and_invariants(kind):
    cache, labels = _instance(1)
    seen = []

    def check(k, p):
        assert abs(p.rho.sum() - 1) <= 1e-12
        assert all(abs(q.sum() - 1) <= 1e-12 for q in p.Q)
        assert LAMBDA_MIN <= p.lam <= LAMBDA_MAX and LAMBDA_MIN <= p.lam1 <= LAMBDA_MAX
        assert LAMBDA_MIN <= p.lam2 <= LAMBDA_MAX and p.gamma > 0
        assert p.alpha > 1 and all(a > 1 for a in p.alpha_v)
        seen.append(k)

    params, rep = minimize(kind, cache, labels, OptimConfig(max_iters=150),
                           initial_params(cache, "learnable"), callback=check)
    assert seen and rep.trace[-1] <= rep.trace[0]
    s = empirical_stats(cache, params.rho, params.Q, labels)
    again = eval_bound(kind, s, psi_terms(params, s.m, s.n), params)
    assert rep.certified_value == pytest.approx(again, abs=1e-12)


def test_determinism():
    cache, labels = _instance(2)
    _, a = minimize("Ku", cache, labels, OptimConfig(max_iters=60))
    _, b = minimize("Ku", cache, labels, OptimConfig(max_iters=60))
    assert a.trace == b.trace


def test_coin_betting_decreases_c_tandem():
    cache, labels = _instance(3)
    cfg = OptimConfig(max_iters=200)
    assert cfg.optimizer_for(BoundKind.CTandem) == "coin_betting"
    _, rep = minimize("CTandem", cache, labels, cfg)
    assert rep.trace[-1] < rep.trace[0]


def test_convergence_stops_early():
    cache, labels = perfect_cache()
    _, rep = minimize("K", cache, labels, OptimConfig(max_iters=1000, tol=1e-3))
    assert rep.converged and len(rep.trace) < 1001


@pytest.mark.parametrize("kind", ["R", "K", "CTandem"])
def test_grad_check_examples(kind):
    cache, labels = _instance(4)
    rng = np.random.default_rng(0)
    p = initial_params(cache, "learnable")
    p.rho_logits = rng.normal(size=cache.n_views) * 0.3
    p.q_logits = [rng.normal(size=h) * 0.3 for h in cache.n_voters]
    p.lam, p.alpha_raw = 0.8, -1.0
    assert grad_check(kind, p, cache, labels) <= 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(max_iters=0)
    with pytest.raises(ValueError):
        OptimConfig(optimizer="sgd")


def test_fixed_alpha_is_not_trained():
    cache, labels = _instance(5)
    params, _ = minimize("K", cache, labels, OptimConfig(max_iters=30),
                         initial_params(cache, "fixed", 2.0))
    assert params.alpha == 2.0 and params.alpha_v == [2.0] * 3
    assert isinstance(params, PosteriorParams)
    assert BarrierConfig().t == 100.0
