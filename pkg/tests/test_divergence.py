import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvpb.divergence import (BISECT_EPS, AlphaParam, BarrierConfig, kl_binary, kl_categorical,
                             kl_categorical_grad, kl_inv_grad, kl_inv_lower, kl_inv_lower_grad,
                             kl_inv_upper, kl_inv_upper_grad, log_barrier, renyi_div,
                             renyi_div_grad)

# frozen from an independent scipy brentq root solve at xtol=1e-15
KL_01_02 = 0.036690014034750584
UPPER_01_02 = 0.3783915488478941
UPPER_01_02_DPSI = 0.8448941269294754
LOWER_05_01 = 0.28712136854417597


def test_kl_binary_examples():
    assert kl_binary(0.3, 0.3) == 0.0
    assert kl_binary(0.0, 0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_binary(0.1, 0.2) == pytest.approx(KL_01_02, abs=1e-15)


def test_kl_binary_rejects_boundary_p():
    with pytest.raises(ValueError):
        kl_binary(0.5, 0.0)
    with pytest.raises(ValueError):
        kl_binary(0.5, 1.0)


@given(st.floats(0, 1), st.floats(1e-6, 1 - 1e-6))
def test_pinsker(q, p):
    assert kl_binary(q, p) >= 2 * (q - p) ** 2 - 1e-12


def test_kl_categorical_examples():
    u = np.full(4, 0.25)
    assert kl_categorical(u, u) == 0.0
    assert kl_categorical([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert kl_categorical([0.8, 0.2], [0.5, 0.5]) == pytest.approx(0.192745, abs=1e-6)


def test_renyi_examples():
    Q, P = np.array([0.8, 0.2]), np.array([0.5, 0.5])
    assert renyi_div(P, P, 3.0) == pytest.approx(0.0, abs=1e-15)
    assert renyi_div(Q, P, 2.0) == pytest.approx(math.log(1.36), abs=1e-14)
    assert renyi_div(Q, P, 1 + 1e-6) == pytest.approx(0.192745, abs=1e-4)


def _simplex(rng, k):
    return rng.dirichlet(np.ones(k))


def test_renyi_dominates_kl_and_is_monotone():
    rng = np.random.default_rng(0)
    alphas = np.linspace(1.05, 5.0, 10)
    for _ in range(10):
        Q, P = _simplex(rng, 5), _simplex(rng, 5)
        kl = kl_categorical(Q, P)
        vals = [renyi_div(Q, P, a) for a in alphas]
        assert all(v >= kl - 1e-12 for v in vals)
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_renyi_product_identity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        Q, P = _simplex(rng, 4), _simplex(rng, 4)
        alpha = 1 + rng.uniform(0.01, 3)
        QQ, PP = np.outer(Q, Q).ravel(), np.outer(P, P).ravel()
        assert renyi_div(QQ, PP, alpha) == pytest.approx(2 * renyi_div(Q, P, alpha), abs=1e-10)


def test_renyi_gradient_matches_differences():
    rng = np.random.default_rng(2)
    Q, P = _simplex(rng, 5), _simplex(rng, 5)
    alpha, h = 1.7, 1e-6
    _, dQ, dalpha = renyi_div_grad(Q, P, alpha)
    num_a = (renyi_div(Q, P, alpha + h) - renyi_div(Q, P, alpha - h)) / (2 * h)
    assert dalpha == pytest.approx(num_a, rel=1e-5)
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        # unnormalized perturbation: the formula is a function of raw Q entries
        num = (renyi_div_raw(Q + e, P, alpha) - renyi_div_raw(Q - e, P, alpha)) / (2 * h)
        assert dQ[i] == pytest.approx(num, rel=1e-5)


def renyi_div_raw(Q, P, alpha):
    return math.log(np.sum(Q ** alpha * P ** (1 - alpha))) / (alpha - 1)


def test_kl_categorical_gradient():
    Q, P = np.array([0.6, 0.3, 0.1]), np.array([0.2, 0.5, 0.3])
    val, g = kl_categorical_grad(Q, P)
    assert val == pytest.approx(kl_categorical(Q, P), abs=1e-15)
    assert np.allclose(g, np.log(Q / P) + 1.0, atol=1e-14)


def test_kl_inv_upper_examples():
    assert kl_inv_upper(0.3, 0.0) == 0.3
    assert kl_inv_upper(0.0, math.log(2)) == pytest.approx(0.5, abs=1e-9)
    p = kl_inv_upper(0.1, 0.2)
    assert p == pytest.approx(UPPER_01_02, abs=1e-8)
    assert abs(kl_binary(0.1, p) - 0.2) <= 1e-6


def test_kl_inv_lower_examples():
    assert kl_inv_lower(0.3, 0.0) == 0.3
    assert kl_inv_lower(1.0, math.log(2)) == pytest.approx(0.5, abs=1e-9)
    p = kl_inv_lower(0.5, 0.1)
    assert p < 0.5
    assert abs(kl_binary(0.5, p) - 0.1) <= 1e-6
    assert p == pytest.approx(LOWER_05_01, abs=1e-8)


def test_kl_inv_upper_saturates():
    assert kl_inv_upper(0.2, 50.0) == pytest.approx(1 - 10 * BISECT_EPS)


@settings(max_examples=200)
@given(st.floats(0.0, 0.95), st.floats(1e-4, 2.0))
def test_inversion_residual(q, psi):
    p = kl_inv_upper(q, psi)
    if p < 1 - 10 * BISECT_EPS:
        assert abs(kl_binary(q, p) - psi) <= 1e-6
    assert p >= q


@settings(max_examples=200)
@given(st.floats(0.05, 1.0), st.floats(1e-4, 2.0))
def test_lower_inversion_residual(q, psi):
    p = kl_inv_lower(q, psi)
    if p > 10 * BISECT_EPS:
        assert abs(kl_binary(q, p) - psi) <= 1e-6
    assert p <= q


def test_round_trip_grid():
    for q in np.linspace(0.0, 0.9, 10):
        for p in np.linspace(q + 0.01, 0.99, 10):
            assert kl_inv_upper(q, kl_binary(q, p)) == pytest.approx(p, abs=1e-8)


def test_inverse_gradients():
    p, dq, dpsi = kl_inv_upper_grad(0.1, 0.2)
    assert dpsi == pytest.approx(UPPER_01_02_DPSI, rel=1e-6)
    h = 1e-6
    num = (kl_inv_upper(0.1, 0.2 + h, 1e-15) - kl_inv_upper(0.1, 0.2 - h, 1e-15)) / (2 * h)
    assert dpsi == pytest.approx(num, rel=1e-5)
    num_q = (kl_inv_upper(0.1 + h, 0.2, 1e-15) - kl_inv_upper(0.1 - h, 0.2, 1e-15)) / (2 * h)
    assert dq == pytest.approx(num_q, rel=1e-5)


def test_upper_gradient_near_zero():
    q, psi, h = 1e-6, 0.3, 1e-9
    _, dq, _ = kl_inv_upper_grad(q, psi)
    num = (kl_inv_upper(q + h, psi, 1e-15) - kl_inv_upper(q - h, psi, 1e-15)) / (2 * h)
    assert math.isfinite(dq)
    assert dq == pytest.approx(num, rel=1e-4)


def test_lower_gradient_signs():
    _, dq, dpsi = kl_inv_lower_grad(0.5, 0.1)
    assert dpsi < 0
    assert dq > 0
    h = 1e-6
    num = (kl_inv_lower(0.5, 0.1 + h, 1e-15) - kl_inv_lower(0.5, 0.1 - h, 1e-15)) / (2 * h)
    assert dpsi == pytest.approx(num, rel=1e-5)


def test_saturated_gradient_is_zero():
    p = kl_inv_upper(0.2, 50.0)
    assert kl_inv_grad(0.2, 50.0, p, "upper") == (0.0, 0.0)


def test_log_barrier_examples():
    t = 100.0
    assert log_barrier(-1.0, BarrierConfig(t))[0] == pytest.approx(0.0, abs=1e-15)
    a = -1 / t ** 2
    expected = 2 * math.log(t) / t
    assert log_barrier(a, t)[0] == pytest.approx(expected, abs=1e-12)
    assert log_barrier(a * (1 + 1e-12), t)[0] == pytest.approx(expected, abs=1e-9)
    assert log_barrier(0.0, t)[0] == pytest.approx(0.10210340371976183, abs=1e-12)
    assert log_barrier(0.3, t)[1] == t
    assert log_barrier(-0.5, t)[1] == pytest.approx(1 / (t * 0.5))


def test_barrier_config_validates():
    with pytest.raises(ValueError):
        BarrierConfig(0.0)


def test_alpha_param_round_trip():
    a = AlphaParam.from_alpha(1.1)
    assert a.alpha == pytest.approx(1.1, abs=1e-14)
    assert AlphaParam(0.0).alpha == 2.0
