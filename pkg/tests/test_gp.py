import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from gpnode.gp import (
    KernelHyper, NotPositiveDefinite, assemble_covariance, block_logpdf_and_grads,
    cholesky_jittered, gp_condition, kernel_eval, mvn_logpdf,
)


def gram_by_loops(t, w, l, eps):
    n = len(t)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = w * math.exp(-((t[i] - t[j]) ** 2) / (l * l))
        K[i, i] += eps
    return K


def dense_logpdf(y, m, S):
    r = y - m
    sign, logdet = np.linalg.slogdet(S)
    return -0.5 * r @ np.linalg.inv(S) @ r - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi)


def random_case(rng, n_vars=2):
    grids, hypers = [], []
    for _ in range(n_vars):
        n = rng.integers(1, 6)
        grids.append(np.sort(rng.uniform(0, 1, n)))
        hypers.append(KernelHyper(rng.uniform(0.2, 2), rng.uniform(0.1, 1.5), rng.uniform(0.05, 1)))
    return grids, hypers


def test_kernel_values():
    assert kernel_eval(2.5, 0.7, 0.3, 0.3) == 2.5
    assert kernel_eval(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.36787944117144233, abs=1e-15)
    d = np.linspace(0, 10, 50)
    k = kernel_eval(1.0, 1.0, 0.0, d)
    assert np.all(np.diff(k) < 0) and k[-1] < 1e-40


def test_single_point_block():
    cov = assemble_covariance([np.array([0.4])], [KernelHyper(1.3, 0.5, 0.2)])
    np.testing.assert_allclose(cov.dense(), [[1.5]])


def test_three_point_gram_matches_loops():
    t = np.array([0.0, 0.3, 1.1])
    cov = assemble_covariance([t], [KernelHyper(1.0, 1.0, 0.1)])
    np.testing.assert_allclose(cov.dense(), gram_by_loops(t, 1.0, 1.0, 0.1), rtol=0, atol=1e-14)


def test_cross_blocks_are_zero(rng):
    grids, hypers = random_case(rng, 3)
    D = assemble_covariance(grids, hypers).dense()
    i = 0
    for g in grids:
        n = g.size
        assert np.all(D[i:i + n, :i] == 0) and np.all(D[i:i + n, i + n:] == 0)
        i += n


def test_standard_normal_logpdf():
    cov = assemble_covariance([np.array([0.0])], [KernelHyper(0.5, 1.0, 0.5)])
    assert mvn_logpdf(np.array([0.2]), np.array([0.2]), cov) == pytest.approx(-0.9189385332046727)


def test_logpdf_sums_over_blocks(rng):
    grids, hypers = random_case(rng, 3)
    y = rng.standard_normal(sum(g.size for g in grids))
    m = rng.standard_normal(y.size)
    total = mvn_logpdf(y, m, assemble_covariance(grids, hypers))
    parts, i = 0.0, 0
    for g, h in zip(grids, hypers):
        n = g.size
        parts += mvn_logpdf(y[i:i + n], m[i:i + n], assemble_covariance([g], [h]))
        i += n
    assert total == pytest.approx(parts, rel=1e-12)


def test_random_spd_matches_dense(rng):
    t = np.sort(rng.uniform(0, 1, 4))
    h = KernelHyper(1.7, 0.4, 0.3)
    cov = assemble_covariance([t], [h])
    y, m = rng.standard_normal(4), rng.standard_normal(4)
    S = gram_by_loops(t, 1.7, 0.4, 0.3)
    assert abs(mvn_logpdf(y, m, cov) - dense_logpdf(y, m, S)) < 1e-10
    assert abs(mvn_logpdf(y, m, cov) - multivariate_normal(m, S).logpdf(y)) < 1e-10


def test_ten_random_cases_against_dense(rng):
    for _ in range(10):
        grids, hypers = random_case(rng, 2)
        cov = assemble_covariance(grids, hypers)
        dense = np.zeros((cov.n, cov.n))
        i = 0
        for g, h in zip(grids, hypers):
            n = g.size
            dense[i:i + n, i:i + n] = gram_by_loops(g, h.w[0], h.l[0], h.eps)
            i += n
        assert np.max(np.abs(cov.dense() - dense)) < 1e-10
        y, m = rng.standard_normal(cov.n), rng.standard_normal(cov.n)
        assert abs(mvn_logpdf(y, m, cov) - dense_logpdf(y, m, dense)) < 1e-10


def dense_condition(t, tq, w, l, eps, r):
    K = gram_by_loops(t, w, l, eps)
    Kq = np.array([[w * math.exp(-((a - b) ** 2) / l**2) for b in t] for a in tq])
    Kqq = np.array([[w * math.exp(-((a - b) ** 2) / l**2) for b in tq] for a in tq])
    Ki = np.linalg.inv(K)
    return Kq @ Ki @ r, Kqq - Kq @ Ki @ Kq.T


def test_condition_matches_dense(rng):
    for _ in range(10):
        t = np.sort(rng.uniform(0, 1, 3))
        tq = np.sort(rng.uniform(-0.2, 1.2, 2))
        w, l, eps = rng.uniform(0.5, 2), rng.uniform(0.2, 1), rng.uniform(0.05, 0.5)
        r = rng.standard_normal(3)
        mc, kc = gp_condition(KernelHyper(w, l, eps), t, r, tq)
        m_ref, k_ref = dense_condition(t, tq, w, l, eps, r)
        assert np.max(np.abs(mc - m_ref)) < 1e-10
        assert np.max(np.abs(kc - k_ref)) < 1e-10


def test_condition_interpolates_when_noise_vanishes():
    t = np.array([0.0, 0.5, 1.0])
    r = np.array([0.3, -0.2, 0.7])
    mc, _ = gp_condition(KernelHyper(1.0, 0.3, 1e-10), t, r, t)
    np.testing.assert_allclose(mc, r, atol=1e-6)


def test_condition_zero_residuals():
    t = np.array([0.0, 0.5, 1.0])
    h = KernelHyper(1.0, 0.3, 0.1)
    tq = np.linspace(0, 1, 4)
    mc, kc = gp_condition(h, t, np.zeros(3), tq)
    _, k2 = gp_condition(h, t, np.ones(3), tq)
    np.testing.assert_array_equal(mc, 0.0)
    np.testing.assert_array_equal(kc, k2)


def test_condition_reverts_far_from_data():
    t = np.linspace(0, 1, 10)
    mc, kc = gp_condition(KernelHyper(1.0, 0.1, 0.01), t, np.ones(10), np.array([5.0, 10.0]))
    np.testing.assert_allclose(mc, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.diag(kc), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8, unique=True),
       st.floats(0.1, 3), st.floats(0.05, 2), st.floats(1e-4, 1))
def test_posterior_variance_bounded(times, w, l, eps):
    t = np.sort(np.array(times))
    tq = np.linspace(-0.5, 1.5, 15)
    _, kc = gp_condition(KernelHyper(w, l, eps), t, np.zeros(t.size), tq)
    d = np.diag(kc)
    assert np.all(d >= 0) and np.all(d <= w + 1e-10)


def test_block_order_invariance(rng):
    grids, hypers = random_case(rng, 3)
    sizes = [g.size for g in grids]
    y = rng.standard_normal(sum(sizes))
    m = rng.standard_normal(y.size)
    order = [2, 0, 1]
    ys = np.split(y, np.cumsum(sizes)[:-1])
    ms = np.split(m, np.cumsum(sizes)[:-1])
    a = mvn_logpdf(y, m, assemble_covariance(grids, hypers))
    b = mvn_logpdf(np.concatenate([ys[i] for i in order]), np.concatenate([ms[i] for i in order]),
                   assemble_covariance([grids[i] for i in order], [hypers[i] for i in order]))
    assert a == pytest.approx(b, rel=1e-13)


def test_hyper_gradients_match_dense_trace_formula(rng):
    t = np.sort(rng.uniform(0, 1, 6))
    r = rng.standard_normal(6)
    w, l, eps = 1.3, 0.4, 0.2
    lp, alpha, gw, gl, ge = block_logpdf_and_grads(r, t, KernelHyper(w, l, eps))
    S = gram_by_loops(t, w, l, eps)
    Si = np.linalg.inv(S)
    a = Si @ r
    d2 = (t[:, None] - t[None, :]) ** 2
    Kf = w * np.exp(-d2 / l**2)
    for dS, g in ((Kf, gw[0]), (Kf * 2 * d2 / l**2, gl[0]), (eps * np.eye(6), ge)):
        # derivatives w.r.t. log w, log l, log eps
        assert g == pytest.approx(0.5 * np.trace((np.outer(a, a) - Si) @ dS), rel=1e-10)
    np.testing.assert_allclose(alpha, a, rtol=1e-10)
    assert lp == pytest.approx(dense_logpdf(r, 0 * r, S), rel=1e-12)


def test_hyper_gradients_match_finite_differences(rng):
    t = np.sort(rng.uniform(0, 1, 5))
    r = rng.standard_normal(5)
    x = np.log([0.8, 0.3, 0.1])

    def f(v):
        return block_logpdf_and_grads(r, t, KernelHyper(*np.exp(v)))[0]

    _, _, gw, gl, ge = block_logpdf_and_grads(r, t, KernelHyper(*np.exp(x)))
    fd = [(f(x + e) - f(x - e)) / 2e-6 for e in np.eye(3) * 1e-6]
    np.testing.assert_allclose([gw[0], gl[0], ge], fd, rtol=1e-6)


def test_jitter_and_failure():
    K = np.ones((3, 3))  # rank one, rescued by jitter
    L = cholesky_jittered(K)
    assert np.all(np.isfinite(L))
    with pytest.raises(NotPositiveDefinite):
        cholesky_jittered(-np.eye(2))


def test_hyper_validation():
    with pytest.raises(ValueError):
        KernelHyper(-1.0, 1.0, 0.1)
