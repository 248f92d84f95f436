import numpy as np
import pytest
from scipy import stats

from gpnode.gp import KernelHyper, kernel_matrix
from gpnode.inference import (
    Chain,
    LikelihoodBlock,
    NutsConfig,
    Posterior,
    SamplerError,
    map_point,
    nuts_sample,
    run_chain,
)
from gpnode.inference.nuts import NUTS, _State
from gpnode.pipeline.presets import get_preset
from gpnode.pipeline.problem import build_problem
from gpnode.priors import Gamma, Lognormal, ParamSpace


@pytest.fixture(scope="module")
def lv_problem():
    pre = get_preset("lv")
    obs = pre.simulate(seed=0)
    return build_problem(pre.model, obs, pre.priors)


def _near_truth(problem, rng, jitter=0.02):
    """Unconstrained point near the generating LV parameters."""
    pre = get_preset("lv")
    sp = problem.space
    phys = dict(pre.truth)
    for n in problem.model.rhs_param_names:
        phys.setdefault(n, 0.0)
    phys["x1_0"] = 5.0
    theta = problem.theta_f_model(phys)
    x = sp.transform(sp.initial_point())
    x[: theta.size] = theta
    u = sp.inverse_transform(x)
    return u + jitter * rng.standard_normal(u.size)


def _fd_grad(f, u, h=1e-6):
    g = np.empty(u.size)
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


# --- posterior ---------------------------------------------------------


def test_lv_gradient_matches_fd(lv_problem, rng):
    post = lv_problem.posterior
    u = _near_truth(lv_problem, rng)
    lp, g = post(u)
    assert np.isfinite(lp)
    fd = _fd_grad(post.log_posterior, u)
    scale = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
    assert np.max(np.abs(g - fd) / scale) < 1e-5


def test_dimension_bookkeeping(lv_problem):
    post = lv_problem.posterior
    # 14 coefficients + x1_0, horseshoe tau, c2, 14 lambdas, 3 hypers per variable
    assert post.dim == 14 + 1 + 2 + 14 + 6
    assert post.n_obs == 103


def test_hyper_gradient_dense_oracle(lv_problem, rng):
    """d log p / d log w against 1/2 tr((a a^T - S^-1) dS/dlog w) computed densely."""
    post = lv_problem.posterior
    sp = post.space
    u = _near_truth(lv_problem, rng)
    p = sp.unpack(u)
    _, g = post(u)
    from gpnode.integrate import solve

    sol = solve(post.model, post.z0, post.grid, p.theta_f, post.solver)
    b = post.blocks[1]
    rows = post.rows[1]
    r = b.values - b.mean_scale * sol.states[rows, b.state_index]
    h = KernelHyper(np.exp(p.log_w[1]), np.exp(p.log_l[1]), float(np.exp(p.log_eps[1])))
    K = kernel_matrix(h, b.gp_times, b.gp_times)
    S = K + h.eps * np.eye(r.size)
    Si = np.linalg.inv(S)
    a = Si @ r
    analytic = 0.5 * np.trace((np.outer(a, a) - Si) @ K)
    prior_term = Lognormal().logp(p.log_w[1])[1]
    idx = sp.names.index("log_w_x2")
    assert g[idx] == pytest.approx(analytic + prior_term, rel=1e-8)


def test_empty_data_is_prior():
    sp = ParamSpace(["k"], ["x"], {"k": Gamma(2.0, 1.0)})
    block = LikelihoodBlock("x", 0, np.array([]), np.array([]), np.array([]))

    class _Model:
        n_params = 1

    post = Posterior(_Model(), np.array([1.0]), 0.0, [block], sp)
    for u in (np.array([0.1, 0.0, 0.2, -0.3]), np.array([-1.0, 0.5, 0.5, 0.5])):
        lp, g = post(u)
        lp0, g0 = sp.log_prior_and_grad(u)
        assert lp == lp0
        assert np.array_equal(g, g0)


def test_failed_solve_is_minus_inf(lv_problem):
    post = lv_problem.posterior
    u = post.space.initial_point()
    u[post.space.names.index("eta_a11")] = 1e3
    u[post.space.names.index("log_tau")] = 5.0
    lp, g = post(u)
    assert lp == -np.inf
    assert np.all(g == 0)
    nan_lp, _ = post(np.full(post.dim, np.nan))
    assert nan_lp == -np.inf


# --- NUTS on known targets ---------------------------------------------


def _gauss(cov):
    P = np.linalg.inv(cov)

    def f(u):
        return -0.5 * u @ P @ u, -P @ u
    return f


def test_standard_normal_10d():
    cfg = NutsConfig(warmup=1000, samples=2000, seed=1)
    ch = run_chain(_gauss(np.eye(10)), np.zeros(10), cfg)
    m = ch.draws.mean(axis=0)
    v = ch.draws.var(axis=0)
    assert np.all(np.abs(m) < 0.1)
    assert np.all((v > 0.85) & (v < 1.15))
    assert np.all(np.isfinite(ch.log_prob))


def test_correlated_gaussian():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    ch = run_chain(_gauss(cov), np.zeros(2), NutsConfig(warmup=1000, samples=2000, seed=2))
    rho = np.corrcoef(ch.draws.T)[0, 1]
    assert abs(rho - 0.9) < 0.05


def test_chi_squared_smoke():
    ch = run_chain(_gauss(np.eye(1)), np.zeros(1), NutsConfig(warmup=500, samples=2000, seed=3))
    edges = stats.norm.ppf(np.linspace(0, 1, 21))
    counts, _ = np.histogram(ch.draws[:, 0], bins=edges)
    p = stats.chisquare(counts).pvalue
    assert p > 0.01


def test_deterministic_seeding():
    f = _gauss(np.diag([1.0, 4.0, 0.25]))
    cfg = NutsConfig(warmup=100, samples=100, seed=11)
    a = run_chain(f, np.zeros(3), cfg)
    b = run_chain(f, np.zeros(3), cfg)
    assert np.array_equal(a.draws, b.draws)
    c = run_chain(f, np.zeros(3), cfg, chain_id=1)
    assert not np.array_equal(a.draws, c.draws)


def test_energy_conservation_small_step():
    f = _gauss(np.eye(5))
    rng = np.random.default_rng(0)
    s = NUTS(f, 5, rng)
    q = rng.standard_normal(5)
    lp, g = f(q)
    st = _State(q, rng.standard_normal(5), lp, g)
    h0 = s._hamiltonian(st)
    for _ in range(1000):
        st = s._leapfrog(st, 1e-4)
    assert abs(s._hamiltonian(st) - h0) < 1e-6


def test_step_size_adapts_to_scale():
    f = _gauss(np.diag([100.0, 100.0]))
    ch = run_chain(f, np.zeros(2), NutsConfig(warmup=500, samples=500, seed=4))
    assert np.allclose(ch.inv_metric, 100.0, rtol=0.5)
    assert 0.6 < ch.accept_stat.mean() < 0.98


def test_minus_inf_region_never_accepted():
    def f(u):
        if u[0] < 0:
            return -np.inf, np.zeros(2)
        return -0.5 * u @ u, -u
    ch = run_chain(f, np.array([1.0, 0.0]), NutsConfig(warmup=300, samples=500, seed=5))
    assert np.all(np.isfinite(ch.log_prob))
    assert np.all(ch.draws[:, 0] >= 0)


def test_all_divergent_warmup_raises():
    calls = []

    def f(u):
        # finite only at the initial point evaluation
        calls.append(1)
        if len(calls) > 1:
            return -np.inf, np.zeros(2)
        return -0.5 * u @ u, -u
    with pytest.raises(SamplerError) as exc:
        run_chain(f, np.array([0.3, 0.3]), NutsConfig(warmup=20, samples=5, seed=0))
    assert "warmup" in exc.value.diagnostics


def test_config_validation():
    with pytest.raises(ValueError):
        NutsConfig(target_accept=1.0)
    with pytest.raises(ValueError):
        NutsConfig(samples=0)


# --- map_point ---------------------------------------------------------


def _chain(draws, lp):
    n = len(lp)
    return Chain(np.asarray(draws, float), np.asarray(lp, float), np.ones(n), np.ones(n, int),
                 np.ones(n, int), np.zeros(n, bool), np.ones(n), np.ones(2))


def test_map_point_single_and_append():
    c = _chain([[1.0, 2.0]], [-3.0])
    assert np.array_equal(map_point(c), [1.0, 2.0])
    c2 = _chain([[1.0, 2.0], [5.0, 5.0]], [-3.0, -7.0])
    assert np.array_equal(map_point(c2), [1.0, 2.0])
    with pytest.raises(ValueError):
        map_point(_chain(np.zeros((0, 2)), []))


def test_map_point_is_central():
    ch = run_chain(_gauss(np.eye(10)), np.zeros(10), NutsConfig(warmup=500, samples=1000, seed=6))
    m = map_point(ch)
    assert np.linalg.norm(m) < np.median(np.linalg.norm(ch.draws, axis=1))


def test_nuts_sample_constrained_views(lv_problem):
    post = lv_problem.posterior
    cfg = NutsConfig(warmup=3, samples=3, chains=2, seed=0, max_tree_depth=3)
    chains = nuts_sample(post, cfg)
    assert len(chains) == 2
    for ch in chains:
        assert ch.constrained.shape == (3, len(post.space.constrained_names))
        assert np.array_equal(ch.constrained, post.space.transform_many(ch.draws))
        assert ch.names == post.space.names


# --- dense metric ------------------------------------------------------


def test_dense_metric_learns_correlation():
    cov = np.array([[1.0, 0.99], [0.99, 1.0]])
    cfg = NutsConfig(warmup=1000, samples=2000, seed=7, metric="dense")
    ch = run_chain(_gauss(cov), np.zeros(2), cfg)
    assert ch.inv_metric.shape == (2, 2)
    assert np.allclose(ch.inv_metric, cov, atol=0.15)
    assert abs(np.corrcoef(ch.draws.T)[0, 1] - 0.99) < 0.01
    diag = run_chain(_gauss(cov), np.zeros(2), NutsConfig(warmup=1000, samples=2000, seed=7))
    # a diagonal metric needs long trajectories along the ridge
    assert ch.n_leapfrog.mean() < 0.5 * diag.n_leapfrog.mean()


def test_dense_metric_given_upfront_conserves_energy():
    cov = np.array([[4.0, 1.0], [1.0, 1.0]])
    f = _gauss(cov)
    rng = np.random.default_rng(0)
    s = NUTS(f, 2, rng)
    s.set_metric(cov)
    q = np.array([0.5, -0.2])
    lp, g = f(q)
    st = _State(q, rng.standard_normal(2), lp, g)
    h0 = s._hamiltonian(st)
    for _ in range(500):
        st = s._leapfrog(st, 1e-3)
    assert abs(s._hamiltonian(st) - h0) < 1e-6
    # with the exact covariance as metric the kinetic energy is p^T cov p / 2
    assert s._velocity(np.array([1.0, 0.0])) == pytest.approx(cov[:, 0])


def test_laplace_metric_is_gaussian_covariance():
    from gpnode.pipeline.warmstart import laplace_inv_metric

    cov = np.array([[0.5, 0.2, 0.0], [0.2, 1.0, -0.3], [0.0, -0.3, 1.5]])
    m = laplace_inv_metric(_gauss(cov), np.array([0.3, -0.1, 0.2]), min_precision=1e-3)
    assert np.allclose(m, cov, atol=1e-6)
    flat = laplace_inv_metric(_gauss(np.diag([1.0, 100.0])), np.zeros(2), min_precision=0.5)
    assert flat[1, 1] == pytest.approx(2.0)  # curvature floor caps the variance


def test_run_chain_accepts_initial_metric():
    f = _gauss(np.diag([9.0, 0.01]))
    cfg = NutsConfig(warmup=0, samples=200, seed=1, metric="dense")
    ch = run_chain(f, np.zeros(2), cfg, inv_metric=np.diag([9.0, 0.01]))
    assert np.array_equal(ch.inv_metric, np.diag([9.0, 0.01]))
    with pytest.raises(ValueError):
        NutsConfig(metric="full")
