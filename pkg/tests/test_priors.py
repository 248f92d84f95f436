import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit

from gpnode.priors import (
    FH_TAG,
    FHConfig,
    FHLatents,
    Gamma,
    HalfCauchy,
    InvGamma,
    Lognormal,
    Normal,
    ParamSpace,
    PriorConfigError,
    Uniform,
    fh_log_prior,
    lambda_tilde,
    parse_prior,
)


def _fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


# --- scalar families ---------------------------------------------------


def test_lognormal_at_one():
    lp, g = Lognormal(0.0, 1.0).logp(0.0)
    assert lp == pytest.approx(-0.918939, abs=1e-6)
    assert g == 0.0


def test_gamma_is_exponential():
    # log density of Exp(rate 1/2) at l=2 plus log-Jacobian log(2)
    lp, _ = Gamma(1.0, 0.5).logp(np.log(2.0))
    assert lp == pytest.approx(-1.693147 + np.log(2.0), abs=1e-6)


def test_uniform_jacobian_against_numeric():
    fam = Uniform(4.0, 6.0)
    for u in (-3.0, -0.4, 0.0, 1.2, 5.0):
        dxdu = _fd(fam.forward, u, h=1e-4)
        lp, _ = fam.logp(u)
        assert lp == pytest.approx(np.log(0.5) + np.log(dxdu), abs=1e-8)


def test_uniform_midpoint_and_bounds():
    fam = Uniform(4.0, 6.0)
    assert fam.inverse(5.0) == pytest.approx(0.0, abs=1e-15)
    assert fam.forward(0.0) == 5.0
    with pytest.raises(ValueError):
        fam.inverse(6.5)
    # saturation is clamped rather than infinite
    assert fam.inverse(6.0) == 35.0
    assert fam.inverse(4.0) == -35.0


@pytest.mark.parametrize("fam", [Lognormal(0.3, 0.7), Gamma(2.0, 0.5), HalfCauchy(1.3),
                                 InvGamma(0.5, 0.5), Uniform(1.0, 10.0), Normal(1.0, 2.0)])
def test_family_density_matches_scipy(fam):
    """Constrained scipy density times |dx/du| integrates the same object."""
    ref = {
        Lognormal: lambda f: stats.lognorm(f.sigma, scale=np.exp(f.mu)),
        Gamma: lambda f: stats.gamma(f.alpha, scale=1 / f.beta),
        HalfCauchy: lambda f: stats.halfcauchy(scale=f.scale),
        InvGamma: lambda f: stats.invgamma(f.a, scale=f.b),
        Uniform: lambda f: stats.uniform(f.a, f.b - f.a),
        Normal: lambda f: stats.norm(f.mu, f.sigma),
    }[type(fam)](fam)
    for u in (-1.1, 0.2, 0.9):
        x = fam.forward(u)
        expect = ref.logpdf(x) + np.log(abs(_fd(fam.forward, u)))
        lp, g = fam.logp(u)
        assert lp == pytest.approx(expect, abs=1e-6)
        assert g == pytest.approx(_fd(lambda v: fam.logp(v)[0], u), abs=1e-6)


def test_median_u_is_median():
    for fam in (Gamma(1.0, 0.5), InvGamma(0.5, 0.5), HalfCauchy(2.0)):
        x = fam.forward(fam.median_u())
        cdf = {Gamma: stats.gamma(1.0, scale=2.0).cdf,
               InvGamma: stats.invgamma(0.5, scale=0.5).cdf,
               HalfCauchy: stats.halfcauchy(scale=2.0).cdf}[type(fam)]
        assert cdf(x) == pytest.approx(0.5, abs=1e-10)


def test_family_validation():
    with pytest.raises(PriorConfigError):
        Uniform(2.0, 1.0)
    with pytest.raises(PriorConfigError):
        Gamma(0.0, 1.0)


def test_parse_prior():
    assert parse_prior("uniform(1, 10)") == Uniform(1.0, 10.0)
    assert parse_prior("Lognormal(0,1)") == Lognormal(0.0, 1.0)
    assert parse_prior("finnish_horseshoe") == FH_TAG
    with pytest.raises(PriorConfigError):
        parse_prior("laplace(0, 1)")
    with pytest.raises(PriorConfigError):
        parse_prior("uniform(")


# --- Finnish horseshoe -------------------------------------------------


def test_tau0_lv_counts():
    cfg = FHConfig(M=14, n_obs=103)
    assert cfg.m0 == 13
    assert cfg.tau0 == pytest.approx(1.28092, abs=1e-5)


def test_fh_config_validation():
    with pytest.raises(PriorConfigError):
        FHConfig(M=4, n_obs=10, m0=4)
    with pytest.raises(PriorConfigError):
        FHConfig(M=4, n_obs=0)


def test_lambda_tilde_limits():
    tau, c2 = 0.7, 2.5
    big = lambda_tilde(1e9, tau, c2)
    assert tau * big == pytest.approx(np.sqrt(c2), rel=1e-9)
    small = lambda_tilde(1e-9, tau, c2)
    assert small == pytest.approx(1e-9, rel=1e-9)
    lam = np.geomspace(1e-3, 1e3, 50)
    lt = lambda_tilde(lam, tau, c2)
    assert np.all(lt <= np.minimum(lam, np.sqrt(c2) / tau) * (1 + 1e-12))


def test_fh_log_prior_by_hand():
    cfg = FHConfig(M=3, n_obs=20)
    lat = FHLatents(tau=0.4, c2=1.7, lam=np.array([0.5, 2.0, 9.0]), theta=np.array([0.1, -0.3, 1.2]))
    sd = 0.4 * np.sqrt(1.7) * lat.lam / np.sqrt(1.7 + 0.16 * lat.lam**2)
    # log-scale coordinates: each positive latent carries a +log(x) Jacobian
    expect = (stats.halfcauchy(scale=cfg.tau0).logpdf(0.4) + np.log(0.4)
              + stats.invgamma(0.5, scale=0.5).logpdf(1.7) + np.log(1.7)
              + np.sum(stats.halfcauchy.logpdf(lat.lam) + np.log(lat.lam))
              + np.sum(stats.norm.logpdf(lat.theta, scale=sd)))
    assert fh_log_prior(lat, cfg) == pytest.approx(expect, abs=1e-10)


def test_fh_log_prior_decomposes():
    cfg = FHConfig(M=4, n_obs=30)
    base = FHLatents(0.5, 2.0, np.array([0.3, 1.0, 2.0, 4.0]), np.array([0.2, -0.1, 0.5, 1.0]))

    def term(lam_j, theta_j):
        sd = base.tau * lambda_tilde(lam_j, base.tau, base.c2)
        return (stats.halfcauchy.logpdf(lam_j) + np.log(lam_j)
                + stats.norm.logpdf(theta_j, scale=sd))

    lam2 = base.lam.copy()
    lam2[2] = 7.5
    moved = FHLatents(base.tau, base.c2, lam2, base.theta)
    diff = fh_log_prior(moved, cfg) - fh_log_prior(base, cfg)
    assert diff == pytest.approx(term(7.5, 0.5) - term(2.0, 0.5), abs=1e-10)


def test_fh_rejects_nonpositive():
    with pytest.raises(ValueError):
        fh_log_prior(FHLatents(0.0, 1.0, np.ones(2), np.zeros(2)), FHConfig(M=2, n_obs=5))


def test_slab_marginal_is_student_t():
    """With lambda forced large, theta = c * eta and c^2 ~ InvGamma(1/2, 1/2)."""
    rng = np.random.default_rng(7)
    n = 10_000
    tau = 1.0
    c2 = stats.invgamma(0.5, scale=0.5).rvs(n, random_state=rng)
    lam = 1e8
    theta = tau * lambda_tilde(lam, tau, c2) * rng.standard_normal(n)
    ks = stats.kstest(theta, stats.t(1).cdf).statistic
    assert ks < 0.05


# --- parameter space ---------------------------------------------------


def _space():
    names = ["a", "b", "c", "k", "x0"]
    priors = {"a": FH_TAG, "b": FH_TAG, "c": FH_TAG, "k": Gamma(2.0, 1.0), "x0": Uniform(4.0, 6.0)}
    return ParamSpace(names, ["x", "y"], priors, FHConfig(M=3, n_obs=40))


def test_space_layout():
    sp = _space()
    assert sp.dim == 2 + 2 + 3 + 3 + 6
    assert sp.constrained_names[:5] == ["a", "b", "c", "k", "x0"]
    assert sp.constrained_names[5:7] == ["tau", "c2"]
    assert sp.constrained_names[-3:] == ["w_y", "l_y", "eps_y"]


def test_space_config_errors():
    with pytest.raises(PriorConfigError):
        ParamSpace(["a"], ["x"], {})
    with pytest.raises(PriorConfigError):
        ParamSpace(["a"], ["x"], {"a": FH_TAG})
    with pytest.raises(PriorConfigError):
        ParamSpace(["a"], ["x"], {"a": Normal(), "zz": Normal()})
    with pytest.raises(PriorConfigError):
        ParamSpace(["a"], ["x"], {"a": Normal(), "w_x": Uniform(0, 1)})


def test_round_trip_simple_values():
    sp = _space()
    u = sp.initial_point()
    x = sp.transform(u)
    x[sp.constrained_names.index("w_x")] = 3.7
    x[sp.constrained_names.index("x0")] = 5.0
    u2 = sp.inverse_transform(x)
    assert sp.transform(u2)[sp.constrained_names.index("w_x")] == pytest.approx(3.7, abs=1e-12)
    assert u2[sp.names.index("u_x0")] == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=16, max_size=16))
def test_round_trip_random(vals):
    sp = _space()
    u = np.array(vals)
    back = sp.inverse_transform(sp.transform(u))
    assert np.max(np.abs(back - u)) < 1e-12


def test_initial_point_is_prior_median():
    sp = _space()
    x = dict(zip(sp.constrained_names, sp.transform(sp.initial_point())))
    assert x["x0"] == 5.0
    assert x["a"] == 0.0
    assert x["w_x"] == 1.0
    assert x["l_x"] == pytest.approx(2 * np.log(2), rel=1e-12)
    assert x["tau"] == pytest.approx(FHConfig(M=3, n_obs=40).tau0, rel=1e-12)


def test_noncentered_prior_matches_centered_density():
    """Non-centered log prior = centered log prior + log|d theta / d eta|."""
    sp = _space()
    rng = np.random.default_rng(3)
    u = rng.normal(size=sp.dim)
    p = sp.unpack(u)
    centered = fh_log_prior(p.fh, sp.fh_config)
    sd = p.fh.tau * p.fh.lam_tilde
    noncentered = sp.log_prior(u)
    rest = Gamma(2.0, 1.0).logp(u[0])[0] + Uniform(4.0, 6.0).logp(u[1])[0]
    lw, ll, le = sp._gp_slices(u)
    rest += sum(Lognormal().logp(v)[0] for v in np.r_[lw, le])
    rest += sum(Gamma(1.0, 0.5).logp(v)[0] for v in ll)
    assert noncentered - rest == pytest.approx(centered + np.sum(np.log(sd)), abs=1e-9)


def test_log_prior_gradient_fd(rng):
    sp = _space()
    for _ in range(5):
        u = rng.normal(scale=0.8, size=sp.dim)
        _, g = sp.log_prior_and_grad(u)
        fd = np.array([_fd(lambda s, i=i: sp.log_prior(u + s * np.eye(sp.dim)[i]), 0.0)
                       for i in range(sp.dim)])
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_pullback_matches_fd(rng):
    """Chain rule from constrained-coordinate gradients to u."""
    sp = _space()
    u = rng.normal(scale=0.5, size=sp.dim)
    weights = rng.normal(size=5)

    def f(v):
        p = sp.unpack(v)
        return (weights @ p.theta_f + np.sum(np.sin(p.log_w)) + np.sum(p.log_l ** 2)
                + np.sum(p.log_eps))

    p = sp.unpack(u)
    g = sp.pullback(u, weights, np.cos(p.log_w), 2 * p.log_l, np.ones_like(p.log_eps))
    fd = np.array([_fd(lambda s, i=i: f(u + s * np.eye(sp.dim)[i]), 0.0) for i in range(sp.dim)])
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_uniform_transform_derivative():
    sp = ParamSpace(["x0"], [], {"x0": Uniform(4.0, 6.0)})
    u = np.array([0.7])
    g = sp.pullback(u, np.array([1.0]), [], [], [])
    assert g[0] == pytest.approx(2.0 * expit(0.7) * (1 - expit(0.7)), rel=1e-12)


# --- centered horseshoe ------------------------------------------------


def _centered_space():
    names = ["a", "b", "c", "k", "x0"]
    priors = {"a": FH_TAG, "b": FH_TAG, "c": FH_TAG, "k": Gamma(2.0, 1.0), "x0": Uniform(4.0, 6.0)}
    return ParamSpace(names, ["x", "y"], priors, FHConfig(M=3, n_obs=40, centered=True))


def test_centered_space_samples_coefficients_directly(rng):
    sp = _centered_space()
    assert "a" in sp.names and not any(n.startswith("eta_") for n in sp.names)
    u = rng.normal(size=sp.dim)
    x = dict(zip(sp.constrained_names, sp.transform(u)))
    assert x["a"] == u[sp.names.index("a")]
    assert np.allclose(sp.inverse_transform(sp.transform(u)), u, atol=1e-12)


def test_centered_density_and_gradient(rng):
    sp, nc = _centered_space(), _space()
    for _ in range(4):
        u = rng.normal(scale=0.7, size=sp.dim)
        # same constrained point in both parameterizations
        v = nc.inverse_transform(sp.transform(u))
        p = nc.unpack(v)
        jac = np.sum(np.log(p.fh.tau * p.fh.lam_tilde))
        assert sp.log_prior(u) == pytest.approx(nc.log_prior(v) - jac, abs=1e-9)
        _, g = sp.log_prior_and_grad(u)
        fd = np.array([_fd(lambda s, i=i: sp.log_prior(u + s * np.eye(sp.dim)[i]), 0.0)
                       for i in range(sp.dim)])
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_centered_pullback_passes_coefficients(rng):
    sp = _centered_space()
    u = rng.normal(size=sp.dim)
    w = rng.normal(size=5)
    p = sp.unpack(u)
    g = sp.pullback(u, w, np.zeros_like(p.log_w), np.zeros_like(p.log_l),
                    np.zeros_like(p.log_eps))
    for name, wi in zip(["a", "b", "c"], w[:3]):
        assert g[sp.names.index(name)] == wi
    assert np.all(g[sp.i_tau: sp.sl_lam.stop] == 0)
