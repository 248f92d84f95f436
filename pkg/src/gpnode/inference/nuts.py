"""No-U-Turn sampler with multinomial trajectory sampling.

Warmup adapts the step size by dual averaging and a diagonal inverse metric
over expanding windows; the layout of the windows and the generalized U-turn
checks across subtree boundaries follow the Stan reference algorithm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class NutsConfig:
    warmup: int = 4000
    samples: int = 8000
    target_accept: float = 0.85
    max_tree_depth: int = 10
    seed: int = 0
    chains: int = 2
    init_jitter: float = 0.1
    max_delta_h: float = 1000.0
    init_step_size: float = 0.1
    metric: str = "diag"

    def __post_init__(self):
        if self.metric not in ("diag", "dense"):
            raise ValueError("metric must be 'diag' or 'dense'")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.warmup < 0 or self.samples < 1 or self.chains < 1:
            raise ValueError("need warmup >= 0, samples >= 1, chains >= 1")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class Chain:
    draws: np.ndarray  # samples x dim, unconstrained
    log_prob: np.ndarray
    step_size: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    inv_metric: np.ndarray
    names: list = field(default_factory=list)
    constrained: np.ndarray | None = None
    constrained_names: list = field(default_factory=list)
    warmup_divergences: int = 0

    @property
    def n_draws(self):
        return self.draws.shape[0]

    @property
    def divergence_rate(self):
        return float(np.mean(self.divergent)) if self.n_draws else 0.0


def map_point(chain):
    """Constrained draw with the highest recorded log-posterior."""
    if chain.n_draws == 0:
        raise ValueError("empty chain")
    i = int(np.argmax(chain.log_prob))
    src = chain.constrained if chain.constrained is not None else chain.draws
    return src[i].copy()


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------


class DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    def final(self):
        return float(np.exp(self.x_bar))


class WindowedVariance:
    """Stan-style expanding windows for the inverse metric (diagonal or dense)."""

    def __init__(self, n_warmup, init_buffer=75, term_buffer=50, base_window=25, dense=False):
        self.dense = dense
        if n_warmup < 20:
            self.enabled = False
            return
        self.enabled = True
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - (init_buffer + term_buffer)
        self.n_warmup = n_warmup
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self._reset()

    def _reset(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def _in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.n_warmup - self.term_buffer
                and self.counter != self.n_warmup)

    def _window_end(self):
        return self.counter == self.next_window and self.counter != self.n_warmup

    def _compute_next(self):
        if self.next_window == self.n_warmup - self.term_buffer - 1:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != self.n_warmup - self.term_buffer - 1:
            boundary = self.next_window + 2 * self.window_size
            if boundary >= self.n_warmup - self.term_buffer:
                self.next_window = self.n_warmup - self.term_buffer - 1

    def add(self, x):
        """Record a warmup draw; returns a new inverse metric at window ends."""
        if not self.enabled:
            return None
        out = None
        if self._in_window():
            if self.mean is None:
                self.mean = np.zeros_like(x)
                self.m2 = np.zeros((x.size, x.size)) if self.dense else np.zeros_like(x)
            self.n += 1
            delta = x - self.mean
            self.mean += delta / self.n
            self.m2 += np.outer(delta, x - self.mean) if self.dense else delta * (x - self.mean)
        if self._window_end() and self.dense and self.n < 2 * x.size:
            # too few draws for a full-rank covariance: keep the current metric
            self._compute_next()
            self._reset()
        elif self._window_end():
            var = self.m2 / (self.n - 1.0)
            shrink = 1e-3 * (5.0 / (self.n + 5.0))
            if self.dense:
                out = (self.n / (self.n + 5.0)) * var + shrink * np.eye(var.shape[0])
            else:
                out = (self.n / (self.n + 5.0)) * var + shrink
            self._compute_next()
            self._reset()
        self.counter += 1
        return out


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------


def _logsumexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m))


class _State:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q, self.p, self.logp, self.grad = q, p, logp, grad


class NUTS:
    """One chain of NUTS over a ``logp_and_grad(u) -> (float, ndarray)`` target."""

    def __init__(self, logp_and_grad, dim, rng, max_tree_depth=10, max_delta_h=1000.0):
        self.f = logp_and_grad
        self.dim = dim
        self.rng = rng
        self.max_tree_depth = max_tree_depth
        self.max_delta_h = max_delta_h
        self.set_metric(np.ones(dim))
        self.step_size = 0.1

    def set_metric(self, inv_metric):
        """Diagonal (1-d) or dense (2-d, symmetric positive definite) inverse metric."""
        inv_metric = np.asarray(inv_metric, float)
        self.inv_metric = inv_metric
        self.dense = inv_metric.ndim == 2
        if self.dense:
            self._chol = np.linalg.cholesky(inv_metric)

    def _velocity(self, p):
        return self.inv_metric @ p if self.dense else self.inv_metric * p

    def _hamiltonian(self, s):
        if not np.isfinite(s.logp):
            return np.inf
        return -s.logp + 0.5 * np.dot(s.p, self._velocity(s.p))

    def _leapfrog(self, s, eps):
        p = s.p + 0.5 * eps * s.grad
        q = s.q + eps * self._velocity(p)
        logp, grad = self.f(q)
        if not np.isfinite(logp):
            return _State(q, p, -np.inf, np.zeros(self.dim))
        p = p + 0.5 * eps * grad
        return _State(q, p, logp, grad)

    def _sample_momentum(self):
        z = self.rng.standard_normal(self.dim)
        if self.dense:
            # p ~ N(0, inv_metric^-1) with inv_metric = L L^T
            return np.linalg.solve(self._chol.T, z)
        return z / np.sqrt(self.inv_metric)

    def find_reasonable_step_size(self, q, logp, grad):
        eps = self.step_size
        s0 = _State(q, self._sample_momentum(), logp, grad)
        h0 = self._hamiltonian(s0)
        s1 = self._leapfrog(s0, eps)
        delta = h0 - self._hamiltonian(s1)
        direction = 1 if delta > np.log(0.8) else -1
        for _ in range(100):
            s0 = _State(q, self._sample_momentum(), logp, grad)
            h0 = self._hamiltonian(s0)
            s1 = self._leapfrog(s0, eps)
            delta = h0 - self._hamiltonian(s1)
            if direction == 1 and not delta > np.log(0.8):
                break
            if direction == -1 and not delta < np.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps / 2.0
            if eps > 1e7 or eps < 1e-12:
                break
        self.step_size = eps
        return eps

    @staticmethod
    def _uturn_ok(p_sharp_minus, p_sharp_plus, rho):
        return np.dot(p_sharp_plus, rho) > 0 and np.dot(p_sharp_minus, rho) > 0

    def _build_tree(self, depth, s, direction, h0, stats):
        """Extend the trajectory from ``s`` by 2**depth leapfrog steps.

        Returns (valid, end_state, proposal, log_sum_weight, rho,
        p_beg, p_end, p_sharp_beg, p_sharp_end).
        """
        if depth == 0:
            s_new = self._leapfrog(s, direction * self.step_size)
            stats["n_leapfrog"] += 1
            h = self._hamiltonian(s_new)
            if np.isnan(h):
                h = np.inf
            divergent = (h - h0) > self.max_delta_h
            if divergent:
                stats["divergent"] = True
            lw = h0 - h
            stats["sum_metro"] += 1.0 if lw > 0 else np.exp(lw)
            p_sharp = self._velocity(s_new.p)
            return (not divergent, s_new, s_new, lw, s_new.p.copy(),
                    s_new.p, s_new.p, p_sharp, p_sharp)

        ok1, s1, prop1, lw1, rho1, pb1, pe1, psb1, pse1 = self._build_tree(
            depth - 1, s, direction, h0, stats)
        if not ok1:
            return (False, s1, prop1, lw1, rho1, pb1, pe1, psb1, pse1)
        ok2, s2, prop2, lw2, rho2, pb2, pe2, psb2, pse2 = self._build_tree(
            depth - 1, s1, direction, h0, stats)
        if not ok2:
            return (False, s2, prop2, lw2, rho2, pb1, pe2, psb1, pse2)
        lw = _logsumexp(lw1, lw2)
        if lw2 > lw:
            prop = prop2
        else:
            prop = prop2 if self.rng.uniform() < np.exp(lw2 - lw) else prop1
        rho = rho1 + rho2
        persist = self._uturn_ok(psb1, pse2, rho)
        persist = persist and self._uturn_ok(psb1, psb2, rho1 + pb2)
        persist = persist and self._uturn_ok(pse1, pse2, rho2 + pe1)
        return (persist, s2, prop, lw, rho, pb1, pe2, psb1, pse2)

    def transition(self, q, logp, grad):
        p0 = self._sample_momentum()
        s0 = _State(q, p0, logp, grad)
        h0 = self._hamiltonian(s0)
        fwd = bck = s0
        p_sharp0 = self._velocity(p0)
        # momenta and sharp momenta at the two trajectory ends
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = p0
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = p_sharp0
        rho = p0.copy()
        log_sum_weight = 0.0
        sample = s0
        stats = {"n_leapfrog": 0, "sum_metro": 0.0, "divergent": False}
        depth = 0
        while depth < self.max_tree_depth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                valid, fwd, prop, lw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd, ps_fwd_bck, ps_fwd_fwd = \
                    self._build_tree(depth, fwd, 1, h0, stats)
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                valid, bck, prop, lw_sub, rho_bck, p_bck_fwd, p_bck_bck, ps_bck_fwd, ps_bck_bck = \
                    self._build_tree(depth, bck, -1, h0, stats)
            if not valid:
                break
            depth += 1
            if lw_sub > log_sum_weight:
                sample = prop
            elif self.rng.uniform() < np.exp(lw_sub - log_sum_weight):
                sample = prop
            log_sum_weight = _logsumexp(log_sum_weight, lw_sub)
            rho = rho_bck + rho_fwd
            persist = self._uturn_ok(ps_bck_bck, ps_fwd_fwd, rho)
            persist = persist and self._uturn_ok(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist = persist and self._uturn_ok(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        n_lf = max(stats["n_leapfrog"], 1)
        return sample, {
            "accept_stat": stats["sum_metro"] / n_lf,
            "n_leapfrog": stats["n_leapfrog"],
            "depth": depth,
            "divergent": stats["divergent"],
        }


def _initial_point(logp_and_grad, u_init, rng, jitter, attempts=100):
    for _ in range(attempts):
        u = u_init + jitter * rng.standard_normal(u_init.size)
        logp, grad = logp_and_grad(u)
        if np.isfinite(logp):
            return u, logp, grad
    raise SamplerError("could not find a finite initial point", {"attempts": attempts})


def _starting_metric(inv_metric, dim, dense):
    if inv_metric is None:
        return np.eye(dim) if dense else np.ones(dim)
    m = np.asarray(inv_metric, float)
    if dense:
        return np.diag(m) if m.ndim == 1 else m
    return np.diag(m).copy() if m.ndim == 2 else m


def run_chain(logp_and_grad, u_init, cfg, chain_id=0, callback=None, inv_metric=None):
    """Run warmup plus sampling for one chain; returns a :class:`Chain`.

    ``inv_metric`` optionally seeds the inverse metric (vector or matrix);
    warmup windows refine it either way.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, chain_id]))
    u_init = np.asarray(u_init, float)
    dim = u_init.size
    dense = cfg.metric == "dense"
    q, logp, grad = _initial_point(logp_and_grad, u_init, rng, cfg.init_jitter)
    sampler = NUTS(logp_and_grad, dim, rng, cfg.max_tree_depth, cfg.max_delta_h)
    sampler.set_metric(_starting_metric(inv_metric, dim, dense))
    sampler.step_size = cfg.init_step_size
    sampler.find_reasonable_step_size(q, logp, grad)
    da = DualAveraging(sampler.step_size, cfg.target_accept)
    windows = WindowedVariance(cfg.warmup, dense=dense)
    state = _State(q, None, logp, grad)
    warm_div = 0
    for i in range(cfg.warmup):
        new, info = sampler.transition(state.q, state.logp, state.grad)
        state = new
        warm_div += info["divergent"]
        sampler.step_size = da.update(info["accept_stat"])
        metric = windows.add(state.q)
        if metric is not None:
            sampler.set_metric(metric)
            sampler.find_reasonable_step_size(state.q, state.logp, state.grad)
            da.restart(sampler.step_size)
        if callback is not None:
            callback(chain_id, i, True, info)
    if cfg.warmup > 0:
        if warm_div == cfg.warmup:
            raise SamplerError("every warmup transition diverged",
                               {"step_size": sampler.step_size, "warmup": cfg.warmup})
        sampler.step_size = da.final()
    n = cfg.samples
    draws = np.empty((n, dim))
    out = {k: np.empty(n) for k in ("log_prob", "accept_stat")}
    depth = np.empty(n, dtype=int)
    nlf = np.empty(n, dtype=int)
    div = np.zeros(n, dtype=bool)
    for i in range(n):
        new, info = sampler.transition(state.q, state.logp, state.grad)
        state = new
        draws[i] = state.q
        out["log_prob"][i] = state.logp
        out["accept_stat"][i] = info["accept_stat"]
        depth[i] = info["depth"]
        nlf[i] = info["n_leapfrog"]
        div[i] = info["divergent"]
        if callback is not None:
            callback(chain_id, i, False, info)
    log.info("chain %d: step size %.3g, %d divergences, mean depth %.2f",
             chain_id, sampler.step_size, int(div.sum()), depth.mean())
    return Chain(draws, out["log_prob"], np.full(n, sampler.step_size), depth, nlf, div,
                 out["accept_stat"], sampler.inv_metric.copy(), warmup_divergences=int(warm_div))


def nuts_sample(posterior, cfg, u_init=None, callback=None, n_jobs=1, inv_metric=None):
    """Sample ``cfg.chains`` chains; each chain owns a PRNG seeded by (seed, chain).

    ``u_init`` defaults to the prior-median point of ``posterior.space``.
    """
    if u_init is None:
        u_init = posterior.space.initial_point()
    space = posterior.space

    def finish(chain):
        chain.names = list(space.names)
        chain.constrained_names = list(space.constrained_names)
        chain.constrained = space.transform_many(chain.draws)
        return chain

    if n_jobs > 1 and cfg.chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            futs = [ex.submit(run_chain, posterior, u_init, cfg, c, None, inv_metric)
                    for c in range(cfg.chains)]
            chains = [f.result() for f in futs]
    else:
        chains = [run_chain(posterior, u_init, cfg, c, callback, inv_metric)
                  for c in range(cfg.chains)]
    return [finish(c) for c in chains]
