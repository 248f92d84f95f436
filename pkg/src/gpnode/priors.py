"""Prior families, the Finnish horseshoe, and the unconstrained parameter space.

Every family works on an unconstrained coordinate ``u`` and returns the log
density of the constrained value *including* the change-of-variables term,
together with its derivative in ``u``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
LOGIT_CLAMP = 35.0


class PriorConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lognormal:
    mu: float = 0.0
    sigma: float = 1.0

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        return np.log(x)

    def logp(self, u):
        # density of log x is Normal(mu, sigma): the Jacobian cancels the 1/x
        z = (u - self.mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - LOG_SQRT_2PI, -z / self.sigma

    def median_u(self):
        return self.mu


@dataclass(frozen=True)
class Gamma:
    """Shape ``alpha``, rate ``beta``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise PriorConfigError("Gamma needs alpha, beta > 0")

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        return np.log(x)

    def logp(self, u):
        x = np.exp(u)
        lp = self.alpha * np.log(self.beta) - gammaln(self.alpha) + self.alpha * u - self.beta * x
        return lp, self.alpha - self.beta * x

    def median_u(self):
        return float(np.log(stats.gamma.ppf(0.5, self.alpha, scale=1.0 / self.beta)))


@dataclass(frozen=True)
class HalfCauchy:
    scale: float = 1.0

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        return np.log(x)

    def logp(self, u):
        r2 = np.exp(2.0 * (u - np.log(self.scale)))
        lp = np.log(2.0 / np.pi) - np.log(self.scale) - np.log1p(r2) + u
        return lp, 1.0 - 2.0 * r2 / (1.0 + r2)

    def median_u(self):
        return float(np.log(self.scale))


@dataclass(frozen=True)
class InvGamma:
    """Shape ``a``, scale ``b``: density b^a / Gamma(a) x^(-a-1) exp(-b/x)."""

    a: float
    b: float

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        return np.log(x)

    def logp(self, u):
        binv = self.b * np.exp(-u)
        lp = self.a * np.log(self.b) - gammaln(self.a) - self.a * u - binv
        return lp, -self.a + binv

    def median_u(self):
        return float(np.log(stats.invgamma.ppf(0.5, self.a, scale=self.b)))


@dataclass(frozen=True)
class Uniform:
    """Uniform on (a, b) through a scaled logit."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise PriorConfigError(f"Uniform needs a < b, got ({self.a}, {self.b})")

    def forward(self, u):
        return self.a + (self.b - self.a) * expit(u)

    def inverse(self, x):
        x = np.asarray(x, float)
        if np.any(x < self.a) or np.any(x > self.b):
            raise ValueError(f"value outside uniform support [{self.a}, {self.b}]")
        s = (x - self.a) / (self.b - self.a)
        with np.errstate(divide="ignore"):
            u = np.log(s) - np.log1p(-s)
        return np.clip(u, -LOGIT_CLAMP, LOGIT_CLAMP)

    def logp(self, u):
        # log(1/(b-a)) + log|dx/du| = log s + log(1 - s)
        lp = -np.logaddexp(0.0, -u) - np.logaddexp(0.0, u)
        return lp, 1.0 - 2.0 * expit(u)

    def median_u(self):
        return 0.0


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    sigma: float = 1.0

    def forward(self, u):
        return u

    def inverse(self, x):
        return np.asarray(x, float)

    def logp(self, u):
        z = (u - self.mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - LOG_SQRT_2PI, -z / self.sigma

    def median_u(self):
        return self.mu


FH_TAG = "finnish_horseshoe"

_FAMILY_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")
_FAMILIES = {
    "lognormal": Lognormal, "gamma": Gamma, "uniform": Uniform,
    "halfcauchy": HalfCauchy, "half_cauchy": HalfCauchy, "invgamma": InvGamma, "normal": Normal,
}


def parse_prior(text):
    """Parse ``uniform(1, 10)``-style text; returns a family or ``FH_TAG``."""
    m = _FAMILY_RE.match(text.strip().lower())
    if not m:
        raise PriorConfigError(f"cannot parse prior {text!r}")
    name, args = m.group(1), m.group(2)
    if name in (FH_TAG, "fh"):
        return FH_TAG
    if name not in _FAMILIES:
        raise PriorConfigError(f"unknown prior family {name!r}")
    vals = [float(a) for a in args.split(",")] if args and args.strip() else []
    return _FAMILIES[name](*vals)


def gp_default_priors():
    """Unified priors for kernel amplitude, lengthscale and noise variance."""
    return {"w": Lognormal(0.0, 1.0), "l": Gamma(1.0, 0.5), "eps": Lognormal(0.0, 1.0)}


# ---------------------------------------------------------------------------
# Finnish horseshoe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FHConfig:
    M: int
    n_obs: int
    m0: float | None = None
    nu: float = 1.0
    s: float = 1.0
    centered: bool = False

    def __post_init__(self):
        if self.m0 is None:
            object.__setattr__(self, "m0", float(self.M - 1))
        if not 0 < self.m0 < self.M:
            raise PriorConfigError("m0 must lie strictly between 0 and M")
        if self.n_obs < 1:
            raise PriorConfigError("Finnish horseshoe needs at least one observation")

    @property
    def tau0(self):
        return self.m0 / (self.M - self.m0) / np.sqrt(self.n_obs)


@dataclass
class FHLatents:
    tau: float
    c2: float
    lam: np.ndarray
    theta: np.ndarray

    @property
    def lam_tilde(self):
        return lambda_tilde(self.lam, self.tau, self.c2)


def lambda_tilde(lam, tau, c2):
    """Regularized local scale c*lam / sqrt(c^2 + tau^2 lam^2)."""
    lam = np.asarray(lam, float)
    return np.sqrt(c2) * lam / np.sqrt(c2 + tau**2 * lam**2)


def fh_log_prior(latents, cfg):
    """Centered log-density on (log tau, log c^2, log lambda, theta)."""
    tau, c2 = latents.tau, latents.c2
    lam = np.asarray(latents.lam, float)
    theta = np.asarray(latents.theta, float)
    if tau <= 0 or c2 <= 0 or np.any(lam <= 0):
        raise ValueError("horseshoe latents must be positive")
    lp = HalfCauchy(cfg.tau0).logp(np.log(tau))[0]
    lp += InvGamma(cfg.nu / 2.0, cfg.nu * cfg.s**2 / 2.0).logp(np.log(c2))[0]
    lp += np.sum(HalfCauchy(1.0).logp(np.log(lam))[0])
    sd = tau * lambda_tilde(lam, tau, c2)
    lp += np.sum(-0.5 * (theta / sd) ** 2 - np.log(sd) - LOG_SQRT_2PI)
    return float(lp)


# ---------------------------------------------------------------------------
# parameter space
# ---------------------------------------------------------------------------


@dataclass
class Unpacked:
    theta_f: np.ndarray
    log_w: np.ndarray
    log_l: np.ndarray
    log_eps: np.ndarray
    fh: FHLatents | None


class ParamSpace:
    """Unconstrained coordinates for theta = (theta_f, theta_g).

    Layout: theta_f entries with scalar priors, then the horseshoe block
    ``(log tau, log c2, log lambda_1..M, eta_1..M)`` (non-centered:
    theta_m = tau * lambda_tilde_m * eta_m), then ``log w, log l, log eps``
    per observed variable (single kernel component).  With
    ``FHConfig.centered`` the last horseshoe entries are theta_m itself,
    which suits likelihoods that pin the coefficients tightly.
    """

    def __init__(self, theta_f_names, gp_vars, priors, fh_config=None):
        self.theta_f_names = tuple(theta_f_names)
        self.gp_vars = tuple(gp_vars)
        priors = dict(priors)
        fh_names = tuple(n for n in self.theta_f_names if priors.get(n) == FH_TAG)
        self.fh_names = fh_names
        if fh_names and fh_config is None:
            raise PriorConfigError("horseshoe prior requested without an FHConfig")
        if fh_names and fh_config.M != len(fh_names):
            raise PriorConfigError("FHConfig.M must equal the number of horseshoe parameters")
        self.fh_config = fh_config if fh_names else None

        self.names = []
        self.scalar = []  # (u index, theta_f index, family)
        for i, n in enumerate(self.theta_f_names):
            fam = priors.get(n)
            if fam is None:
                raise PriorConfigError(f"no prior declared for parameter {n!r}")
            if fam == FH_TAG:
                continue
            self.scalar.append((len(self.names), i, fam))
            self.names.append(n if isinstance(fam, Normal) else f"u_{n}")
        M = len(fh_names)
        self.fh_theta_idx = np.array([self.theta_f_names.index(n) for n in fh_names], dtype=int)
        self.i_tau = len(self.names)
        if M:
            self.names += ["log_tau", "log_c2"]
            self.names += [f"log_lambda_{n}" for n in fh_names]
            self.names += [n if fh_config.centered else f"eta_{n}" for n in fh_names]
        self.sl_lam = slice(self.i_tau + 2, self.i_tau + 2 + M)
        self.sl_eta = slice(self.i_tau + 2 + M, self.i_tau + 2 + 2 * M)
        self.gp_priors = {}
        start = len(self.names)
        for v in self.gp_vars:
            for h in ("w", "l", "eps"):
                key = f"{h}_{v}"
                fam = priors.get(key, gp_default_priors()[h])
                if isinstance(fam, (Uniform, Normal)) or fam == FH_TAG:
                    raise PriorConfigError(f"{key} needs a positive-support prior")
                self.gp_priors[key] = fam
                self.names.append(f"log_{key}")
        self.gp_start = start
        self.dim = len(self.names)
        extra = set(priors) - set(self.theta_f_names) - set(self.gp_priors)
        if extra:
            raise PriorConfigError(f"priors declared for unknown parameters: {sorted(extra)}")

    # --- transforms -----------------------------------------------------

    @property
    def constrained_names(self):
        out = list(self.theta_f_names)
        if self.fh_names:
            out += ["tau", "c2"] + [f"lambda_{n}" for n in self.fh_names]
        for v in self.gp_vars:
            out += [f"w_{v}", f"l_{v}", f"eps_{v}"]
        return out

    def _gp_slices(self, u):
        g = u[self.gp_start:].reshape(-1, 3) if self.gp_vars else np.zeros((0, 3))
        return g[:, 0], g[:, 1], g[:, 2]

    def unpack(self, u):
        u = np.asarray(u, float)
        theta = np.zeros(len(self.theta_f_names))
        for iu, it, fam in self.scalar:
            theta[it] = fam.forward(u[iu])
        fh = None
        if self.fh_names:
            tau, c2 = np.exp(u[self.i_tau]), np.exp(u[self.i_tau + 1])
            lam = np.exp(u[self.sl_lam])
            if self.fh_config.centered:
                coef = u[self.sl_eta].copy()
            else:
                coef = tau * lambda_tilde(lam, tau, c2) * u[self.sl_eta]
            theta[self.fh_theta_idx] = coef
            fh = FHLatents(tau, c2, lam, coef)
        lw, ll, le = self._gp_slices(u)
        return Unpacked(theta, lw.copy(), ll.copy(), le.copy(), fh)

    def transform(self, u):
        """Unconstrained vector -> constrained vector ordered as ``constrained_names``."""
        p = self.unpack(u)
        parts = [p.theta_f]
        if p.fh is not None:
            parts += [[p.fh.tau, p.fh.c2], p.fh.lam]
        parts.append(np.exp(np.stack([p.log_w, p.log_l, p.log_eps], axis=1)).ravel())
        return np.concatenate([np.asarray(x, float).ravel() for x in parts])

    def transform_many(self, U):
        return np.array([self.transform(u) for u in np.atleast_2d(U)])

    def inverse_transform(self, x):
        x = np.asarray(x, float)
        if x.shape != (len(self.constrained_names),):
            raise ValueError("constrained vector has the wrong length")
        u = np.zeros(self.dim)
        for iu, it, fam in self.scalar:
            u[iu] = fam.inverse(x[it])
        pos = len(self.theta_f_names)
        if self.fh_names:
            M = len(self.fh_names)
            tau, c2 = x[pos], x[pos + 1]
            lam = x[pos + 2: pos + 2 + M]
            u[self.i_tau], u[self.i_tau + 1] = np.log(tau), np.log(c2)
            u[self.sl_lam] = np.log(lam)
            if self.fh_config.centered:
                u[self.sl_eta] = x[self.fh_theta_idx]
            else:
                u[self.sl_eta] = x[self.fh_theta_idx] / (tau * lambda_tilde(lam, tau, c2))
            pos += 2 + M
        if np.any(x[pos:] <= 0):
            raise ValueError("kernel hyperparameters must be positive")
        u[self.gp_start:] = np.log(x[pos:])
        return u

    def initial_point(self):
        """Prior medians in unconstrained space (eta at 0)."""
        u = np.zeros(self.dim)
        for iu, _, fam in self.scalar:
            u[iu] = fam.median_u()
        if self.fh_names:
            cfg = self.fh_config
            u[self.i_tau] = HalfCauchy(cfg.tau0).median_u()
            u[self.i_tau + 1] = InvGamma(cfg.nu / 2, cfg.nu * cfg.s**2 / 2).median_u()
            u[self.sl_lam] = 0.0
            u[self.sl_eta] = 0.0
        for k, v in enumerate(self.gp_vars):
            for j, h in enumerate(("w", "l", "eps")):
                u[self.gp_start + 3 * k + j] = self.gp_priors[f"{h}_{v}"].median_u()
        return u

    # --- densities ------------------------------------------------------

    def log_prior_and_grad(self, u):
        u = np.asarray(u, float)
        lp = 0.0
        g = np.zeros(self.dim)
        for iu, _, fam in self.scalar:
            a, b = fam.logp(u[iu])
            lp += a
            g[iu] = b
        if self.fh_names:
            cfg = self.fh_config
            for idx, fam in ((self.i_tau, HalfCauchy(cfg.tau0)),
                             (self.i_tau + 1, InvGamma(cfg.nu / 2, cfg.nu * cfg.s**2 / 2))):
                a, b = fam.logp(u[idx])
                lp += a
                g[idx] = b
            a, b = HalfCauchy(1.0).logp(u[self.sl_lam])
            lp += np.sum(a)
            g[self.sl_lam] = b
            eta = u[self.sl_eta]
            if cfg.centered:
                tau, c2 = np.exp(u[self.i_tau]), np.exp(u[self.i_tau + 1])
                lam = np.exp(u[self.sl_lam])
                sd = tau * lambda_tilde(lam, tau, c2)
                rho = c2 / (c2 + tau**2 * lam**2)
                z = eta / sd
                lp += np.sum(-0.5 * z**2 - np.log(sd)) - eta.size * LOG_SQRT_2PI
                g[self.sl_eta] = -z / sd
                gs = z**2 - 1.0  # d/d log sd
                g[self.sl_lam] += gs * rho
                g[self.i_tau] += np.sum(gs * rho)
                g[self.i_tau + 1] += np.sum(gs * 0.5 * (1.0 - rho))
            else:
                lp += np.sum(-0.5 * eta**2) - eta.size * LOG_SQRT_2PI
                g[self.sl_eta] = -eta
        for k, v in enumerate(self.gp_vars):
            for j, h in enumerate(("w", "l", "eps")):
                idx = self.gp_start + 3 * k + j
                a, b = self.gp_priors[f"{h}_{v}"].logp(u[idx])
                lp += a
                g[idx] = b
        return float(lp), g

    def log_prior(self, u):
        return self.log_prior_and_grad(u)[0]

    def pullback(self, u, g_theta, g_logw, g_logl, g_logeps):
        """Chain rule from d/dtheta_f and d/dlog(hypers) to d/du."""
        u = np.asarray(u, float)
        out = np.zeros(self.dim)
        for iu, it, fam in self.scalar:
            if isinstance(fam, Uniform):
                s = expit(u[iu])
                out[iu] = g_theta[it] * (fam.b - fam.a) * s * (1.0 - s)
            elif isinstance(fam, Normal):
                out[iu] = g_theta[it]
            else:
                out[iu] = g_theta[it] * np.exp(u[iu])
        if self.fh_names and self.fh_config.centered:
            out[self.sl_eta] = np.asarray(g_theta, float)[self.fh_theta_idx]
        elif self.fh_names:
            tau, c2 = np.exp(u[self.i_tau]), np.exp(u[self.i_tau + 1])
            lam = np.exp(u[self.sl_lam])
            eta = u[self.sl_eta]
            sd = tau * lambda_tilde(lam, tau, c2)
            rho = c2 / (c2 + tau**2 * lam**2)
            gt = np.asarray(g_theta, float)[self.fh_theta_idx]
            gc = gt * sd * eta  # d/d log sd contributions
            out[self.sl_eta] = gt * sd
            out[self.sl_lam] = gc * rho
            out[self.i_tau] = np.sum(gc * rho)
            out[self.i_tau + 1] = np.sum(gc * 0.5 * (1.0 - rho))
        if self.gp_vars:
            out[self.gp_start:] = np.stack([g_logw, g_logl, g_logeps], axis=1).ravel()
        return out
