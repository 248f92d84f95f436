"""ODE right-hand sides: polynomial dictionaries and the built-in known-form systems.

All numerical work happens in ``numba`` kernels that take an integer model
kind, a flat parameter array and an integer exponent table, so the same
functions serve the Python API below and the compiled integrators in
:mod:`gpnode.integrate`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

KIND_DICTIONARY = 0
KIND_LOTKA_VOLTERRA = 1
KIND_GLYCOLYSIS = 2

LV_PARAM_NAMES = ("alpha", "beta", "gamma", "delta")
GLYCOLYSIS_PARAM_NAMES = (
    "J0", "k1", "k2", "k3", "k4", "k5", "k6", "k", "kappa", "q", "K_I", "phi", "N", "A",
)
GLYCOLYSIS_STATE_NAMES = ("S1", "S2", "S3", "S4", "N2", "A3", "S4ex")


class DomainError(ValueError):
    """Raised when a right-hand side is evaluated outside its domain."""


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _monomials(x, expo, phi):
    K, D = expo.shape
    for k in range(K):
        v = 1.0
        for j in range(D):
            e = expo[k, j]
            for _ in range(e):
                v *= x[j]
        phi[k] = v


@njit(cache=True)
def _monomial_grad(x, expo, dphi):
    # dphi[k, j] = d phi_k / d x_j, evaluated without division so x_j = 0 is safe
    K, D = expo.shape
    for k in range(K):
        for j in range(D):
            e = expo[k, j]
            if e == 0:
                dphi[k, j] = 0.0
                continue
            v = float(e)
            for i in range(D):
                p = expo[k, i] - 1 if i == j else expo[k, i]
                for _ in range(p):
                    v *= x[i]
            dphi[k, j] = v


@njit(cache=True)
def _glyco_rates(x, p):
    S1, S2, S3, S4, N2, A3, S4ex = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    k1, k2, k3, k4, k5, k6, kk, kappa = p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    q, KI, N, A = p[9], p[10], p[12], p[13]
    ratio = A3 / KI
    if not ratio > 0.0:
        return np.full(8, np.nan), np.nan, np.nan, np.nan
    rq = math.exp(q * math.log(ratio))
    g = 1.0 + rq
    v = np.empty(8)
    v[0] = k1 * S1 * A3 / g
    v[1] = k2 * S2 * (N - N2)
    v[2] = k3 * S3 * (A - A3)
    v[3] = k4 * S4 * N2
    v[4] = k5 * A3
    v[5] = k6 * S2 * N2
    v[6] = kk * S4ex
    v[7] = kappa * (S4 - S4ex)
    return v, rq, g, math.log(ratio)


@njit(cache=True)
def _glyco_combine(v, phi, out):
    out[0] = -v[0]
    out[1] = 2.0 * v[0] - v[1] - v[5]
    out[2] = v[1] - v[2]
    out[3] = v[2] - v[3] - v[7]
    out[4] = v[1] - v[3] - v[5]
    out[5] = -2.0 * v[0] + 2.0 * v[2] - v[4]
    out[6] = phi * v[7] - v[6]


@njit(cache=True)
def rhs_kernel(kind, x, t, p, expo, out):
    """Write f(x, t; p) into ``out``."""
    if kind == KIND_DICTIONARY:
        K, D = expo.shape
        phi = np.empty(K)
        _monomials(x, expo, phi)
        for d in range(D):
            s = 0.0
            for k in range(K):
                s += p[d * K + k] * phi[k]
            out[d] = s
    elif kind == KIND_LOTKA_VOLTERRA:
        out[0] = p[0] * x[0] + p[1] * x[0] * x[1]
        out[1] = p[3] * x[0] * x[1] + p[2] * x[1]
    else:
        v, rq, g, lr = _glyco_rates(x, p)
        _glyco_combine(v, p[11], out)
        out[0] += p[0]


@njit(cache=True)
def jac_kernel(kind, x, t, p, expo, jx, jp):
    """Write df/dx into ``jx`` (D x D) and df/dp into ``jp`` (D x P_rhs)."""
    if kind == KIND_DICTIONARY:
        K, D = expo.shape
        phi = np.empty(K)
        dphi = np.empty((K, D))
        _monomials(x, expo, phi)
        _monomial_grad(x, expo, dphi)
        for d in range(D):
            for j in range(D):
                s = 0.0
                for k in range(K):
                    s += p[d * K + k] * dphi[k, j]
                jx[d, j] = s
            for c in range(D * K):
                jp[d, c] = 0.0
            for k in range(K):
                jp[d, d * K + k] = phi[k]
    elif kind == KIND_LOTKA_VOLTERRA:
        a, b, c, dd = p[0], p[1], p[2], p[3]
        jx[0, 0] = a + b * x[1]
        jx[0, 1] = b * x[0]
        jx[1, 0] = dd * x[1]
        jx[1, 1] = dd * x[0] + c
        jp[0, 0] = x[0]
        jp[0, 1] = x[0] * x[1]
        jp[0, 2] = 0.0
        jp[0, 3] = 0.0
        jp[1, 0] = 0.0
        jp[1, 1] = 0.0
        jp[1, 2] = x[1]
        jp[1, 3] = x[0] * x[1]
    else:
        _glyco_jac(x, p, jx, jp)


@njit(cache=True)
def _glyco_jac(x, p, jx, jp):
    S1, S2, S3, S4, N2, A3, S4ex = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    k1, k2, k3, k4, k5, k6, kk, kappa = p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    q, KI, phi, N, A = p[9], p[10], p[11], p[12], p[13]
    v, rq, g, lr = _glyco_rates(x, p)
    # rate derivatives: dv[r, state], dvp[r, param]
    dv = np.zeros((8, 7))
    dvp = np.zeros((8, 14))
    dv[0, 0] = k1 * A3 / g
    dv[0, 5] = k1 * S1 / g * (1.0 - q * rq / g)
    dvp[0, 1] = S1 * A3 / g
    dvp[0, 9] = -k1 * S1 * A3 / (g * g) * rq * lr
    dvp[0, 10] = k1 * S1 * A3 * q * rq / (KI * g * g)
    dv[1, 1] = k2 * (N - N2)
    dv[1, 4] = -k2 * S2
    dvp[1, 2] = S2 * (N - N2)
    dvp[1, 12] = k2 * S2
    dv[2, 2] = k3 * (A - A3)
    dv[2, 5] = -k3 * S3
    dvp[2, 3] = S3 * (A - A3)
    dvp[2, 13] = k3 * S3
    dv[3, 3] = k4 * N2
    dv[3, 4] = k4 * S4
    dvp[3, 4] = S4 * N2
    dv[4, 5] = k5
    dvp[4, 5] = A3
    dv[5, 1] = k6 * N2
    dv[5, 4] = k6 * S2
    dvp[5, 6] = S2 * N2
    dv[6, 6] = kk
    dvp[6, 7] = S4ex
    dv[7, 3] = kappa
    dv[7, 6] = -kappa
    dvp[7, 8] = S4 - S4ex
    col = np.empty(7)
    for j in range(7):
        _glyco_combine(dv[:, j], phi, col)
        for d in range(7):
            jx[d, j] = col[d]
    for j in range(14):
        _glyco_combine(dvp[:, j], phi, col)
        for d in range(7):
            jp[d, j] = col[d]
    jp[0, 0] += 1.0
    jp[6, 11] += v[7]


# ---------------------------------------------------------------------------
# Python-facing types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DictionarySpec:
    """Ordered monomial library over ``state_dim`` variables.

    ``terms`` holds one exponent tuple per feature, e.g. ``(1, 1)`` is x1*x2
    and ``(0, 0)`` the constant.
    """

    state_dim: int
    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(int(e) for e in t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        for t in terms:
            if len(t) != self.state_dim or min(t) < 0:
                raise ValueError(f"bad monomial {t} for state_dim={self.state_dim}")
        if len(set(terms)) != len(terms):
            raise ValueError("dictionary terms must be unique")

    @property
    def K(self):
        return len(self.terms)

    @property
    def exponents(self):
        return np.array(self.terms, dtype=np.int64).reshape(self.K, self.state_dim)

    def labels(self, names=None):
        names = names or [f"x{j + 1}" for j in range(self.state_dim)]
        out = []
        for t in self.terms:
            parts = []
            for n, e in zip(names, t):
                if e == 1:
                    parts.append(n)
                elif e > 1:
                    parts.append(f"{n}^{e}")
            out.append("*".join(parts) or "1")
        return out


def poly_dictionary(state_dim, degree, cross_terms=True, constant=False):
    """Build a polynomial library.

    Terms are ordered by total degree; within a degree, mixed monomials
    (lexicographic) precede pure powers.  ``cross_terms`` may be a bool or
    the maximum total degree for mixed monomials.
    """
    if cross_terms is True:
        cross_max = degree
    elif cross_terms is False:
        cross_max = 0
    else:
        cross_max = int(cross_terms)
    terms = []
    if constant:
        terms.append((0,) * state_dim)
    for n in range(1, degree + 1):
        if n <= cross_max:
            mixed = []
            for combo in itertools.combinations_with_replacement(range(state_dim), n):
                e = [0] * state_dim
                for j in combo:
                    e[j] += 1
                if max(e) < n:
                    mixed.append(tuple(e))
            terms.extend(sorted(mixed, reverse=True))
        for j in range(state_dim):
            e = [0] * state_dim
            e[j] = n
            terms.append(tuple(e))
    return DictionarySpec(state_dim, tuple(terms))


def eval_dictionary(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.state_dim,):
        raise ValueError(f"expected state of length {spec.state_dim}, got shape {x.shape}")
    phi = np.empty(spec.K)
    _monomials(x, spec.exponents, phi)
    return phi


@dataclass(frozen=True)
class DynamicsModel:
    """An ODE right-hand side plus the binding of theta_f entries.

    theta_f is laid out as ``(rhs parameters..., unknown initial conditions...)``;
    ``unknown_ic`` lists the state indices whose initial values are inferred.
    """

    kind: int
    state_dim: int
    rhs_param_names: tuple
    state_names: tuple
    dictionary: DictionarySpec | None = None
    unknown_ic: tuple = ()
    _expo: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dictionary is not None:
            expo = self.dictionary.exponents
        else:
            expo = np.zeros((1, self.state_dim), dtype=np.int64)
        object.__setattr__(self, "_expo", expo)
        object.__setattr__(self, "unknown_ic", tuple(int(i) for i in self.unknown_ic))
        if len(self.state_names) != self.state_dim:
            raise ValueError("state_names length must equal state_dim")
        for i in self.unknown_ic:
            if not 0 <= i < self.state_dim:
                raise ValueError(f"unknown initial condition index {i} out of range")

    @property
    def exponents(self):
        return self._expo

    @property
    def n_rhs_params(self):
        return len(self.rhs_param_names)

    @property
    def param_names(self):
        return tuple(self.rhs_param_names) + tuple(f"{self.state_names[i]}_0" for i in self.unknown_ic)

    @property
    def n_params(self):
        return self.n_rhs_params + len(self.unknown_ic)

    def with_unknown_ic(self, indices):
        return DynamicsModel(self.kind, self.state_dim, self.rhs_param_names, self.state_names,
                             self.dictionary, tuple(indices))

    def split(self, theta_f):
        theta_f = np.asarray(theta_f, dtype=float)
        if theta_f.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta_f.shape}")
        return theta_f[: self.n_rhs_params], theta_f[self.n_rhs_params:]

    def initial_state(self, z0, theta_f):
        """Substitute inferred initial conditions from theta_f into z0."""
        z = np.array(z0, dtype=float)
        _, ic = self.split(theta_f)
        z[list(self.unknown_ic)] = ic
        return z

    def _check(self, x, p):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ValueError(f"expected state of length {self.state_dim}")
        if self.kind == KIND_GLYCOLYSIS:
            if p[10] <= 0:
                raise DomainError("K_I must be positive")
            if x[5] / p[10] <= 0:
                raise DomainError("A3 / K_I must be positive for the inhibition power")
        return x

    def rhs(self, x, t, theta_f):
        p, _ = self.split(theta_f)
        x = self._check(x, p)
        out = np.empty(self.state_dim)
        rhs_kernel(self.kind, x, float(t), p, self._expo, out)
        if not np.all(np.isfinite(out)):
            raise DomainError("non-finite right-hand side")
        return out

    def rhs_jacobians(self, x, t, theta_f):
        """Return (df/dx, df/dtheta_f); columns for inferred ICs are zero."""
        p, _ = self.split(theta_f)
        x = self._check(x, p)
        jx = np.zeros((self.state_dim, self.state_dim))
        jp = np.zeros((self.state_dim, self.n_params))
        jac_kernel(self.kind, x, float(t), p, self._expo, jx, jp[:, : self.n_rhs_params])
        return jx, jp


def _coef_names(D, K):
    if K < 10 and D < 10:
        return tuple(f"a{d + 1}{k + 1}" for d in range(D) for k in range(K))
    return tuple(f"a{d + 1}_{k + 1}" for d in range(D) for k in range(K))


def dictionary_model(spec, state_names=None, unknown_ic=()):
    names = tuple(state_names or [f"x{j + 1}" for j in range(spec.state_dim)])
    return DynamicsModel(KIND_DICTIONARY, spec.state_dim, _coef_names(spec.state_dim, spec.K),
                         names, spec, unknown_ic)


def coefficient_matrix(model, theta_f):
    """Reshape the dictionary part of theta_f to A (D x K)."""
    if model.kind != KIND_DICTIONARY:
        raise ValueError("coefficient_matrix applies to dictionary models only")
    p, _ = model.split(theta_f)
    return p.reshape(model.state_dim, model.dictionary.K)


LV_DICT7 = DictionarySpec(2, ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (3, 0), (0, 3)))
MOCAP_DICT_A = DictionarySpec(3, ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
                                  (1, 1, 0), (1, 0, 1), (0, 1, 1)))
MOCAP_DICT_B = poly_dictionary(3, 2, cross_terms=True, constant=True)

# truth values used by the benchmarks
LV_TRUTH = {"alpha": 1.0, "beta": -0.1, "gamma": -1.5, "delta": 0.75}
LV_TRUTH_IC = (5.0, 5.0)
GLYCOLYSIS_TRUTH = {
    "J0": 2.5, "k1": 100.0, "k2": 6.0, "k3": 16.0, "k4": 100.0, "k5": 1.28, "k6": 12.0,
    "k": 1.8, "kappa": 13.0, "q": 4.0, "K_I": 0.52, "phi": 0.1, "N": 1.0, "A": 4.0,
}
GLYCOLYSIS_TRUTH_IC = (0.5, 1.9, 0.18, 0.15, 0.16, 0.1, 0.064)


def lv_dict7_truth():
    """Coefficient matrix of the Lotka-Volterra system in the 7-term library."""
    A = np.zeros((2, 7))
    A[0, 0], A[0, 2] = LV_TRUTH["alpha"], LV_TRUTH["beta"]
    A[1, 1], A[1, 2] = LV_TRUTH["gamma"], LV_TRUTH["delta"]
    return A


def model_preset(name, unknown_ic=()):
    """Look up a model by its config name."""
    if name == "lv-dict7":
        return dictionary_model(LV_DICT7, unknown_ic=unknown_ic)
    if name == "lv-known":
        return DynamicsModel(KIND_LOTKA_VOLTERRA, 2, LV_PARAM_NAMES, ("x1", "x2"), None, unknown_ic)
    if name == "glycolysis":
        return DynamicsModel(KIND_GLYCOLYSIS, 7, GLYCOLYSIS_PARAM_NAMES, GLYCOLYSIS_STATE_NAMES,
                             None, unknown_ic)
    if name == "mocap-dict-a":
        return dictionary_model(MOCAP_DICT_A, unknown_ic=unknown_ic)
    if name == "mocap-dict-b":
        return dictionary_model(MOCAP_DICT_B, unknown_ic=unknown_ic)
    if name.startswith("poly(") and name.endswith(")"):
        return dictionary_model(parse_poly(name), unknown_ic=unknown_ic)
    raise KeyError(f"unknown model preset {name!r}")


def parse_poly(text):
    """Parse ``poly(state_dim, degree, cross_terms, constant)``."""
    args = [a.strip().lower() for a in text[len("poly("):-1].split(",")]
    if len(args) < 2:
        raise ValueError("poly() needs at least state_dim and degree")

    def _val(s):
        if s in ("true", "false"):
            return s == "true"
        return int(s)

    state_dim, degree = int(args[0]), int(args[1])
    cross = _val(args[2]) if len(args) > 2 else True
    constant = _val(args[3]) if len(args) > 3 else False
    return poly_dictionary(state_dim, degree, cross, bool(constant))
