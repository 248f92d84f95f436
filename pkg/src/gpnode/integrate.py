"""ODE solves on arbitrary output grids, with three gradient paths.

* :func:`solve` - plain states (fixed-step RK4 or adaptive Dormand-Prince).
* :func:`solve_with_sensitivities` - forward sensitivities obtained by
  integrating the variational system with the *same* RK stages, which is the
  exact derivative of the discrete scheme (what HMC needs).
* :func:`adjoint_gradient` - continuous adjoint, kept as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import KIND_DICTIONARY, _monomial_grad, _monomials, jac_kernel, rhs_kernel


class SolveFailed(RuntimeError):
    """Non-finite state or step budget exhausted."""

    def __init__(self, message, last_valid_time):
        super().__init__(f"{message} (last valid time {last_valid_time:g})")
        self.last_valid_time = last_valid_time


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "rk4"
    h: float | None = None
    rtol: float = 1e-6
    atol: float = 1e-9
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in ("rk4", "dopri5"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.h is not None and not self.h > 0:
            raise ValueError("h must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class SolveResult:
    grid: np.ndarray
    states: np.ndarray
    sensitivities: np.ndarray | None = None


def default_step(grids, time_scale=None):
    """Internal RK4 step: one tenth of the smallest observation spacing.

    Capped at 0.01 normalized time units when ``time_scale`` is given.
    """
    gaps = [np.diff(np.asarray(g, float)) for g in grids if len(g) > 1]
    gaps = np.concatenate(gaps) if gaps else np.array([])
    gaps = gaps[gaps > 0]
    h = gaps.min() / 10.0 if gaps.size else 0.01
    if time_scale is not None:
        h = min(h, 0.01 * time_scale)
    return float(h)


def _check_grid(t_out):
    t = np.asarray(t_out, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_out must be a non-empty 1-d grid")
    if np.any(np.diff(t) < 0):
        raise ValueError("t_out must be sorted ascending")
    return t


def _initial_sensitivity(model):
    S0 = np.zeros((model.state_dim, model.n_params))
    for i, d in enumerate(model.unknown_ic):
        S0[d, model.n_rhs_params + i] = 1.0
    return S0


# ---------------------------------------------------------------------------
# fixed-step RK4 (compiled)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rk4_kernel(kind, p, expo, z0, S0, t_out, h, with_sens, max_steps):
    D = z0.size
    P = S0.shape[1]
    Pr = p.size
    n = t_out.size
    Z = np.empty((n, D))
    S = np.empty((n, D, P)) if with_sens else np.empty((1, D, P))
    z = z0.copy()
    s = S0.copy()
    Z[0] = z
    S[0] = s
    kz = np.empty((4, D))
    ks = np.empty((4, D, P))
    zt = np.empty(D)
    st = np.empty((D, P))
    jx = np.empty((D, D))
    jp = np.zeros((D, Pr))
    dictionary = kind == KIND_DICTIONARY
    K = expo.shape[0]
    phi = np.empty(K)
    dphi = np.empty((K, D))
    steps = 0
    for i in range(1, n):
        gap = t_out[i] - t_out[i - 1]
        m = max(1, int(math.ceil(gap / h - 1e-9)))
        if gap == 0.0:
            m = 0
        dt = gap / m if m > 0 else 0.0
        for step in range(m):
            t = t_out[i - 1] + step * dt
            for stage in range(4):
                if stage == 0:
                    c = 0.0
                    for a in range(D):
                        zt[a] = z[a]
                    if with_sens:
                        st[:, :] = s
                else:
                    c = 0.5 * dt if stage < 3 else dt
                    for a in range(D):
                        zt[a] = z[a] + c * kz[stage - 1, a]
                    if with_sens:
                        for a in range(D):
                            for b in range(P):
                                st[a, b] = s[a, b] + c * ks[stage - 1, a, b]
                if dictionary:
                    # shared features; df/dp is block-sparse (row d holds phi at d*K..)
                    _monomials(zt, expo, phi)
                    for a in range(D):
                        acc = 0.0
                        for k in range(K):
                            acc += p[a * K + k] * phi[k]
                        kz[stage, a] = acc
                    if with_sens:
                        _monomial_grad(zt, expo, dphi)
                        for a in range(D):
                            for e in range(D):
                                acc = 0.0
                                for k in range(K):
                                    acc += p[a * K + k] * dphi[k, e]
                                jx[a, e] = acc
                        for a in range(D):
                            for b in range(P):
                                acc = 0.0
                                for e in range(D):
                                    acc += jx[a, e] * st[e, b]
                                ks[stage, a, b] = acc
                            for k in range(K):
                                ks[stage, a, a * K + k] += phi[k]
                    continue
                rhs_kernel(kind, zt, t + c, p, expo, kz[stage])
                if with_sens:
                    jac_kernel(kind, zt, t + c, p, expo, jx, jp)
                    for a in range(D):
                        for b in range(P):
                            acc = 0.0
                            for e in range(D):
                                acc += jx[a, e] * st[e, b]
                            if b < Pr:
                                acc += jp[a, b]
                            ks[stage, a, b] = acc
            for a in range(D):
                z[a] += dt / 6.0 * (kz[0, a] + 2.0 * kz[1, a] + 2.0 * kz[2, a] + kz[3, a])
            if with_sens:
                for a in range(D):
                    for b in range(P):
                        s[a, b] += dt / 6.0 * (ks[0, a, b] + 2.0 * ks[1, a, b]
                                               + 2.0 * ks[2, a, b] + ks[3, a, b])
            ok = True
            for a in range(D):
                if not math.isfinite(z[a]):
                    ok = False
            if not ok:
                return Z, S, i - 1, 1
            steps += 1
            if steps > max_steps:
                return Z, S, i - 1, 2
        Z[i] = z
        if with_sens:
            for a in range(D):
                for b in range(P):
                    if not math.isfinite(s[a, b]):
                        return Z, S, i - 1, 1
            S[i] = s
    return Z, S, n - 1, 0


def _step_size(cfg, t):
    if cfg.h is not None:
        return cfg.h
    if t.size > 1 and t[-1] > t[0]:
        return default_step([t])
    return 0.01


def _run_rk4(model, z0, t, theta_f, cfg, with_sens):
    p, _ = model.split(theta_f)
    z = model.initial_state(z0, theta_f)
    S0 = _initial_sensitivity(model)
    Z, S, last, status = _rk4_kernel(model.kind, np.ascontiguousarray(p), model.exponents, z, S0,
                                     t, _step_size(cfg, t), with_sens, cfg.max_steps)
    if status == 1:
        raise SolveFailed("non-finite state", float(t[last]))
    if status == 2:
        raise SolveFailed("step budget exhausted", float(t[last]))
    return SolveResult(t, Z, S if with_sens else None)


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                          -92097 / 339200, 187 / 2100, 1 / 40])


def _dopri5(fun, y0, t, cfg, n_err):
    """Integrate y' = fun(t, y) to every time in ``t``; error control on y[:n_err]."""
    y = np.array(y0, dtype=float)
    out = np.empty((t.size, y.size))
    out[0] = y
    tc = t[0]
    span = t[-1] - t[0]
    h = 0.01 * span if span > 0 else 0.0
    steps = 0
    f0 = fun(tc, y)
    for i in range(1, t.size):
        target = t[i]
        while tc < target:
            h = min(h, target - tc)
            k = [f0]
            for s in range(1, 7):
                ys = y + h * sum(a * kk for a, kk in zip(_DP_A[s], k))
                k.append(fun(tc + _DP_C[s] * h, ys))
            y_new = y + h * sum(b * kk for b, kk in zip(_DP_B, k) if b != 0.0)
            err_vec = h * sum(e * kk for e, kk in zip(_DP_E, k) if e != 0.0)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y[:n_err]), np.abs(y_new[:n_err]))
            with np.errstate(invalid="ignore", over="ignore"):
                err = np.sqrt(np.mean((err_vec[:n_err] / scale) ** 2))
            steps += 1
            if steps > cfg.max_steps:
                raise SolveFailed("step budget exhausted", float(tc))
            if not np.isfinite(err):
                h *= 0.2
                if h < 1e-14 * max(1.0, abs(tc)):
                    raise SolveFailed("non-finite state", float(tc))
                continue
            if err <= 1.0:
                landed = (target - tc) <= h
                tc = target if landed else tc + h
                y = y_new
                f0 = k[6]
            factor = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, factor))
            if h < 1e-14 * max(1.0, abs(tc)):
                raise SolveFailed("step size underflow", float(tc))
        out[i] = y
    if not np.all(np.isfinite(out)):
        raise SolveFailed("non-finite state", float(tc))
    return out


def _run_dopri5(model, z0, t, theta_f, cfg, with_sens):
    p, _ = model.split(theta_f)
    p = np.ascontiguousarray(p)
    z = model.initial_state(z0, theta_f)
    D, P, Pr = model.state_dim, model.n_params, model.n_rhs_params
    expo = model.exponents

    if not with_sens:
        def fun(tt, y):
            out = np.empty(D)
            rhs_kernel(model.kind, y, tt, p, expo, out)
            return out

        return SolveResult(t, _dopri5(fun, z, t, cfg, D))

    jx = np.empty((D, D))
    jp = np.zeros((D, Pr))

    def fun_aug(tt, y):
        x = y[:D]
        s = y[D:].reshape(D, P)
        out = np.empty_like(y)
        rhs_kernel(model.kind, x, tt, p, expo, out[:D])
        jac_kernel(model.kind, x, tt, p, expo, jx, jp)
        ds = jx @ s
        ds[:, :Pr] += jp
        out[D:] = ds.ravel()
        return out

    y0 = np.concatenate([z, _initial_sensitivity(model).ravel()])
    Y = _dopri5(fun_aug, y0, t, cfg, D)
    return SolveResult(t, Y[:, :D], Y[:, D:].reshape(t.size, D, P))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def solve(model, z0, t_out, theta_f, cfg=SolverConfig()):
    """States at exactly the requested output times."""
    t = _check_grid(t_out)
    if cfg.scheme == "rk4":
        return _run_rk4(model, z0, t, theta_f, cfg, False)
    return _run_dopri5(model, z0, t, theta_f, cfg, False)


def solve_with_sensitivities(model, z0, t_out, theta_f, cfg=SolverConfig()):
    """States plus dz/dtheta_f with shape (len(t_out), D, P)."""
    t = _check_grid(t_out)
    if cfg.scheme == "rk4":
        return _run_rk4(model, z0, t, theta_f, cfg, True)
    return _run_dopri5(model, z0, t, theta_f, cfg, True)


def adjoint_gradient(model, z0, t_out, theta_f, cfg, cotangents):
    """dL/dtheta_f by backward integration of the adjoint state.

    ``cotangents[i]`` is dL/dz(t_out[i]).  The adjoint a(t) is integrated
    backwards with RK4, picking up a jump at every output time; the parameter
    gradient accumulates a(t)^T df/dtheta along the way.  Forward states at
    RK4 half-steps come from a forward solve on a grid twice as fine.
    """
    t = _check_grid(t_out)
    cot = np.asarray(cotangents, dtype=float)
    D, P, Pr = model.state_dim, model.n_params, model.n_rhs_params
    if cot.shape != (t.size, D):
        raise ValueError(f"cotangents must have shape {(t.size, D)}")
    h = _step_size(cfg, t)

    # forward pass on the half-step grid
    fine = [t[0]]
    sub_counts = []
    for i in range(1, t.size):
        gap = t[i] - t[i - 1]
        m = 0 if gap == 0 else max(1, int(math.ceil(gap / h - 1e-9)))
        sub_counts.append(m)
        for j in range(1, 2 * m + 1):
            fine.append(t[i - 1] + j * gap / (2 * m))
    fine = np.array(fine)
    half_cfg = SolverConfig("rk4", h / 2.0, cfg.rtol, cfg.atol, 2 * cfg.max_steps + 2)
    X = _run_rk4(model, z0, fine, theta_f, half_cfg, False).states

    p, _ = model.split(theta_f)
    p = np.ascontiguousarray(p)
    expo = model.exponents
    jx = np.empty((D, D))
    jp = np.zeros((D, Pr))

    def F(x, tt, a):
        jac_kernel(model.kind, x, tt, p, expo, jx, jp)
        return jx.T @ a, jp.T @ a

    a = np.zeros(D)
    g = np.zeros(Pr)
    pos = fine.size - 1
    for i in range(t.size - 1, 0, -1):
        a = a + cot[i]
        m = sub_counts[i - 1]
        dt = (t[i] - t[i - 1]) / m if m else 0.0
        for j in range(m):
            tt = t[i] - j * dt
            x0, xm, x1 = X[pos], X[pos - 1], X[pos - 2]
            ka1, kg1 = F(x0, tt, a)
            ka2, kg2 = F(xm, tt - dt / 2, a + dt / 2 * ka1)
            ka3, kg3 = F(xm, tt - dt / 2, a + dt / 2 * ka2)
            ka4, kg4 = F(x1, tt - dt, a + dt * ka3)
            a = a + dt / 6 * (ka1 + 2 * ka2 + 2 * ka3 + ka4)
            g = g + dt / 6 * (kg1 + 2 * kg2 + 2 * kg3 + kg4)
            pos -= 2
    a = a + cot[0]
    grad = np.zeros(P)
    grad[:Pr] = g
    grad += a @ _initial_sensitivity(model)
    return grad
