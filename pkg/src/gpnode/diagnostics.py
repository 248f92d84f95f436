"""Convergence diagnostics and posterior summaries for MCMC draws.

Geweke z-scores follow the thin-to-1000 protocol with Bartlett-windowed
spectral variance estimates, R-hat is the split-chain variant (classic on
request), and autocorrelations use the biased 1/n estimator.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

GEWEKE_FIRST = 0.1
GEWEKE_LAST = 0.5
GEWEKE_INTERVALS = 20
GEWEKE_THIN_TO = 1000


class DiagnosticsError(ValueError):
    pass


def thin_random(x, target=GEWEKE_THIN_TO, seed=0):
    """Keep one uniformly chosen draw per block of ``len(x) // target`` draws.

    Series no longer than ``target`` are returned unchanged.
    """
    x = np.asarray(x, float)
    block = len(x) // target
    if block <= 1:
        return x
    rng = np.random.default_rng(seed)
    starts = np.arange(target) * block
    return x[starts + rng.integers(0, block, size=target)]


def spectral_variance(x, window=0.05):
    """Spectral density at frequency zero, Bartlett lag window of ``window * n`` lags."""
    x = np.asarray(x, float)
    n = x.size
    if n < 2:
        return 0.0
    L = max(1, int(window * n))
    L = min(L, n - 1)
    acov = _autocov(x, L)
    k = np.arange(1, L + 1)
    return float(acov[0] + 2.0 * np.sum((1.0 - k / (L + 1.0)) * acov[1:]))


def _autocov(x, max_lag):
    x = np.asarray(x, float)
    n = x.size
    d = x - x.mean()
    # FFT of the zero-padded series gives all biased autocovariances at once
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(d, m)
    ac = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1] / n
    return ac


def _geweke_pair(a, b, window):
    va = max(spectral_variance(a, window), 0.0) / a.size
    vb = max(spectral_variance(b, window), 0.0) / b.size
    diff = a.mean() - b.mean()
    denom = np.sqrt(va + vb)
    if denom == 0.0 or not np.isfinite(denom):
        return 0.0, True
    return float(diff / denom), False


@dataclass
class GewekeResult:
    z: float
    degenerate: bool
    profile: np.ndarray  # z of successive early segments against the last half


def geweke(draws, first=GEWEKE_FIRST, last=GEWEKE_LAST, intervals=GEWEKE_INTERVALS,
           thin_to=GEWEKE_THIN_TO, seed=0, window=0.05):
    """Geweke comparison of an early segment against the last half of the chain.

    ``z`` compares the first ``first`` fraction with the last ``last``
    fraction.  ``profile`` repeats the comparison for ``intervals`` early
    segments whose starts are spread over the first half.
    """
    x = np.asarray(draws, float).ravel()
    if x.size < 100:
        raise DiagnosticsError("Geweke diagnostic needs at least 100 draws")
    x = thin_random(x, thin_to, seed)
    n = x.size
    na = max(2, int(first * n))
    tail = x[n - int(last * n):]
    z, degenerate = _geweke_pair(x[:na], tail, window)
    starts = np.linspace(0, n // 2 - na, intervals).astype(int)
    profile = np.array([_geweke_pair(x[s:s + na], tail, window)[0] for s in starts])
    return GewekeResult(z, degenerate, profile)


def geweke_z(draws, **kw):
    return geweke(draws, **kw).z


def gelman_rubin(chains, split=True):
    """Potential scale reduction factor.

    ``chains`` is a list of equal-length 1-d series (or a 2-d array, one
    chain per row).  With ``split`` every chain is halved first, so a single
    chain is accepted (with a warning when only one is given).
    """
    arr = np.atleast_2d(np.asarray(chains, float))
    if arr.shape[0] < 2 and not split:
        raise DiagnosticsError("classic R-hat needs at least two chains")
    if arr.shape[0] < 2:
        warnings.warn("R-hat from a single chain (split halves only)", stacklevel=2)
    if split:
        h = arr.shape[1] // 2
        arr = np.concatenate([arr[:, :h], arr[:, arr.shape[1] - h:]], axis=0)
    n = arr.shape[1]
    if n < 2:
        raise DiagnosticsError("chains too short for R-hat")
    means = arr.mean(axis=1)
    W = arr.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def autocorrelation(draws, max_lag):
    """Biased, normalized autocorrelation at lags 0..max_lag.

    Constant series return ``acf[0] = 1`` and zeros elsewhere; use
    :func:`is_constant` to flag them.
    """
    x = np.asarray(draws, float).ravel()
    if x.size <= max_lag:
        raise DiagnosticsError("series shorter than max_lag")
    ac = _autocov(x, max_lag)
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if ac[0] > 0:
        out[1:] = ac[1:] / ac[0]
    return out


def is_constant(draws):
    x = np.asarray(draws, float)
    return bool(np.all(x == x.flat[0]))


def five_numbers(draws):
    q = np.quantile(np.asarray(draws, float), [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q1", "median", "q3", "max"), q.tolist()))


@dataclass
class ParamDiagnostics:
    rhat: float
    geweke_z: float
    geweke_chains: list
    geweke_degenerate: bool
    acf: list
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class DiagnosticsReport:
    params: dict
    divergences: int = 0
    n_draws: int = 0
    n_chains: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {k: v.to_dict() for k, v in self.params.items()}
        out.update(divergences=self.divergences, n_draws=self.n_draws, n_chains=self.n_chains)
        out.update(self.extra)
        return out

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def summarize(chains, names, max_lag=50, thin_seed=0, divergences=0, classic_rhat=False):
    """Per-parameter diagnostics for a list of (draws x params) arrays.

    The reported Geweke z is that of the first chain; all chains' values are
    kept in ``geweke_chains``.
    """
    chains = [np.atleast_2d(np.asarray(c, float)) for c in chains]
    if not chains or chains[0].shape[0] == 0:
        raise DiagnosticsError("no draws")
    n = min(c.shape[0] for c in chains)
    chains = [c[:n] for c in chains]
    merged = np.concatenate(chains, axis=0)
    lag = min(max_lag, n - 1)
    params = {}
    for j, name in enumerate(names):
        series = [c[:, j] for c in chains]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rhat = gelman_rubin(series, split=not classic_rhat) if (len(series) > 1 or n >= 4) \
                else float("nan")
        if n >= 100:
            gw = [geweke(s, seed=thin_seed) for s in series]
            gz, gdeg = gw[0].z, gw[0].degenerate
            gall = [g.z for g in gw]
        else:
            gz, gdeg, gall = float("nan"), True, []
        params[name] = ParamDiagnostics(rhat, gz, gall, gdeg, autocorrelation(series[0], lag).tolist(),
                                        **five_numbers(merged[:, j]))
    return DiagnosticsReport(params, int(divergences), int(merged.shape[0]), len(chains))
