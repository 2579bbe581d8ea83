"""Random samplers, log-densities, and analytic divergences.

Everything here is deterministic given an RngStream: re-running a sampler
with the same seed yields a bit-identical result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import (
    DegenerateAllocationError,
    NumericError,
    ParameterError,
)

EULER_GAMMA = float(np.euler_gamma)

# Uniform draws feeding the Weibull reparameterization are clamped away from
# {0, 1}: -ln(1-eps) explodes at the boundary and so do its gradients.
EPS_CLAMP_LO = 1e-6
EPS_CLAMP_HI = 1.0 - 1e-6


class RngStream:
    """Seeded random stream with spawnable children for parallel workers.

    Identical (seed, path) pairs reproduce the exact same draw sequence.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        if self.seed < 0:
            raise ParameterError("seed must be a non-negative integer")
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def child(self, index: int) -> "RngStream":
        """Independent stream derived from this one (for per-worker use)."""
        return RngStream(self.seed, self.path + (int(index),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class WeibullParams:
    """Weibull(k, lambda): shape k > 0, scale lam > 0."""

    k: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise ParameterError(f"Weibull shape must be finite and > 0, got {self.k}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ParameterError(f"Weibull scale must be finite and > 0, got {self.lam}")


@dataclass(frozen=True)
class GammaParams:
    """Gamma(shape, rate); mean is shape/rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise ParameterError(f"gamma shape must be finite and > 0, got {self.shape}")
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ParameterError(f"gamma rate must be finite and > 0, got {self.rate}")


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def gamma_unit_sample(shape: np.ndarray, rng: RngStream, zero_shape_zero: bool = False) -> np.ndarray:
    """Unit-rate gamma draws for an array of shape parameters.

    Shapes below 1 use the boost-by-one identity (draw shape+1, multiply by
    U^(1/shape)), which stays accurate where rejection samplers degrade.
    With ``zero_shape_zero`` a zero shape is treated as the point mass at 0.
    """
    a = np.asarray(shape, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ParameterError("gamma shape must be finite")
    if zero_shape_zero:
        if np.any(a < 0):
            raise ParameterError("gamma shape must be >= 0")
    elif np.any(a <= 0):
        raise ParameterError("gamma shape must be > 0")

    small = (a > 0) & (a < 1.0)
    boosted = np.where(small, a + 1.0, np.maximum(a, 1.0))
    draws = rng.gen.gamma(boosted)
    if np.any(small):
        u = 1.0 - rng.gen.random(a.shape)  # (0, 1]
        # u^(1/shape) in log space; underflows quietly to 0 for tiny shapes
        with np.errstate(divide="ignore", under="ignore", over="ignore"):
            boost = np.where(small, np.exp(np.log(u) / np.where(small, a, 1.0)), 1.0)
        draws = draws * boost
    return np.where(a == 0, 0.0, draws)


def gamma_sample(p: GammaParams, rng: RngStream) -> float:
    """One draw from Gamma(shape, rate); mean shape/rate."""
    return float(gamma_unit_sample(np.float64(p.shape), rng) / p.rate)


def dirichlet_sample(alpha: np.ndarray, rng: RngStream) -> np.ndarray:
    """Dirichlet draw built from normalized gamma variates."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.size == 0:
        raise ParameterError("alpha must be non-empty")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ParameterError("alpha entries must be finite and > 0")
    g = gamma_unit_sample(a, rng)
    total = g.sum()
    if total <= 0:
        raise NumericError("all gamma draws underflowed to zero in dirichlet_sample")
    return g / total


def poisson_sample(rate: float, rng: RngStream) -> int:
    """Poisson draw; rate 0 returns 0."""
    if not np.isfinite(rate) or rate < 0:
        raise ParameterError(f"Poisson rate must be finite and >= 0, got {rate}")
    return int(rng.gen.poisson(rate))


def clamp_eps(eps: np.ndarray) -> np.ndarray:
    """Clamp uniform noise into [1e-6, 1-1e-6] before reparameterization."""
    return np.clip(eps, EPS_CLAMP_LO, EPS_CLAMP_HI)


def weibull_sample_reparam(p: WeibullParams, eps: float) -> float:
    """Deterministic Weibull draw lambda * (-ln(1-eps))^(1/k) from eps in (0,1)."""
    e = np.asarray(eps, dtype=np.float64)
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise ParameterError("eps must lie strictly inside (0,1); clamp before calling")
    out = p.lam * (-np.log1p(-e)) ** (1.0 / p.k)
    return float(out) if np.isscalar(eps) else out


# ---------------------------------------------------------------------------
# Weibull -> gamma divergence (closed form) and its partial derivatives
# ---------------------------------------------------------------------------


def kl_weibull_gamma_fields(k, lam, alpha, beta):
    """KL(Weibull(k, lam) || Gamma(alpha, rate beta)), elementwise.

    gamma_e*alpha/k - alpha*ln lam + ln k + beta*lam*Gamma(1+1/k)
    - gamma_e - 1 - alpha*ln beta + lnGamma(alpha)
    """
    k = np.asarray(k, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    out = (
        EULER_GAMMA * alpha / k
        - alpha * np.log(lam)
        + np.log(k)
        + _beta_lam_gamma(k, lam, beta)
        - EULER_GAMMA
        - 1.0
        - alpha * np.log(beta)
        + special.gammaln(alpha)
    )
    return out


# extreme shapes (k below ~0.006) push beta*lam*Gamma(1+1/k) past float range;
# capping keeps transient training states finite with gradients still pointing
# away from the blow-up, and cannot affect any value below ~1e290
_BLG_CAP = 1e290


def _beta_lam_gamma(k, lam, beta):
    """beta * lam * Gamma(1 + 1/k), in log space, capped at a huge value."""
    with np.errstate(over="ignore"):
        log_blg = np.log(beta) + np.log(lam) + special.gammaln(1.0 + 1.0 / np.asarray(k, dtype=np.float64))
        return np.exp(np.minimum(log_blg, np.log(_BLG_CAP)))


def kl_weibull_gamma(q: WeibullParams, p: GammaParams) -> float:
    """Analytic KL divergence from a Weibull to a gamma distribution."""
    out = float(kl_weibull_gamma_fields(q.k, q.lam, p.shape, p.rate))
    if not np.isfinite(out):
        raise NumericError(f"kl_weibull_gamma produced non-finite value for q={q}, p={p}")
    return out


def kl_weibull_gamma_grads(k, lam, alpha, beta):
    """Partials of the KL closed form w.r.t. (k, lam, alpha), elementwise."""
    k = np.asarray(k, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    inv_k = 1.0 / k
    blg = _beta_lam_gamma(k, lam, beta)
    with np.errstate(over="ignore"):
        d_k = -EULER_GAMMA * alpha * inv_k**2 + inv_k - blg * special.digamma(1.0 + inv_k) * inv_k**2
        d_lam = -alpha / lam + blg / lam
    d_alpha = EULER_GAMMA * inv_k - np.log(lam) - np.log(beta) + special.digamma(alpha)
    # extreme transient states can push the capped blg term past float range;
    # clipping keeps the descent direction with a magnitude Adam can digest
    d_k = np.clip(d_k, -1e60, 1e60)
    d_lam = np.clip(d_lam, -1e60, 1e60)
    return d_k, d_lam, d_alpha


# ---------------------------------------------------------------------------
# count augmentation primitives
# ---------------------------------------------------------------------------


def crt_sample(n: int, r: float, rng: RngStream) -> int:
    """Chinese-restaurant-table draw: sum of Bernoulli(r/(r+i)), i=0..n-1."""
    if n < 0:
        raise ParameterError(f"count must be >= 0, got {n}")
    if not np.isfinite(r) or r <= 0:
        raise ParameterError(f"concentration must be finite and > 0, got {r}")
    if n == 0:
        return 0
    i = np.arange(n, dtype=np.float64)
    return int(np.count_nonzero(rng.gen.random(n) < r / (r + i)))


def crt_sample_array(n: np.ndarray, r: np.ndarray, rng: RngStream,
                     checked: bool = True) -> np.ndarray:
    """Vectorized CRT draws; one table count per (n, r) pair."""
    n = np.asarray(n)
    r = np.asarray(np.broadcast_to(r, n.shape), dtype=np.float64)
    n_flat = n.ravel().astype(np.int64)
    r_flat = r.ravel()
    if checked:
        if np.any(n_flat < 0):
            raise ParameterError("counts must be >= 0")
        if np.any(~np.isfinite(r_flat)) or np.any(r_flat[n_flat > 0] <= 0):
            raise ParameterError("concentration must be finite and > 0 where counts are positive")
    total = int(n_flat.sum())
    if total == 0:
        return np.zeros(n.shape, dtype=np.int64)
    owner = np.repeat(np.arange(n_flat.size), n_flat)
    starts = np.cumsum(n_flat) - n_flat
    within = np.arange(total, dtype=np.float64) - np.repeat(starts, n_flat)
    p = r_flat[owner] / (r_flat[owner] + within)
    hits = rng.gen.random(total) < p
    tables = np.bincount(owner[hits], minlength=n_flat.size)
    return tables.reshape(n.shape).astype(np.int64)


def multinomial_partition(total: int, weights: np.ndarray, rng: RngStream) -> np.ndarray:
    """Split an integer total over categories proportionally to weights."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise ParameterError(f"total must be >= 0, got {total}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParameterError("weights must be finite and >= 0")
    if total == 0:
        return np.zeros(w.shape, dtype=np.int64)
    s = w.sum()
    if s <= 0:
        raise DegenerateAllocationError("cannot allocate a positive total over all-zero weights")
    return rng.gen.multinomial(int(total), w / s).astype(np.int64)


def multinomial_partition_rows(totals: np.ndarray, weights: np.ndarray, rng: RngStream) -> np.ndarray:
    """Row-wise partition: totals (n,), weights (n, k) -> allocations (n, k).

    Rows with total 0 may carry all-zero weights; any positive total over
    all-zero weights is a degenerate allocation.
    """
    totals = np.asarray(totals, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    sums = w.sum(axis=-1)
    bad = (totals > 0) & (sums <= 0)
    if np.any(bad):
        raise DegenerateAllocationError(
            f"{int(bad.sum())} rows have a positive total but all-zero weights"
        )
    safe = np.where(sums > 0, sums, 1.0)
    pvals = w / safe[..., None]
    # keep rows valid for the generator even when the total is zero
    pvals[sums <= 0, 0] = 1.0
    return rng.gen.multinomial(totals, pvals).astype(np.int64)


def _partition_rows_unchecked(totals: np.ndarray, pweights: np.ndarray, rng: RngStream) -> np.ndarray:
    """Hot-path row partition; the caller guarantees positive row sums."""
    pvals = pweights / pweights.sum(axis=-1, keepdims=True)
    return rng.gen.multinomial(totals, pvals)


# ---------------------------------------------------------------------------
# Poisson randomized gamma link
# ---------------------------------------------------------------------------


_prg_grid_cache: dict = {}


def _prg_grid_consts(rmax: int):
    """Cached lnGamma(r+1) + lnGamma(r) grid covering r = 1..rmax.

    The requested range is rounded up to a power of two so repeated calls
    with drifting supports reuse one grid. p(r | x, rate, c) is proportional
    to Pois(r; rate) * Gam(x; r, 1/c); dropping the shared exp(-rate - c*x)
    leaves log w_r = r*ln(rate*c*x) - lnGamma(r+1) - lnGamma(r).
    """
    size = 1 << max(8, int(np.ceil(np.log2(max(rmax, 2)))))
    hit = _prg_grid_cache.get(size)
    if hit is None:
        r = np.arange(1, size + 1, dtype=np.float64)
        hit = (r, special.gammaln(r + 1.0) + special.gammaln(r))
        if len(_prg_grid_cache) > 16:
            _prg_grid_cache.clear()
        _prg_grid_cache[size] = hit
    return hit


def prg_count_posterior_array(x: np.ndarray, rate: np.ndarray, c: float, rng: RngStream) -> np.ndarray:
    """Latent PRG counts r ~ p(r | x, rate, c), elementwise over arrays.

    x = 0 maps deterministically to r = 0 (the PRG point mass); positive x
    is sampled by normalized enumeration over an adaptively truncated
    support, widened until the neglected tails are below 1e-10. The
    log-weights are unimodal in r, so enumeration runs on a window around
    the mode sqrt(rate*c*x) instead of the full range.
    """
    x = np.asarray(x, dtype=np.float64)
    rate = np.asarray(np.broadcast_to(rate, x.shape), dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ParameterError("x must be finite and >= 0")
    if not np.all(np.isfinite(rate)) or np.any(rate[x > 0] <= 0):
        raise ParameterError("rate must be finite, and > 0 wherever x > 0")
    if not (np.isfinite(c) and c > 0):
        raise ParameterError(f"c must be finite and > 0, got {c}")

    out = np.zeros(x.shape, dtype=np.int64)
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    rp = rate[pos]
    z = rp * c * xp
    logz = np.log(z)
    center = np.sqrt(z)
    spread = np.maximum(10.0 * z**0.25 + np.sqrt(rp), 20.0)
    for _ in range(64):
        lo = np.maximum(np.floor(center - spread), 1.0).astype(np.int64)
        width = int(np.ceil(2.0 * spread.max()) + 2)
        rmax = int(lo.max()) + width
        r_all, lg_all = _prg_grid_consts(rmax)
        idx = lo[:, None] + np.arange(width)[None, :]
        logw = (idx * logz[:, None]) - lg_all[idx - 1]
        # two-sided geometric tail bounds from the boundary ratios
        ratio_hi = z / ((idx[:, -1] + 1.0) * idx[:, -1])
        ratio_lo = np.where(lo > 1, (lo * (lo - 1.0)) / z, 0.0)
        if np.all(ratio_hi < 0.5) and np.all(ratio_lo < 0.5):
            m = logw.max(axis=-1, keepdims=True)
            w = np.exp(logw - m)
            total = w.sum(axis=-1)
            tail = (w[:, -1] * ratio_hi / (1.0 - ratio_hi)
                    + w[:, 0] * ratio_lo / (1.0 - ratio_lo))
            if np.all(tail <= 1e-10 * total):
                break
        spread = spread * 2.0
    else:
        raise NumericError("PRG count posterior support did not stabilize")
    cdf = np.cumsum(w, axis=-1)
    u = rng.gen.random(xp.shape) * cdf[:, -1]
    pick = (cdf < u[:, None]).sum(axis=-1)
    out[pos] = lo + pick
    return out


def prg_count_posterior_sample(x: float, rate: float, c: float, rng: RngStream) -> int:
    """Single latent-count draw from the PRG posterior."""
    return int(prg_count_posterior_array(np.asarray([x]), np.asarray([rate]), c, rng)[0])


# ---------------------------------------------------------------------------
# log-densities
# ---------------------------------------------------------------------------


def gamma_logpdf(x, shape, rate):
    """Gamma(shape, rate) log-density; shape 0 is the point mass at zero."""
    x = np.asarray(x, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = (
            shape * np.log(rate)
            - special.gammaln(shape)
            + (shape - 1.0) * np.log(x)
            - rate * x
        )
    out = np.where(shape == 0.0, np.where(x == 0.0, 0.0, -np.inf), body)
    zero_x = (x == 0.0) & (shape > 0.0)
    if np.any(zero_x):
        # density at 0: +inf for shape<1, ln(rate) at shape=1, -inf above
        at_zero = np.where(shape < 1.0, np.inf, np.where(shape == 1.0, np.log(rate), -np.inf))
        out = np.where(zero_x, at_zero, out)
    return out


def poisson_logpmf(n, rate):
    """Poisson log-pmf; rate 0 is the point mass at n=0."""
    n = np.asarray(n, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = n * np.log(rate) - rate - special.gammaln(n + 1.0)
    return np.where(rate == 0.0, np.where(n == 0.0, 0.0, -np.inf), body)


def _log_bessel_i1(u: np.ndarray) -> np.ndarray:
    """ln I_1(u) for u > 0, stable for both tiny and large arguments."""
    u = np.asarray(u, dtype=np.float64)
    small = u < 1e-6
    safe = np.where(small, 1.0, u)
    with np.errstate(divide="ignore"):
        out = np.where(
            small,
            np.log(u / 2.0) + u * u / 8.0,
            np.log(special.ive(1, safe)) + safe,
        )
    return out


def _dlog_bessel_i1(u: np.ndarray) -> np.ndarray:
    """d/du ln I_1(u) = (I_0 + I_2) / (2 I_1)."""
    u = np.asarray(u, dtype=np.float64)
    small = u < 1e-6
    safe = np.where(small, 1.0, u)
    with np.errstate(divide="ignore"):
        out = np.where(
            small,
            1.0 / u + u / 4.0,
            (special.ive(0, safe) + special.ive(2, safe)) / (2.0 * special.ive(1, safe)),
        )
    return out


def prg_logpdf(x, rate, c):
    """Poisson randomized gamma log-density.

    The marginal over the latent count is exp(-rate - c*x) at x = 0 reduces
    to exp(-rate); for x > 0 it collapses to a first-order Bessel form
    sqrt(rate*c/x) * I_1(2*sqrt(rate*c*x)) * exp(-rate - c*x).
    """
    x = np.asarray(x, dtype=np.float64)
    rate = np.asarray(np.broadcast_to(rate, x.shape), dtype=np.float64)
    out = np.full(x.shape, -np.inf, dtype=np.float64)
    zero = x == 0.0
    out[zero] = -rate[zero]
    pos = (x > 0.0) & (rate > 0.0)
    if np.any(pos):
        xp, mp = x[pos], rate[pos]
        u = 2.0 * np.sqrt(mp * c * xp)
        out[pos] = -mp - c * xp + 0.5 * (np.log(mp) + np.log(c) - np.log(xp)) + _log_bessel_i1(u)
    return out


def prg_logpdf_drate(x, rate, c):
    """Partial of prg_logpdf w.r.t. its rate parameter, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    rate = np.asarray(np.broadcast_to(rate, x.shape), dtype=np.float64)
    out = np.full(x.shape, -1.0, dtype=np.float64)
    pos = (x > 0.0) & (rate > 0.0)
    if np.any(pos):
        xp, mp = x[pos], rate[pos]
        u = 2.0 * np.sqrt(mp * c * xp)
        out[pos] = -1.0 + 0.5 / mp + _dlog_bessel_i1(u) * np.sqrt(c * xp / mp)
    return out


# ---------------------------------------------------------------------------
# small numeric helpers
# ---------------------------------------------------------------------------


def softplus(x):
    """ln(1 + e^x) computed without overflow on either tail."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    """Logistic function, the derivative of softplus."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(np.minimum(x, 0.0)) / (1.0 + np.exp(np.minimum(x, 0.0))))
    return float(out) if out.ndim == 0 else out
