"""Multilayer gamma-chain generative model for non-negative sequences.

Latent states evolve as gamma variables whose shape combines a temporal
term (transition matrix acting on the previous step at the same layer) and
a hierarchical term (loading matrix acting on the layer above at the same
step). Observations are emitted through either a Poisson randomized gamma
link on real values or a Poisson link on quantized counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import stats
from .exceptions import ConfigError, ParameterError, ShapeError
from .stats import RngStream

STATE_FLOOR = 1e-8   # keeps downstream logs finite inside training paths
STATE_CEIL = 1e150   # heavy Weibull tails can overflow float64 at tiny shapes

LINKS = ("prg", "poisson")


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes, hyperparameters, and the emission link.

    K lists the layer widths bottom-up; V is the observation dimension and T
    the sequence length. eta and nu are the Dirichlet concentrations for the
    loading and transition columns, b the per-layer gamma rate, c the
    emission scale of the real-valued link, and mu the quantization scale of
    the count link.
    """

    K: tuple
    V: int
    T: int
    eta: float = 0.1
    nu: float = 0.1
    b: tuple = (1.0,)
    c: float = 200.0
    mu: float = 100.0
    link: str = "prg"

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(int(k) for k in np.atleast_1d(self.K)))
        b = np.atleast_1d(self.b).astype(np.float64)
        if b.size == 1:
            b = np.repeat(b, len(self.K))
        object.__setattr__(self, "b", tuple(float(x) for x in b))
        if len(self.K) < 1 or any(k < 1 for k in self.K):
            raise ConfigError(f"layer widths must all be >= 1, got {self.K}")
        if self.V < 1 or self.T < 1:
            raise ConfigError(f"V and T must be >= 1, got V={self.V}, T={self.T}")
        if len(self.b) != len(self.K):
            raise ConfigError("b must provide one rate per layer")
        for name in ("eta", "nu", "c", "mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v}")
        if any(not (np.isfinite(x) and x > 0) for x in self.b):
            raise ConfigError(f"b entries must be finite and > 0, got {self.b}")
        if self.link not in LINKS:
            raise ConfigError(f"link must be one of {LINKS}, got {self.link!r}")

    @property
    def L(self) -> int:
        return len(self.K)

    def width(self, layer: int) -> int:
        """Input width of layer `layer`: V below layer 0, else K[layer-1]."""
        return self.V if layer == 0 else self.K[layer - 1]


@dataclass
class GlobalParams:
    """Loading matrices phi[l] (K_{l-1} x K_l) and transitions pi[l] (K_l x K_l).

    Every column lives on the simplex.
    """

    phi: list
    pi: list

    def validate(self, tol: float = 1e-10) -> None:
        for name, mats in (("phi", self.phi), ("pi", self.pi)):
            for l, m in enumerate(mats):
                if np.any(m < 0):
                    raise ParameterError(f"{name}[{l}] has negative entries")
                gap = np.abs(m.sum(axis=0) - 1.0).max()
                if gap > tol:
                    raise ParameterError(f"{name}[{l}] columns deviate from the simplex by {gap:.3e}")

    def copy(self) -> "GlobalParams":
        return GlobalParams([m.copy() for m in self.phi], [m.copy() for m in self.pi])


@dataclass
class LatentStates:
    """Per-layer state arrays s[l] of shape (K_l, T)."""

    s: list

    def at(self, layer: int, t: int) -> np.ndarray:
        return self.s[layer][:, t]


@dataclass
class Sequence:
    """One windowed non-negative sequence, optionally quantized and labeled."""

    x: np.ndarray
    counts: Optional[np.ndarray] = None
    label: Optional[int] = None
    mu: Optional[float] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ShapeError(f"sequence data must be a V x T matrix, got shape {self.x.shape}")
        if np.any(self.x < 0) or not np.all(np.isfinite(self.x)):
            raise ParameterError("sequence values must be finite and >= 0")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != self.x.shape:
                raise ShapeError("counts must match the data shape")


def init_params(cfg: ModelConfig, rng: RngStream) -> GlobalParams:
    """Draw loading and transition matrices columnwise from their Dirichlet priors."""
    phi, pi = [], []
    for l in range(cfg.L):
        rows = cfg.width(l)
        cols = cfg.K[l]
        p = np.empty((rows, cols))
        for k in range(cols):
            p[:, k] = stats.dirichlet_sample(np.full(rows, cfg.eta), rng)
        phi.append(p)
        q = np.empty((cols, cols))
        for k in range(cols):
            q[:, k] = stats.dirichlet_sample(np.full(cols, cfg.nu), rng)
        pi.append(q)
    return GlobalParams(phi, pi)


def state_shape(params: GlobalParams, cfg: ModelConfig, layer: int, t: int,
                s_above: Optional[np.ndarray], s_prev: Optional[np.ndarray]) -> np.ndarray:
    """Gamma shape parameter of s_t at `layer` (the b-scaled conditional mean).

    Boundary forms: the top layer at t=0 uses the constant vector b; absent
    temporal or hierarchical terms contribute zero.
    """
    b = cfg.b[layer]
    if layer == cfg.L - 1 and t == 0:
        return np.full(cfg.K[layer], b)
    mean = expected_state(params, cfg, layer, s_above, s_prev)
    return b * mean


def expected_state(params: GlobalParams, cfg: ModelConfig, layer: int,
                   s_above: Optional[np.ndarray], s_prev: Optional[np.ndarray]) -> np.ndarray:
    """Conditional mean of a layer's state given its neighbors.

    Returns phi[layer+1] @ s_above + pi[layer] @ s_prev, treating an absent
    term as zero; this is the adjacent-expectation identity of the model.
    """
    if s_above is None and s_prev is None:
        raise ParameterError("at least one of s_above, s_prev must be given")
    out = np.zeros(cfg.K[layer])
    if s_above is not None:
        if layer + 1 >= cfg.L:
            raise ShapeError("s_above given for the top layer")
        phi_up = params.phi[layer + 1]
        if phi_up.shape[1] != np.size(s_above):
            raise ShapeError(
                f"s_above has size {np.size(s_above)}, expected {phi_up.shape[1]}"
            )
        out += phi_up @ np.asarray(s_above, dtype=np.float64)
    if s_prev is not None:
        if np.size(s_prev) != cfg.K[layer]:
            raise ShapeError(f"s_prev has size {np.size(s_prev)}, expected {cfg.K[layer]}")
        out += params.pi[layer] @ np.asarray(s_prev, dtype=np.float64)
    return out


def sample_step_states(params: GlobalParams, cfg: ModelConfig, t: int,
                       prev: Optional[list], rng: RngStream) -> list:
    """Sample all layers for one time step, top layer downward.

    `prev` holds the previous step's per-layer states (None at t=0). Zero
    gamma shapes produce exactly zero, the point-mass closure of the model.
    """
    out = [None] * cfg.L
    for layer in range(cfg.L - 1, -1, -1):
        s_above = out[layer + 1] if layer + 1 < cfg.L else None
        s_prev = prev[layer] if prev is not None else None
        shape = state_shape(params, cfg, layer, t, s_above, s_prev)
        out[layer] = stats.gamma_unit_sample(shape, rng, zero_shape_zero=True) / cfg.b[layer]
    return out


def sample_states_prior(params: GlobalParams, cfg: ModelConfig, rng: RngStream) -> LatentStates:
    """Ancestral draw of the full latent state array, t ascending, layers descending."""
    s = [np.zeros((cfg.K[l], cfg.T)) for l in range(cfg.L)]
    prev = None
    for t in range(cfg.T):
        cur = sample_step_states(params, cfg, t, prev, rng)
        for l in range(cfg.L):
            s[l][:, t] = cur[l]
        prev = cur
    return LatentStates(s)


def emit(params: GlobalParams, cfg: ModelConfig, s1: np.ndarray, rng: RngStream) -> np.ndarray:
    """Emit one observation column from the bottom-layer state.

    PRG link: latent count r ~ Pois(phi[0] @ s1), then x ~ Gam(r, rate c)
    with x = 0 exactly when r = 0. Poisson link: returns the counts
    themselves (the model of the quantized data).
    """
    m = params.phi[0] @ np.asarray(s1, dtype=np.float64)
    r = rng.gen.poisson(m)
    if cfg.link == "poisson":
        return r.astype(np.float64)
    return stats.gamma_unit_sample(r.astype(np.float64), rng, zero_shape_zero=True) / cfg.c


def generate_sequence(params: GlobalParams, cfg: ModelConfig, rng: RngStream,
                      label: Optional[int] = None) -> Sequence:
    """Ancestral states plus emissions; counts are filled for the Poisson link."""
    states = sample_states_prior(params, cfg, rng)
    x = np.zeros((cfg.V, cfg.T))
    for t in range(cfg.T):
        x[:, t] = emit(params, cfg, states.at(0, t), rng)
    if cfg.link == "poisson":
        counts = x.astype(np.int64)
        return Sequence(x=x / cfg.mu, counts=counts, label=label, mu=cfg.mu)
    return Sequence(x=x, label=label)


def forecast_next(params: GlobalParams, cfg: ModelConfig, states_at_t: list) -> np.ndarray:
    """One-step-ahead forecast of the observation mean on the data scale.

    Pushes the top layer through its transition, composes downward with the
    adjacent-expectation identity, and projects through the bottom loading
    matrix (divided by c for the PRG link, by mu for the Poisson link).
    """
    L = cfg.L
    m = params.pi[L - 1] @ np.asarray(states_at_t[L - 1], dtype=np.float64)
    for layer in range(L - 2, -1, -1):
        m = params.phi[layer + 1] @ m + params.pi[layer] @ np.asarray(states_at_t[layer], dtype=np.float64)
    scale = cfg.c if cfg.link == "prg" else cfg.mu
    return params.phi[0] @ m / scale


def quantize(x: np.ndarray, mu: float) -> np.ndarray:
    """Elementwise floor(mu * x) as integers."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ParameterError("quantize expects non-negative data")
    return np.floor(mu * x).astype(np.int64)


def project_neuron(params: GlobalParams, layer: int, factor: int) -> np.ndarray:
    """Project one factor's loading column down to the observation simplex.

    Multiplies the column through every loading matrix below it; the result
    is a V-dimensional simplex vector (layers and factors are 0-based).
    """
    L = len(params.phi)
    if not 0 <= layer < L:
        raise ParameterError(f"layer {layer} out of range [0, {L})")
    if not 0 <= factor < params.phi[layer].shape[1]:
        raise ParameterError(f"factor {factor} out of range for layer {layer}")
    v = params.phi[layer][:, factor].copy()
    for p in range(layer - 1, -1, -1):
        v = params.phi[p] @ v
    return v


def joint_log_likelihood(params: GlobalParams, cfg: ModelConfig, seq: Sequence,
                         states: LatentStates) -> float:
    """Joint log-density of one sequence and its latent states.

    Sums the emission log-density per step (PRG marginal or Poisson pmf of
    the quantized counts) with the gamma log-density of every state given
    its conditional shape and rate. States sitting exactly at zero where the
    shape is positive give -inf, a valid log-density value.
    """
    if seq.x.shape != (cfg.V, cfg.T):
        raise ShapeError(f"sequence shape {seq.x.shape} does not match config ({cfg.V}, {cfg.T})")
    total = 0.0
    for t in range(cfg.T):
        m = params.phi[0] @ states.at(0, t)
        if cfg.link == "prg":
            total += float(stats.prg_logpdf(seq.x[:, t], m, cfg.c).sum())
        else:
            counts = seq.counts if seq.counts is not None else quantize(seq.x, cfg.mu)
            total += float(stats.poisson_logpmf(counts[:, t], m).sum())
    for layer in range(cfg.L):
        b = cfg.b[layer]
        for t in range(cfg.T):
            s_above = states.at(layer + 1, t) if layer + 1 < cfg.L else None
            s_prev = states.at(layer, t - 1) if t > 0 else None
            shape = state_shape(params, cfg, layer, t, s_above, s_prev)
            total += float(stats.gamma_logpdf(states.at(layer, t), shape, b).sum())
    return total


def floor_states(values: np.ndarray) -> np.ndarray:
    """Floor sampled states at a tiny positive constant (training paths only)."""
    return np.maximum(values, STATE_FLOOR)
