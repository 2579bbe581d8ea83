"""Hybrid training loop: minibatch MCMC on the simplex-constrained global
matrices plus Adam on the encoder (and classifier) parameters.

Each iteration encodes a minibatch, takes one Adam step on the
reparameterization gradient of the objective, samples (or reuses) latent
counts, propagates them through the count augmentation, and then updates
every transition and loading column with a Fisher-preconditioned
stochastic-gradient Langevin step followed by a simplex projection.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from . import classifier as _classifier
from . import encoder as _encoder
from . import genmodel, stats
from .exceptions import ConfigError, NumericError, ParameterError
from .genmodel import GlobalParams, LatentStates, ModelConfig
from .stats import RngStream

SIMPLEX_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# count augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentedCounts:
    """Allocation statistics feeding the column updates.

    z_phi[l] matches phi[l] in shape and orientation (rows index the layer
    below, columns the factors); z_pi[l] matches pi[l] (rows index the
    current step's factors, columns the previous step's). audit carries the
    batch-summed bookkeeping used by the conservation checks.
    """

    z_phi: list
    z_pi: list
    audit: dict = dataclass_field(default_factory=dict)


def augment_counts_batch(params: GlobalParams, cfg: ModelConfig, s_list: list,
                         counts: np.ndarray, rng: RngStream) -> AugmentedCounts:
    """Backward-over-time, upward-over-layers count augmentation of a batch.

    s_list holds strictly positive sampled states per layer, (M, K_l, T);
    counts is the observed (M, V, T) integer matrix. Observed counts are
    partitioned over bottom-layer factors; at every node the incoming count
    is thinned to tables against the node's gamma shape, each table is
    credited to the temporal or the hierarchical half of that shape, and the
    credited tables are partitioned once more into the matching transition
    or loading column while also becoming the incoming counts of the node
    they point at. Time must run from last to first so the temporal credits
    reach step t-1 before it is processed.
    """
    counts = np.asarray(counts)
    M = counts.shape[0]
    if counts.shape != (M, cfg.V, cfg.T):
        raise ParameterError(f"counts must have shape (M, {cfg.V}, {cfg.T}), got {counts.shape}")
    if np.any(counts < 0):
        raise ParameterError("counts must be non-negative integers")
    counts = counts.astype(np.int64)

    z_phi = [np.zeros((cfg.width(l), cfg.K[l]), dtype=np.int64) for l in range(cfg.L)]
    z_pi = [np.zeros((cfg.K[l], cfg.K[l]), dtype=np.int64) for l in range(cfg.L)]
    audit = {
        "counts_in": [np.zeros((cfg.K[l], cfg.T), dtype=np.int64) for l in range(cfg.L)],
        "tables": [np.zeros((cfg.K[l], cfg.T), dtype=np.int64) for l in range(cfg.L)],
        "tables_temporal": [np.zeros((cfg.K[l], cfg.T), dtype=np.int64) for l in range(cfg.L)],
        "tables_hier": [np.zeros((cfg.K[l], cfg.T), dtype=np.int64) for l in range(cfg.L)],
        "tables_absorbed": 0,
        "observed_total": int(counts.sum()),
    }

    # observed counts split over bottom-layer factors
    s0 = s_list[0]
    w0 = params.phi[0][None, :, None, :] * s0[:, None, :, :].transpose(0, 1, 3, 2)
    # w0[m, v, t, k] = phi[0][v, k] * s0[m, k, t]
    alloc0 = stats.multinomial_partition_rows(
        counts.reshape(-1), w0.reshape(-1, cfg.K[0]), rng
    ).reshape(M, cfg.V, cfg.T, cfg.K[0])
    z_phi[0] += alloc0.sum(axis=(0, 2)).astype(np.int64)
    incoming = alloc0.sum(axis=1).transpose(0, 2, 1)  # (M, K_1, T)

    for l in range(cfg.L):
        b = cfg.b[l]
        s_here = s_list[l]
        s_above = s_list[l + 1] if l + 1 < cfg.L else None
        carried = np.zeros((M, cfg.K[l]), dtype=np.int64)
        up = np.zeros((M, cfg.K[l + 1], cfg.T), dtype=np.int64) if l + 1 < cfg.L else None
        # conditional shape components for every step at once
        temp_all = np.zeros((M, cfg.K[l], cfg.T))
        temp_all[:, :, 1:] = b * np.einsum("ij,mjt->mit", params.pi[l], s_here[:, :, :-1])
        hier_all = (b * np.einsum("ij,mjt->mit", params.phi[l + 1], s_above)
                    if l + 1 < cfg.L else np.zeros((M, cfg.K[l], cfg.T)))
        for t in range(cfg.T - 1, -1, -1):
            n = incoming[:, :, t] + carried
            audit["counts_in"][l][:, t] += n.sum(axis=0)
            temp_shape = temp_all[:, :, t]
            hier_shape = hier_all[:, :, t]
            if l == cfg.L - 1 and t == 0:
                total_shape = np.full((M, cfg.K[l]), b)
            else:
                total_shape = temp_shape + hier_shape
            tables = stats.crt_sample_array(n, total_shape, rng, checked=False)
            audit["tables"][l][:, t] += tables.sum(axis=0)

            if l == cfg.L - 1 and t == 0:
                audit["tables_absorbed"] += int(tables.sum())
                carried = np.zeros((M, cfg.K[l]), dtype=np.int64)
                continue
            denom = temp_shape + hier_shape
            p_temp = np.divide(temp_shape, denom, out=np.zeros_like(denom), where=denom > 0)
            t_temp = rng.gen.binomial(tables, p_temp) if t > 0 else np.zeros_like(tables)
            t_hier = tables - t_temp
            audit["tables_temporal"][l][:, t] += t_temp.sum(axis=0)
            audit["tables_hier"][l][:, t] += t_hier.sum(axis=0)

            if t > 0:
                w_t = params.pi[l][None, :, :] * s_here[:, None, :, t - 1]
                alloc_t = stats._partition_rows_unchecked(
                    t_temp.reshape(-1), w_t.reshape(-1, cfg.K[l]), rng
                ).reshape(M, cfg.K[l], cfg.K[l])
                z_pi[l] += alloc_t.sum(axis=0).astype(np.int64)
                carried = alloc_t.sum(axis=1)
            else:
                carried = np.zeros((M, cfg.K[l]), dtype=np.int64)
            if l + 1 < cfg.L:
                w_h = params.phi[l + 1][None, :, :] * s_above[:, None, :, t]
                alloc_h = stats._partition_rows_unchecked(
                    t_hier.reshape(-1), w_h.reshape(-1, cfg.K[l + 1]), rng
                ).reshape(M, cfg.K[l], cfg.K[l + 1])
                z_phi[l + 1] += alloc_h.sum(axis=0).astype(np.int64)
                up[:, :, t] = alloc_h.sum(axis=1)
        if l + 1 < cfg.L:
            incoming = up
    return AugmentedCounts(z_phi, z_pi, audit)


def augment_counts(params: GlobalParams, cfg: ModelConfig, states: LatentStates,
                   counts: np.ndarray, rng: RngStream) -> AugmentedCounts:
    """Single-sequence augmentation; states come floored to stay positive."""
    s_list = [genmodel.floor_states(np.asarray(s, dtype=np.float64))[None] for s in states.s]
    return augment_counts_batch(params, cfg, s_list, np.asarray(counts)[None], rng)


# ---------------------------------------------------------------------------
# simplex-constrained column updates
# ---------------------------------------------------------------------------


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Floor entries at a tiny positive constant and renormalize columnwise."""
    w = np.maximum(v, SIMPLEX_FLOOR)
    return w / w.sum(axis=0)


def tlasgr_update_matrix(mat: np.ndarray, z: np.ndarray, prior: float, m_vec: np.ndarray,
                         eps_i: float, rho: float, rng: Optional[RngStream]) -> np.ndarray:
    """Preconditioned Langevin step on every simplex column of a matrix.

    Drift moves each column toward the normalized minibatch statistic; the
    noise covariance (diag(col) - col col^T), scaled by 2*eps_i/M_k, is
    sampled exactly via the factor diag(sqrt(col)) - col sqrt(col)^T. With
    rng None the noise is suppressed (deterministic drift step).
    """
    if eps_i == 0.0:
        return mat.copy()
    dim = mat.shape[0]
    z_total = z.sum(axis=0)
    step = eps_i / m_vec
    drift = step * ((rho * z + prior) - (rho * z_total + prior * dim) * mat)
    out = mat + drift
    if rng is not None:
        xi = rng.gen.normal(size=mat.shape)
        root = np.sqrt(np.maximum(mat, 0.0))
        out = out + np.sqrt(2.0 * step) * (root * xi - mat * (root * xi).sum(axis=0))
    return simplex_project(out)


def tlasgr_update_column(col: np.ndarray, z_tilde: np.ndarray, z_total: float, prior: float,
                         m_k: float, eps_i: float, rho: float,
                         rng: Optional[RngStream] = None) -> np.ndarray:
    """One column's update; see tlasgr_update_matrix for the step structure."""
    col = np.asarray(col, dtype=np.float64)
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if z_tilde.shape != col.shape:
        raise ParameterError("statistic vector must match the column length")
    if abs(float(z_tilde.sum()) - float(z_total)) > 1e-6 * max(1.0, abs(z_total)):
        raise ParameterError("z_total must be the sum of the statistic vector")
    return tlasgr_update_matrix(col[:, None], z_tilde[:, None], prior,
                                np.asarray([m_k], dtype=np.float64), eps_i, rho, rng)[:, 0]


def update_fim(m_k: Optional[float], observed: float, decay: float = 0.9) -> float:
    """EMA of the per-column preconditioner; the first call adopts the observation."""
    if m_k is None:
        return float(observed)
    return float((1.0 - decay) * m_k + decay * observed)


def lr_schedule(i: int, eps0: float = 0.1, kappa: float = 0.7) -> float:
    """Robbins-Monro style step size eps0 * i^(-kappa), i >= 1."""
    if i < 1:
        raise ParameterError(f"step index must be >= 1, got {i}")
    return eps0 * float(i) ** (-kappa)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction; descends on the supplied gradients."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: Optional[float] = None) -> None:
        """In-place update of every named parameter with a matching gradient."""
        rate = self.lr if lr is None else lr
        self.t += 1
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter block {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**self.t)
            v_hat = self.v[name] / (1.0 - self.beta2**self.t)
            params[name] -= rate * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, params: dict, grads: dict, lr: Optional[float] = None) -> dict:
    """Functional wrapper over Adam.step; returns the updated parameter dict."""
    state.step(params, grads, lr=lr)
    return params


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainOptions:
    supervised: bool = False
    epochs: int = 1
    batch: int = 100
    seed: int = 0
    lr: float = 1e-4
    lr_final: Optional[float] = None  # exponential decay target; None keeps lr flat
    lr_hold: float = 0.0              # fraction of the run at lr before decaying
    eps0: float = 0.1
    kappa: float = 0.7
    fim_decay: float = 0.9
    threads: int = 1

    def adam_rate(self, it: int, total: int) -> float:
        if self.lr_final is None or total <= 1:
            return self.lr
        hold = int(self.lr_hold * total)
        if it <= hold:
            return self.lr
        frac = (it - hold - 1) / max(total - hold - 1, 1)
        return float(self.lr * (self.lr_final / self.lr) ** frac)


@dataclass
class TrainerState:
    """Step counter, per-column preconditioners, and the Adam moments."""

    step: int = 0
    fim_pi: list = dataclass_field(default_factory=list)
    fim_phi: list = dataclass_field(default_factory=list)
    adam: Optional[Adam] = None
    rho: float = 1.0


@dataclass
class TrainResult:
    cfg: ModelConfig
    params: GlobalParams
    enc: "_encoder.EncoderParams"
    w_sy: Optional[np.ndarray]
    state: TrainerState
    metrics: list
    seed: int
    n_classes: Optional[int] = None


def _dataset_arrays(cfg: ModelConfig, data, supervised: bool):
    sequences = getattr(data, "sequences", data)
    if len(sequences) == 0:
        raise ConfigError("training data is empty")
    x = np.stack([np.asarray(s.x, dtype=np.float64) for s in sequences])
    if x.shape[1:] != (cfg.V, cfg.T):
        raise ConfigError(f"data shape {x.shape[1:]} does not match config ({cfg.V}, {cfg.T})")
    counts = None
    if cfg.link == "poisson":
        counts = np.stack([
            s.counts if s.counts is not None else genmodel.quantize(s.x, cfg.mu)
            for s in sequences
        ]).astype(np.int64)
    labels = None
    if supervised:
        raw = [s.label for s in sequences]
        if any(lbl is None for lbl in raw):
            raise ConfigError("supervised training needs a label on every sequence")
        labels = np.asarray(raw, dtype=np.int64)
        if np.any(labels < 1):
            raise ConfigError("labels must be 1-based class indices")
    return x, counts, labels


def _chunked_gradients(enc, cfg, params, xb, noise, counts, w_sy, labels, threads):
    """Deterministic multi-thread gradient evaluation over batch chunks."""
    M = xb.shape[0]
    bounds = np.linspace(0, M, threads + 1).astype(int)
    jobs = []
    for c in range(threads):
        lo, hi = bounds[c], bounds[c + 1]
        if lo == hi:
            continue
        jobs.append((lo, hi))

    def run(span):
        lo, hi = span
        return _encoder.elbo_and_gradients(
            enc, cfg, params, xb[lo:hi], [e[lo:hi] for e in noise],
            counts=None if counts is None else counts[lo:hi],
            w_sy=w_sy, labels=None if labels is None else labels[lo:hi])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outs = list(pool.map(run, jobs))
    metrics = {k: 0.0 for k in ("elbo", "recon_term", "kl_term", "label_term")}
    grads: dict = {}
    fields = []
    for (lo, hi), (mtr, grd, fld) in zip(jobs, outs):
        w = (hi - lo) / M
        for k in metrics:
            metrics[k] += w * mtr[k]
        for name, g in grd.items():
            grads[name] = grads.get(name, 0.0) + w * g
        fields.append(fld)
    s_list = [np.concatenate([f.s[l] for f in fields], axis=0) for l in range(cfg.L)]
    return metrics, grads, s_list


def train(cfg: ModelConfig, data, options: TrainOptions) -> TrainResult:
    """Run the hybrid loop and return the trained model plus per-iteration metrics.

    Column updates run layers ascending, transitions before loadings,
    refreshing each preconditioner right before its column moves. Identical
    (config, data, seed) reruns produce bit-identical results when
    single-threaded.
    """
    rng = RngStream(options.seed)
    x_all, counts_all, labels_all = _dataset_arrays(cfg, data, options.supervised)
    N = x_all.shape[0]
    M = min(options.batch, N)
    rho = N / M

    params = genmodel.init_params(cfg, rng)
    enc = _encoder.init_encoder(cfg, rng)
    w_sy = None
    n_classes = None
    if options.supervised:
        n_classes = int(getattr(data, "n_classes", None) or labels_all.max())
        w_sy = _classifier.init_classifier(n_classes, _classifier.feature_dim(cfg), rng)

    adam = Adam(lr=options.lr)
    state = TrainerState(step=0,
                         fim_pi=[None] * cfg.L,
                         fim_phi=[None] * cfg.L,
                         adam=adam, rho=rho)
    named = dict(enc.named())
    if w_sy is not None:
        named["cls.W_sy"] = w_sy

    metrics_log = []
    iters_per_epoch = math.ceil(N / M)
    total_iters = options.epochs * iters_per_epoch
    for it in range(1, total_iters + 1):
        t0 = time.perf_counter()
        try:
            idx = np.sort(rng.gen.choice(N, size=M, replace=False))
            xb = x_all[idx]
            cb = counts_all[idx] if counts_all is not None else None
            yb = labels_all[idx] if labels_all is not None else None
            noise = _encoder.draw_noise(cfg, M, rng)

            if options.threads > 1:
                mtr, grads, s_list = _chunked_gradients(
                    enc, cfg, params, xb, noise, cb, w_sy, yb, options.threads)
            else:
                mtr, grads, field = _encoder.elbo_and_gradients(
                    enc, cfg, params, xb, noise, counts=cb, w_sy=w_sy, labels=yb)
                s_list = field.s
            adam.step(named, {k: -g for k, g in grads.items()},
                      lr=options.adam_rate(it, total_iters))

            if cfg.link == "prg":
                rates = np.einsum("vk,mkt->mvt", params.phi[0], s_list[0])
                counts_aug = stats.prg_count_posterior_array(xb, rates, cfg.c, rng)
            else:
                counts_aug = cb
            aug = augment_counts_batch(params, cfg, s_list, counts_aug, rng)

            eps_i = lr_schedule(it, options.eps0, options.kappa)
            for l in range(cfg.L):
                obs_pi = rho * aug.z_pi[l].sum(axis=0) + cfg.nu * cfg.K[l]
                state.fim_pi[l] = (obs_pi if state.fim_pi[l] is None
                                   else (1.0 - options.fim_decay) * state.fim_pi[l]
                                   + options.fim_decay * obs_pi)
                params.pi[l] = tlasgr_update_matrix(
                    params.pi[l], aug.z_pi[l].astype(np.float64), cfg.nu,
                    state.fim_pi[l], eps_i, rho, rng)
                obs_phi = rho * aug.z_phi[l].sum(axis=0) + cfg.eta * cfg.width(l)
                state.fim_phi[l] = (obs_phi if state.fim_phi[l] is None
                                    else (1.0 - options.fim_decay) * state.fim_phi[l]
                                    + options.fim_decay * obs_phi)
                params.phi[l] = tlasgr_update_matrix(
                    params.phi[l], aug.z_phi[l].astype(np.float64), cfg.eta,
                    state.fim_phi[l], eps_i, rho, rng)
            params.validate(tol=1e-9)
            if not np.isfinite(mtr["elbo"]):
                raise NumericError("objective estimate is not finite")
        except (NumericError, ParameterError) as err:
            raise NumericError(f"iteration {it}: {err}") from err

        state.step = it
        metrics_log.append({
            "iter": it,
            "elbo": mtr["elbo"],
            "recon_term": mtr["recon_term"],
            "kl_term": mtr["kl_term"],
            "label_term": mtr["label_term"],
            "wallclock_ms": (time.perf_counter() - t0) * 1000.0,
        })

    return TrainResult(cfg=cfg, params=params, enc=enc, w_sy=w_sy, state=state,
                       metrics=metrics_log, seed=options.seed, n_classes=n_classes)
