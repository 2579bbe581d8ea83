"""Recurrent Weibull variational encoder and its exact ELBO gradients.

A stack of tanh recurrences maps each observed sequence to per-layer,
per-step Weibull parameters; latent states are drawn once per node with the
inverse-CDF reparameterization. Gradients of the single-sample objective
are computed analytically (backpropagation through time), including the
paths through the analytic KL term's prior shape, which is built from the
sampled states of neighboring nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import classifier as _classifier
from . import stats
from .exceptions import NumericError, ShapeError
from .genmodel import STATE_CEIL, STATE_FLOOR, GlobalParams, ModelConfig
from .stats import RngStream


@dataclass
class EncoderParams:
    """Per-layer recurrent weights and the two Weibull-parameter heads."""

    W_xh: list   # (K_l, input width)
    W_hh: list   # (K_l, K_l)
    W_hk: list   # (K_l, K_l) shape head
    W_hl: list   # (K_l, K_l) scale head
    b1: list     # shape-head bias
    b2: list     # scale-head bias
    b3: list     # recurrence bias

    def named(self):
        """(name, array) pairs in a fixed order; the order pins Adam state keys."""
        for l in range(len(self.W_xh)):
            yield f"enc.{l}.W_xh", self.W_xh[l]
            yield f"enc.{l}.W_hh", self.W_hh[l]
            yield f"enc.{l}.W_hk", self.W_hk[l]
            yield f"enc.{l}.W_hl", self.W_hl[l]
            yield f"enc.{l}.b1", self.b1[l]
            yield f"enc.{l}.b2", self.b2[l]
            yield f"enc.{l}.b3", self.b3[l]

    def copy(self) -> "EncoderParams":
        return EncoderParams(*[[a.copy() for a in group] for group in
                               (self.W_xh, self.W_hh, self.W_hk, self.W_hl,
                                self.b1, self.b2, self.b3)])


@dataclass
class VariationalField:
    """Everything the forward sweep produced, kept for the backward pass.

    Arrays are batched: h, k, lam, eps, s_raw, s are lists over layers with
    shapes (M, K_l, T). `s` is floored at a tiny constant; `s_raw` is not.
    """

    h: list
    k: list
    lam: list
    eps: list
    s_raw: list
    s: list

    @property
    def batch(self) -> int:
        return self.h[0].shape[0]

    def squeeze(self) -> "VariationalField":
        """Single-sequence view with (K_l, T) arrays."""
        return VariationalField(*[[a[0] for a in group] for group in
                                  (self.h, self.k, self.lam, self.eps, self.s_raw, self.s)])


def init_encoder(cfg: ModelConfig, rng: RngStream) -> EncoderParams:
    """Gaussian(0, 0.1^2) weights, zero biases."""
    W_xh, W_hh, W_hk, W_hl, b1, b2, b3 = [], [], [], [], [], [], []
    for l in range(cfg.L):
        k = cfg.K[l]
        W_xh.append(rng.gen.normal(0.0, 0.1, size=(k, cfg.width(l))))
        W_hh.append(rng.gen.normal(0.0, 0.1, size=(k, k)))
        W_hk.append(rng.gen.normal(0.0, 0.1, size=(k, k)))
        W_hl.append(rng.gen.normal(0.0, 0.1, size=(k, k)))
        b1.append(np.zeros(k))
        b2.append(np.zeros(k))
        b3.append(np.zeros(k))
    return EncoderParams(W_xh, W_hh, W_hk, W_hl, b1, b2, b3)


def rnn_step(enc: EncoderParams, layer: int, inp: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One recurrence: tanh(W_xh @ input + W_hh @ h_prev + b3)."""
    inp = np.asarray(inp, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if inp.shape[-1] != enc.W_xh[layer].shape[1]:
        raise ShapeError(
            f"layer {layer} expects input width {enc.W_xh[layer].shape[1]}, got {inp.shape[-1]}"
        )
    if h_prev.shape[-1] != enc.W_hh[layer].shape[1]:
        raise ShapeError(f"h_prev width mismatch at layer {layer}")
    return np.tanh(inp @ enc.W_xh[layer].T + h_prev @ enc.W_hh[layer].T + enc.b3[layer])


def variational_heads(enc: EncoderParams, layer: int, h: np.ndarray):
    """Weibull (shape, scale) from a hidden state through softplus heads."""
    h = np.asarray(h, dtype=np.float64)
    k = stats.softplus(h @ enc.W_hk[layer].T + enc.b1[layer])
    lam = stats.softplus(h @ enc.W_hl[layer].T + enc.b2[layer])
    return k, lam


def draw_noise(cfg: ModelConfig, batch: int, rng: RngStream) -> list:
    """Uniform noise field, one clamped draw per (layer, step, element)."""
    return [stats.clamp_eps(rng.gen.random((batch, cfg.K[l], cfg.T))) for l in range(cfg.L)]


def _as_noise_field(cfg: ModelConfig, batch: int, noise) -> list:
    if isinstance(noise, RngStream):
        return draw_noise(cfg, batch, noise)
    field = [stats.clamp_eps(np.asarray(e, dtype=np.float64)) for e in noise]
    for l, e in enumerate(field):
        if e.shape != (batch, cfg.K[l], cfg.T):
            raise ShapeError(f"noise[{l}] has shape {e.shape}, expected {(batch, cfg.K[l], cfg.T)}")
    return field


def encode_batch(enc: EncoderParams, cfg: ModelConfig, x: np.ndarray, noise,
                 order: str = "layer") -> VariationalField:
    """Forward sweep over a batch (M, V, T) of raw real-valued sequences.

    `noise` is an RngStream or an explicit per-layer eps field; `order`
    selects the layer-major or time-major schedule (both are valid under the
    recurrence's dependency structure and produce the same field).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.V or x.shape[2] != cfg.T:
        raise ShapeError(f"batch must have shape (M, {cfg.V}, {cfg.T}), got {x.shape}")
    M = x.shape[0]
    eps = _as_noise_field(cfg, M, noise)

    h = [np.zeros((M, cfg.K[l], cfg.T)) for l in range(cfg.L)]
    if order == "layer":
        for l in range(cfg.L):
            h_prev = np.zeros((M, cfg.K[l]))
            for t in range(cfg.T):
                inp = x[:, :, t] if l == 0 else h[l - 1][:, :, t]
                h_now = rnn_step(enc, l, inp, h_prev)
                h[l][:, :, t] = h_now
                h_prev = h_now
    elif order == "time":
        for t in range(cfg.T):
            for l in range(cfg.L):
                inp = x[:, :, t] if l == 0 else h[l - 1][:, :, t]
                h_prev = h[l][:, :, t - 1] if t > 0 else np.zeros((M, cfg.K[l]))
                h[l][:, :, t] = rnn_step(enc, l, inp, h_prev)
    else:
        raise ValueError(f"unknown sweep order {order!r}")

    k, lam, s_raw, s = [], [], [], []
    for l in range(cfg.L):
        pre_k = np.einsum("ij,mjt->mit", enc.W_hk[l], h[l]) + enc.b1[l][None, :, None]
        pre_l = np.einsum("ij,mjt->mit", enc.W_hl[l], h[l]) + enc.b2[l][None, :, None]
        kl_ = stats.softplus(pre_k)
        la_ = stats.softplus(pre_l)
        w = -np.log1p(-eps[l])
        with np.errstate(over="ignore"):
            raw = la_ * w ** (1.0 / kl_)
        k.append(kl_)
        lam.append(la_)
        s_raw.append(raw)
        s.append(np.clip(raw, STATE_FLOOR, STATE_CEIL))
    return VariationalField(h, k, lam, eps, s_raw, s)


def encode_sequence(enc: EncoderParams, cfg: ModelConfig, x: np.ndarray, noise,
                    order: str = "layer") -> VariationalField:
    """Single-sequence convenience wrapper; arrays come back as (K_l, T)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(noise, RngStream):
        field = encode_batch(enc, cfg, x[None], noise, order=order)
    else:
        field = encode_batch(enc, cfg, x[None], [e[None] for e in noise], order=order)
    return field.squeeze()


def mean_states(field: VariationalField) -> list:
    """Variational mean lam * Gamma(1 + 1/k) per node instead of a sample."""
    return [f_lam * np.exp(special.gammaln(1.0 + 1.0 / f_k))
            for f_k, f_lam in zip(field.k, field.lam)]


def prior_shapes(params: GlobalParams, cfg: ModelConfig, field: VariationalField) -> list:
    """Gamma prior shape at every node, built from the sampled states.

    The top layer at t=0 uses the constant b; elsewhere the shape is b times
    the transition term plus, below the top, the loading term from above.
    """
    M = field.batch
    alpha = []
    for l in range(cfg.L):
        b = cfg.b[l]
        a = np.zeros((M, cfg.K[l], cfg.T))
        if l + 1 < cfg.L:
            a += np.einsum("ij,mjt->mit", params.phi[l + 1], field.s[l + 1])
        a[:, :, 1:] += np.einsum("ij,mjt->mit", params.pi[l], field.s[l][:, :, :-1])
        a *= b
        if l == cfg.L - 1:
            a[:, :, 0] = b
        alpha.append(a)
    return alpha


def _emission_terms(params: GlobalParams, cfg: ModelConfig, field: VariationalField,
                    x: np.ndarray, counts: Optional[np.ndarray]):
    """Per-element reconstruction log-likelihood and its gradient w.r.t. the rate."""
    m = np.einsum("vk,mkt->mvt", params.phi[0], field.s[0])
    if cfg.link == "prg":
        recon = stats.prg_logpdf(x, m, cfg.c)
        g_m = stats.prg_logpdf_drate(x, m, cfg.c)
    else:
        if counts is None:
            raise ShapeError("the Poisson link needs quantized counts")
        recon = stats.poisson_logpmf(counts, m)
        with np.errstate(divide="ignore", invalid="ignore"):
            g_m = np.where(m > 0, counts / np.where(m > 0, m, 1.0) - 1.0,
                           np.where(counts > 0, np.inf, -1.0))
    return recon.sum(axis=(1, 2)), g_m, m


def elbo_and_gradients(enc: EncoderParams, cfg: ModelConfig, params: GlobalParams,
                       x: np.ndarray, noise, counts: Optional[np.ndarray] = None,
                       w_sy: Optional[np.ndarray] = None, labels: Optional[np.ndarray] = None,
                       compute_grads: bool = True):
    """Single-sample ELBO of a batch and exact gradients of its batch mean.

    Returns (metrics, grads, field). metrics holds per-sequence means of the
    objective and its terms; grads maps parameter names to arrays and
    includes the classifier block when (w_sy, labels) are given. The label
    term makes the objective the supervised variant; gradients flow through
    the reparameterized samples, the analytic KL (including its prior shape,
    which depends on neighboring samples), the emission term, and the
    recurrent sweep.
    """
    x = np.asarray(x, dtype=np.float64)
    field = encode_batch(enc, cfg, x, noise)
    M = field.batch
    supervised = w_sy is not None
    if supervised and labels is None:
        raise ShapeError("labels are required for the supervised objective")

    alpha = prior_shapes(params, cfg, field)
    recon, g_m, _ = _emission_terms(params, cfg, field, x, counts)

    kl_total = np.zeros(M)
    dk_list, dlam_list, dalpha_list = [], [], []
    for l in range(cfg.L):
        kl_node = stats.kl_weibull_gamma_fields(field.k[l], field.lam[l], alpha[l], cfg.b[l])
        kl_total += kl_node.sum(axis=(1, 2))
        if compute_grads:
            dk, dlam, dalpha = stats.kl_weibull_gamma_grads(field.k[l], field.lam[l], alpha[l], cfg.b[l])
            dk_list.append(dk)
            dlam_list.append(dlam)
            dalpha_list.append(dalpha)

    label_ll = np.zeros(M)
    gS = None
    gW_sy = None
    if supervised:
        S = _classifier.concat_features_batch(field, cfg)
        label_ll, gW_sy_loss, gS_loss = _classifier.batch_label_gradients(w_sy, S, labels)
        gS = -gS_loss        # loss gradients -> objective gradients
        gW_sy = -gW_sy_loss

    metrics = {
        "elbo": float(np.mean(recon - kl_total + label_ll)),
        "recon_term": float(np.mean(recon)),
        "kl_term": float(np.mean(kl_total)),
        "label_term": float(np.mean(label_ll)),
    }
    if not compute_grads:
        return metrics, None, field

    # gradient w.r.t. each sampled state: emission, prior shapes, label term
    g_s = [np.zeros_like(field.s[l]) for l in range(cfg.L)]
    g_s[0] += np.einsum("mvt,vk->mkt", g_m, params.phi[0])
    for l in range(cfg.L):
        if l + 1 < cfg.L:
            g_s[l + 1] += cfg.b[l] * np.einsum("mjt,jk->mkt", -dalpha_list[l], params.phi[l + 1])
        g_s[l][:, :, :-1] += cfg.b[l] * np.einsum("mjt,jk->mkt", -dalpha_list[l][:, :, 1:], params.pi[l])
    if supervised:
        offset = 0
        for l in range(cfg.L):
            block = gS[:, offset:offset + cfg.K[l] * cfg.T]
            g_s[l] += block.reshape(M, cfg.T, cfg.K[l]).transpose(0, 2, 1)
            offset += cfg.K[l] * cfg.T

    grads = {}
    g_h_heads = []
    for l in range(cfg.L):
        clipped = (field.s_raw[l] < STATE_FLOOR) | (field.s_raw[l] > STATE_CEIL)
        g_eff = np.where(clipped, 0.0, g_s[l])
        w = -np.log1p(-field.eps[l])
        # the clipped sample keeps these products finite; g_eff is 0 there
        k_l, lam_l, s_l = field.k[l], field.lam[l], field.s[l]
        g_lam = g_eff * (s_l / np.maximum(lam_l, 1e-300)) - dlam_list[l]
        inv_k2 = 1.0 / np.maximum(k_l, 1e-30) ** 2
        g_k = g_eff * s_l * np.log(w) * -inv_k2 - dk_list[l]
        # softplus'(pre) recovered from the head value: sigmoid(pre) = 1 - e^{-softplus(pre)}
        g_pre_k = g_k * (-np.expm1(-k_l))
        g_pre_l = g_lam * (-np.expm1(-lam_l))
        grads[f"enc.{l}.W_hk"] = np.einsum("mkt,mjt->kj", g_pre_k, field.h[l])
        grads[f"enc.{l}.W_hl"] = np.einsum("mkt,mjt->kj", g_pre_l, field.h[l])
        grads[f"enc.{l}.b1"] = g_pre_k.sum(axis=(0, 2))
        grads[f"enc.{l}.b2"] = g_pre_l.sum(axis=(0, 2))
        g_h_heads.append(np.einsum("mkt,kj->mjt", g_pre_k, enc.W_hk[l])
                         + np.einsum("mkt,kj->mjt", g_pre_l, enc.W_hl[l]))

    # backpropagation through time, top layer first so the upward path is ready
    delta = [np.zeros_like(field.h[l]) for l in range(cfg.L)]
    for l in range(cfg.L - 1, -1, -1):
        gW_xh = np.zeros_like(enc.W_xh[l])
        gW_hh = np.zeros_like(enc.W_hh[l])
        gb3 = np.zeros_like(enc.b3[l])
        for t in range(cfg.T - 1, -1, -1):
            g_h = g_h_heads[l][:, :, t].copy()
            if t + 1 < cfg.T:
                g_h += delta[l][:, :, t + 1] @ enc.W_hh[l]
            if l + 1 < cfg.L:
                g_h += delta[l + 1][:, :, t] @ enc.W_xh[l + 1]
            d = g_h * (1.0 - field.h[l][:, :, t] ** 2)
            delta[l][:, :, t] = d
            inp = x[:, :, t] if l == 0 else field.h[l - 1][:, :, t]
            gW_xh += d.T @ inp
            if t > 0:
                gW_hh += d.T @ field.h[l][:, :, t - 1]
            gb3 += d.sum(axis=0)
        grads[f"enc.{l}.W_xh"] = gW_xh
        grads[f"enc.{l}.W_hh"] = gW_hh
        grads[f"enc.{l}.b3"] = gb3

    if supervised:
        grads["cls.W_sy"] = gW_sy

    inv_m = 1.0 / M
    for name in grads:
        grads[name] = grads[name] * inv_m
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in parameter block {name}")
    return metrics, grads, field


def encoder_gradients(enc: EncoderParams, cfg: ModelConfig, params: GlobalParams,
                      x: np.ndarray, noise, counts: Optional[np.ndarray] = None,
                      w_sy: Optional[np.ndarray] = None, labels: Optional[np.ndarray] = None):
    """Gradients of the batch-mean objective w.r.t. every encoder block."""
    _, grads, _ = elbo_and_gradients(enc, cfg, params, x, noise, counts=counts,
                                     w_sy=w_sy, labels=labels)
    return grads


def elbo_value(enc: EncoderParams, cfg: ModelConfig, params: GlobalParams,
               x: np.ndarray, noise, counts: Optional[np.ndarray] = None,
               w_sy: Optional[np.ndarray] = None, labels: Optional[np.ndarray] = None) -> float:
    """Batch-mean single-sample objective for a fixed noise field."""
    metrics, _, _ = elbo_and_gradients(enc, cfg, params, x, noise, counts=counts,
                                       w_sy=w_sy, labels=labels, compute_grads=False)
    return metrics["elbo"]
