"""Supervised head: feature concatenation, softmax likelihood, prediction.

Class labels are 1-based throughout (1..C), matching the dataset format.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ParameterError, ShapeError
from .stats import RngStream


def init_classifier(n_classes: int, feature_dim: int, rng: RngStream) -> np.ndarray:
    """Weight matrix W_sy ~ Normal(0, 0.1^2), one row per class."""
    if n_classes < 1:
        raise ParameterError(f"need at least one class, got {n_classes}")
    return rng.gen.normal(0.0, 0.1, size=(n_classes, feature_dim))


def feature_dim(cfg) -> int:
    """Length of the concatenated feature vector: T * sum of layer widths."""
    return cfg.T * sum(cfg.K)


def concat_features_batch(field, cfg) -> np.ndarray:
    """Stack sampled states as [(s_1..s_T) layer 1, ..., (s_1..s_T) layer L].

    Within each layer's block the steps appear in time order, each step
    contributing its K_l state entries.
    """
    M = field.batch
    blocks = []
    for l in range(cfg.L):
        s = field.s[l]
        if s.shape[1] != cfg.K[l] or s.shape[2] != cfg.T:
            raise ShapeError(f"field layer {l} has shape {s.shape[1:]}, expected {(cfg.K[l], cfg.T)}")
        blocks.append(s.transpose(0, 2, 1).reshape(M, cfg.T * cfg.K[l]))
    return np.concatenate(blocks, axis=1)


def concat_features(field, cfg) -> np.ndarray:
    """Feature vector of a single-sequence field (arrays shaped (K_l, T))."""
    blocks = []
    for l in range(cfg.L):
        s = field.s[l]
        if s.shape != (cfg.K[l], cfg.T):
            raise ShapeError(f"field layer {l} has shape {s.shape}, expected {(cfg.K[l], cfg.T)}")
        blocks.append(s.T.reshape(-1))
    return np.concatenate(blocks)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def label_log_likelihood(w_sy: np.ndarray, s_vec: np.ndarray, y: int) -> float:
    """Log-probability of class y (1-based) under softmax(W_sy @ S)."""
    C = w_sy.shape[0]
    if not 1 <= y <= C:
        raise ParameterError(f"label {y} outside 1..{C}")
    logp = _log_softmax(w_sy @ s_vec)
    return float(logp[y - 1])


def predict(w_sy: np.ndarray, s_vec: np.ndarray) -> int:
    """Most probable class (1-based); ties break toward the lowest index."""
    return int(np.argmax(w_sy @ s_vec)) + 1


def classifier_gradient(w_sy: np.ndarray, s_vec: np.ndarray, y: int):
    """Softmax cross-entropy gradients: d(-log p_y)/dW and d(-log p_y)/dS."""
    C = w_sy.shape[0]
    if not 1 <= y <= C:
        raise ParameterError(f"label {y} outside 1..{C}")
    p = softmax(w_sy @ s_vec)
    p[y - 1] -= 1.0
    return np.outer(p, s_vec), w_sy.T @ p


def batch_label_gradients(w_sy: np.ndarray, S: np.ndarray, labels: np.ndarray):
    """Per-element label log-likelihoods and summed loss gradients.

    Returns (loglik (M,), dLoss/dW summed over the batch, dLoss/dS (M, D)).
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = w_sy.shape[0]
    if np.any(labels < 1) or np.any(labels > C):
        raise ParameterError(f"labels must lie in 1..{C}")
    logits = S @ w_sy.T
    logp = _log_softmax(logits)
    idx = labels - 1
    ll = logp[np.arange(S.shape[0]), idx]
    resid = np.exp(logp)
    resid[np.arange(S.shape[0]), idx] -= 1.0
    return ll, resid.T @ S, resid @ w_sy
