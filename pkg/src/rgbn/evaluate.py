"""Fit and prediction metrics, classification scores, feature extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import classifier as _classifier
from . import encoder as _encoder
from . import genmodel
from .exceptions import ParameterError, ShapeError
from .genmodel import GlobalParams, ModelConfig
from .stats import RngStream


@dataclass
class RegressionReport:
    mse: float
    pmse: float


def mse_fit(recon: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared error over all entries of the reconstruction."""
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    return float(np.mean((recon - truth) ** 2))


def pmse_last(forecast: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared error of the one-step forecast at the held-out step."""
    return mse_fit(forecast, truth)


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeError("predictions and labels must align")
    if preds.size == 0:
        raise ParameterError("cannot score an empty prediction set")
    return float(np.mean(preds == labels))


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """Row-normalized confusion ratios; rows without true samples become NaN."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 1) or np.any(labels > n_classes) or np.any(preds < 1) or np.any(preds > n_classes):
        raise ParameterError(f"classes must lie in 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes))
    for y, p in zip(labels, preds):
        counts[y - 1, p - 1] += 1
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), np.nan)
    return out


def reconstruct(enc, params: GlobalParams, cfg: ModelConfig, x: np.ndarray,
                seed: int = 0) -> np.ndarray:
    """Posterior-sample reconstruction on the data scale (fixed noise seed)."""
    field = _encoder.encode_sequence(enc, cfg, x, RngStream(seed))
    scale = cfg.c if cfg.link == "prg" else cfg.mu
    return params.phi[0] @ field.s[0] / scale


def forecast_after(enc, params: GlobalParams, cfg: ModelConfig, x: np.ndarray,
                   seed: int = 0) -> np.ndarray:
    """One-step-ahead forecast from the last encoded step of a fitted sequence."""
    field = _encoder.encode_sequence(enc, cfg, x, RngStream(seed))
    states_last = [field.s[l][:, -1] for l in range(cfg.L)]
    return genmodel.forecast_next(params, cfg, states_last)


def extract_features(enc, cfg: ModelConfig, x_batch: np.ndarray, seed: int = 0,
                     mean: bool = False) -> np.ndarray:
    """Concatenated latent features for a batch of sequences.

    Uses a single fixed-seed posterior sample per sequence; with `mean` the
    Weibull mean replaces the sample at every node.
    """
    field = _encoder.encode_batch(enc, cfg, x_batch, RngStream(seed))
    if mean:
        field.s = [np.maximum(m, genmodel.STATE_FLOOR) for m in _encoder.mean_states(field)]
    return _classifier.concat_features_batch(field, cfg)


def classify(w_sy: np.ndarray, features: np.ndarray) -> np.ndarray:
    """1-based class predictions for rows of a feature matrix."""
    return np.argmax(features @ w_sy.T, axis=1) + 1


def nearest_centroid(train_features: np.ndarray, train_labels: np.ndarray,
                     test_features: np.ndarray) -> np.ndarray:
    """Assign each test row to the class with the closest training centroid."""
    classes = np.unique(train_labels)
    centroids = np.stack([
        train_features[train_labels == c].mean(axis=0) for c in classes
    ])
    d2 = ((test_features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return classes[np.argmin(d2, axis=1)]


def match_transition(estimate: np.ndarray, truth: np.ndarray):
    """Align factor labels between two transition matrices.

    Relabeling factors permutes rows and columns together; the permutation
    minimizing total L1 distance is searched exhaustively (fine for the
    small factor counts this is used with). Returns (aligned estimate,
    per-column L1 distances).
    """
    from itertools import permutations

    k = truth.shape[0]
    best = None
    for perm in permutations(range(k)):
        p = np.asarray(perm)
        candidate = estimate[np.ix_(p, p)]
        dist = np.abs(candidate - truth).sum()
        if best is None or dist < best[0]:
            best = (dist, candidate)
    aligned = best[1]
    return aligned, np.abs(aligned - truth).sum(axis=0)


def fit_report(enc, params: GlobalParams, cfg: ModelConfig, x_full: np.ndarray,
               seed: int = 0) -> RegressionReport:
    """Pinned single-sequence protocol: fit MSE on the first cfg.T steps and
    prediction MSE at the following step of the full sequence."""
    x_full = np.asarray(x_full, dtype=np.float64)
    if x_full.shape[1] < cfg.T + 1:
        raise ShapeError("need at least one held-out step beyond the training range")
    x_train = x_full[:, :cfg.T]
    recon = reconstruct(enc, params, cfg, x_train, seed=seed)
    forecast = forecast_after(enc, params, cfg, x_train, seed=seed)
    return RegressionReport(
        mse=mse_fit(recon, x_train),
        pmse=pmse_last(forecast, x_full[:, cfg.T]),
    )
