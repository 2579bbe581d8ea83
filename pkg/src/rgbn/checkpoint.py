"""Checkpoint container: config, global matrices, encoder, trainer state, seed.

A checkpoint is a pickled dict of plain arrays and scalars. The byte stream
is deterministic for identical contents, so seeded reruns can be compared
file-to-file.
"""

from __future__ import annotations

import pickle
from dataclasses import asdict

import numpy as np

from . import encoder as _encoder
from .exceptions import DatasetError
from .genmodel import GlobalParams, ModelConfig
from .trainer import Adam, TrainerState, TrainResult

_FORMAT = "rgbn-checkpoint-v1"


def save_checkpoint(path: str, result: TrainResult) -> None:
    enc = result.enc
    adam = result.state.adam or Adam()
    payload = {
        "format": _FORMAT,
        "config": asdict(result.cfg),
        "seed": result.seed,
        "n_classes": result.n_classes,
        "phi": [m.copy() for m in result.params.phi],
        "pi": [m.copy() for m in result.params.pi],
        "encoder": {name: arr.copy() for name, arr in enc.named()},
        "w_sy": None if result.w_sy is None else result.w_sy.copy(),
        "trainer": {
            "step": result.state.step,
            "rho": result.state.rho,
            "fim_pi": [None if f is None else np.asarray(f) for f in result.state.fim_pi],
            "fim_phi": [None if f is None else np.asarray(f) for f in result.state.fim_phi],
            "adam_t": adam.t,
            "adam_lr": adam.lr,
            "adam_m": dict(adam.m),
            "adam_v": dict(adam.v),
        },
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)


def load_checkpoint(path: str) -> TrainResult:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("format") != _FORMAT:
        raise DatasetError(f"{path}: not a checkpoint file")
    cfg = ModelConfig(**payload["config"])
    params = GlobalParams(payload["phi"], payload["pi"])
    blocks = payload["encoder"]
    enc = _encoder.EncoderParams(
        W_xh=[blocks[f"enc.{l}.W_xh"] for l in range(cfg.L)],
        W_hh=[blocks[f"enc.{l}.W_hh"] for l in range(cfg.L)],
        W_hk=[blocks[f"enc.{l}.W_hk"] for l in range(cfg.L)],
        W_hl=[blocks[f"enc.{l}.W_hl"] for l in range(cfg.L)],
        b1=[blocks[f"enc.{l}.b1"] for l in range(cfg.L)],
        b2=[blocks[f"enc.{l}.b2"] for l in range(cfg.L)],
        b3=[blocks[f"enc.{l}.b3"] for l in range(cfg.L)],
    )
    tr = payload["trainer"]
    adam = Adam(lr=tr["adam_lr"])
    adam.t = tr["adam_t"]
    adam.m = dict(tr["adam_m"])
    adam.v = dict(tr["adam_v"])
    state = TrainerState(step=tr["step"], fim_pi=list(tr["fim_pi"]),
                         fim_phi=list(tr["fim_phi"]), adam=adam, rho=tr["rho"])
    return TrainResult(cfg=cfg, params=params, enc=enc, w_sy=payload["w_sy"],
                       state=state, metrics=[], seed=payload["seed"],
                       n_classes=payload["n_classes"])
