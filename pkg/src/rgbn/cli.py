"""Command-line front end: data generation, training, evaluation, export.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config
error. RGBN_LOG={error,info,debug} controls verbosity. Every artifact goes
under the directory given by --out.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as _checkpoint
from . import datagen, evaluate, genmodel, trainer
from .exceptions import ConfigError, DatasetError, RgbnError
from .genmodel import ModelConfig
from .stats import RngStream

log = logging.getLogger("rgbn")

_MODEL_KEYS = {
    "v": int, "t": int, "k": "int_list", "eta": float, "nu": float,
    "b": "float_list", "c": float, "mu": float, "link": str,
}
_TRAIN_KEYS = {
    "supervised": "bool", "epochs": int, "batch": int, "seed": int,
    "lr": float, "eps0": float, "kappa": float, "fim_decay": float,
    "threads": int,
}
_IO_KEYS = {"window_v": int, "window_o": int}
_ALL_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_IO_KEYS}


def parse_config(path: str) -> dict:
    """Line-oriented key=value file with # comments; unknown keys are fatal."""
    out: dict = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {ln}: expected key=value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            value = value.strip()
            if key not in _ALL_KEYS:
                raise ConfigError(f"{path} line {ln}: unknown key {key!r}")
            kind = _ALL_KEYS[key]
            try:
                if kind == "int_list":
                    out[key] = [int(v) for v in value.split(",") if v.strip()]
                elif kind == "float_list":
                    out[key] = [float(v) for v in value.split(",") if v.strip()]
                elif kind == "bool":
                    if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(f"not a boolean: {value!r}")
                    out[key] = value.lower() in ("true", "1", "yes")
                else:
                    out[key] = kind(value)
            except ValueError as err:
                raise ConfigError(f"{path} line {ln}: {err}") from err
    return out


def _model_config(conf: dict, link_override=None) -> ModelConfig:
    for required in ("v", "t", "k"):
        if required not in conf:
            raise ConfigError(f"config is missing required key {required!r}")
    return ModelConfig(
        K=tuple(conf["k"]),
        V=conf["v"],
        T=conf["t"],
        eta=conf.get("eta", 0.1),
        nu=conf.get("nu", 0.1),
        b=tuple(conf.get("b", [1.0])),
        c=conf.get("c", 200.0),
        mu=conf.get("mu", 100.0),
        link=link_override or conf.get("link", "prg"),
    )


def _train_options(conf: dict, args) -> trainer.TrainOptions:
    opts = trainer.TrainOptions(
        supervised=bool(conf.get("supervised", False)) or args.supervised,
        epochs=conf.get("epochs", 1),
        batch=conf.get("batch", 100),
        seed=args.seed if args.seed is not None else conf.get("seed", 0),
        lr=conf.get("lr", 1e-4),
        eps0=conf.get("eps0", 0.1),
        kappa=conf.get("kappa", 0.7),
        fim_decay=conf.get("fim_decay", 0.9),
        threads=args.threads if args.threads is not None else conf.get("threads", 1),
    )
    if opts.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {opts.threads}")
    if opts.epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {opts.epochs}")
    return opts


def _load_data(path: str, conf: dict) -> datagen.Dataset:
    return datagen.load_dataset(path, window_v=conf.get("window_v"),
                                window_o=conf.get("window_o"))


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def cmd_gen_toy(args) -> int:
    rng = RngStream(args.seed)
    ds, truth = datagen.gen_toy(args.which, rng)
    datagen.save_dataset(ds, args.out)
    log.info("wrote %s", args.out)
    if truth is not None:
        sidecar = str(args.out) + ".truth.pkl"
        datagen.save_toy_truth(truth, sidecar)
        log.info("wrote %s", sidecar)
    return 0


def cmd_train(args) -> int:
    conf = parse_config(args.config)
    cfg = _model_config(conf, link_override=args.link)
    opts = _train_options(conf, args)
    data = _load_data(args.data, conf)
    shape = data.sequences[0].x.shape if data.sequences else None
    if shape != (cfg.V, cfg.T):
        raise ConfigError(f"data shape {shape} does not match config ({cfg.V}, {cfg.T})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = trainer.train(cfg, data, opts)
    _checkpoint.save_checkpoint(out / "checkpoint.pkl", result)
    _write_csv(out / "metrics.csv",
               ["iter", "elbo", "recon_term", "kl_term", "label_term", "wallclock_ms"],
               [[row["iter"], _fmt(row["elbo"]), _fmt(row["recon_term"]),
                 _fmt(row["kl_term"]), _fmt(row["label_term"]),
                 _fmt(row["wallclock_ms"])] for row in result.metrics])
    log.info("trained %d iterations", len(result.metrics))
    return 0


def _metric_row(args, result, mse=None, pmse=None, acc=None) -> list:
    model = "s-rgbn" if result.w_sy is not None else "rgbn"
    layers = "-".join(str(k) for k in result.cfg.K)
    return [os.path.basename(args.data), model, result.cfg.link, layers,
            _fmt(mse), _fmt(pmse), _fmt(acc)]


def cmd_eval(args) -> int:
    result = _checkpoint.load_checkpoint(args.checkpoint)
    cfg = result.cfg
    data = datagen.load_dataset(args.data, window_v=None, window_o=None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mse = pmse = acc = None

    if args.task == "fit":
        rows = []
        errors = []
        for i, seq in enumerate(data.sequences, start=1):
            x = seq.x[:, :cfg.T]
            if x.shape != (cfg.V, cfg.T):
                raise ConfigError(f"sequence {i} shape {seq.x.shape} too small for config")
            recon = evaluate.reconstruct(result.enc, result.params, cfg, x, seed=args.seed)
            errors.append(evaluate.mse_fit(recon, x))
            for v in range(cfg.V):
                for t in range(cfg.T):
                    rows.append([i, v + 1, t + 1, _fmt(x[v, t]), _fmt(recon[v, t])])
        _write_csv(out / "reconstruction.csv", ["seq", "v", "t", "truth", "recon"], rows)
        mse = float(np.mean(errors))
    elif args.task == "forecast":
        errors = []
        for i, seq in enumerate(data.sequences, start=1):
            if seq.x.shape[1] < cfg.T + 1:
                raise ConfigError("forecast needs one step beyond the training range")
            report = evaluate.fit_report(result.enc, result.params, cfg, seq.x, seed=args.seed)
            errors.append(report.pmse)
        pmse = float(np.mean(errors))
    elif args.task == "classify":
        if result.w_sy is None:
            raise ConfigError("checkpoint has no classifier head; train with --supervised")
        x = np.stack([s.x for s in data.sequences])
        feats = evaluate.extract_features(result.enc, cfg, x, seed=args.seed,
                                          mean=args.mean_features)
        preds = evaluate.classify(result.w_sy, feats)
        _write_csv(out / "predictions.csv", ["seq", "pred"],
                   [[i + 1, int(p)] for i, p in enumerate(preds)])
        labels = data.labels
        if labels is not None:
            acc = evaluate.accuracy(preds, labels)
            n_classes = result.n_classes or int(labels.max())
            conf = evaluate.confusion(preds, labels, n_classes)
            _write_csv(out / "confusion.csv",
                       [f"pred_{c}" for c in range(1, n_classes + 1)],
                       [[_fmt(v) for v in row] for row in conf])
    _write_csv(out / "metrics.csv",
               ["dataset", "model", "link", "layers", "mse", "pmse", "accuracy"],
               [_metric_row(args, result, mse, pmse, acc)])
    return 0


def cmd_export(args) -> int:
    result = _checkpoint.load_checkpoint(args.checkpoint)
    cfg = result.cfg
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "neurons":
        rows = []
        for l in range(cfg.L):
            for k in range(cfg.K[l]):
                vec = genmodel.project_neuron(result.params, l, k)
                rows.append([l + 1, k + 1] + [_fmt(v) for v in vec])
        _write_csv(out / "neurons.csv",
                   ["layer", "factor"] + [f"v_{i}" for i in range(1, cfg.V + 1)], rows)
    elif args.what == "transition":
        for l in range(cfg.L):
            _write_csv(out / f"transition_l{l + 1}.csv",
                       [f"from_{k}" for k in range(1, cfg.K[l] + 1)],
                       [[_fmt(v) for v in row] for row in result.params.pi[l]])
    elif args.what == "features":
        if not args.data:
            raise ConfigError("features export needs --data")
        data = datagen.load_dataset(args.data)
        x = np.stack([s.x for s in data.sequences])
        feats = evaluate.extract_features(result.enc, cfg, x, seed=args.seed,
                                          mean=args.mean_features)
        _write_csv(out / "features.csv",
                   [f"f_{i}" for i in range(1, feats.shape[1] + 1)],
                   [[_fmt(v) for v in row] for row in feats])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write a synthetic benchmark dataset")
    p.add_argument("--which", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train", help="train a model from a config and dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--supervised", action="store_true")
    p.add_argument("--link", choices=genmodel.LINKS)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=("fit", "forecast", "classify"), default="fit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-features", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export learned structure as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", choices=("neurons", "features", "transition"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-features", action="store_true")
    p.set_defaults(func=cmd_export)
    return parser


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("RGBN_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except RgbnError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
