"""Synthetic benchmark generators, the windowing transform, and dataset I/O."""

from __future__ import annotations

import csv
import pickle
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import genmodel, stats
from .exceptions import ConfigError, DatasetError
from .genmodel import GlobalParams, ModelConfig, Sequence
from .stats import RngStream

TOY1_PI = np.array([[0.65, 0.20], [0.35, 0.80]])
TOY1_S1 = np.array([100.0, 0.0])


@dataclass
class Dataset:
    """Uniform-shape sequences, optionally labeled (labels are 1..C)."""

    sequences: list
    n_classes: Optional[int] = None
    provenance: str = "external"

    def __post_init__(self):
        if self.sequences:
            shape = self.sequences[0].x.shape
            for i, s in enumerate(self.sequences):
                if s.x.shape != shape:
                    raise DatasetError(f"sequence {i} has shape {s.x.shape}, expected {shape}")
        if self.n_classes is not None:
            for i, s in enumerate(self.sequences):
                if s.label is not None and not 1 <= s.label <= self.n_classes:
                    raise DatasetError(f"sequence {i} label {s.label} outside 1..{self.n_classes}")

    @property
    def labels(self) -> Optional[np.ndarray]:
        raw = [s.label for s in self.sequences]
        if any(lbl is None for lbl in raw):
            return None
        return np.asarray(raw, dtype=np.int64)


@dataclass
class ToyTruth:
    """Ground truth behind a generated chain benchmark."""

    pi: np.ndarray
    phi: np.ndarray
    states: list  # one (2, T) array per sequence


def window(raw: np.ndarray, v: int, o: int) -> np.ndarray:
    """Slice a profile into overlapping columns.

    Column t covers raw[(v-o)*t : (v-o)*t + v] (0-based), giving
    T = floor((D-o)/(v-o)) columns that share o entries with each neighbor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ConfigError("window expects a one-dimensional profile")
    d = raw.size
    if not 0 <= o < v <= d:
        raise ConfigError(f"need 0 <= overlap < window <= length, got V={v}, O={o}, D={d}")
    stride = v - o
    t_count = (d - o) // stride
    out = np.empty((v, t_count))
    for t in range(t_count):
        out[:, t] = raw[stride * t: stride * t + v]
    return out


def gen_toy1_dataset(n_sequences: int, rng: RngStream) -> tuple:
    """Stochastic two-factor chain benchmark: n sequences over one ground truth.

    The loading matrix is drawn once (uniform Dirichlet columns); every
    sequence starts from the same initial state and evolves with unit-rate
    gamma transitions, emitting through the real-valued link with scale 1.
    """
    phi = np.column_stack([
        stats.dirichlet_sample(np.ones(3), rng) for _ in range(2)
    ])
    t_len = 100
    n = int(n_sequences)
    s = np.zeros((n, 2, t_len))
    s[:, :, 0] = TOY1_S1
    for t in range(1, t_len):
        shape = s[:, :, t - 1] @ TOY1_PI.T
        s[:, :, t] = stats.gamma_unit_sample(shape, rng, zero_shape_zero=True)
    r = rng.gen.poisson(np.einsum("vk,nkt->nvt", phi, s))
    x = stats.gamma_unit_sample(r.astype(np.float64), rng, zero_shape_zero=True)
    sequences = [Sequence(x=x[i]) for i in range(n)]
    ds = Dataset(sequences, provenance="toy1")
    return ds, ToyTruth(pi=TOY1_PI.copy(), phi=phi, states=[s[i] for i in range(n)])


def gen_toy1(rng: RngStream) -> tuple:
    """One benchmark sequence plus its ground-truth transition, loading, states."""
    ds, truth = gen_toy1_dataset(1, rng)
    return ds.sequences[0], truth


def gen_toy2() -> Sequence:
    """Deterministic ramp / decaying-bump / fast-oscillation benchmark."""
    t = np.arange(1, 101, dtype=np.float64)
    x = np.vstack([
        t,
        2.0 * np.exp(-t / 15.0) + np.exp(-(((t - 25.0) / 10.0) ** 2)),
        5.0 * np.sin(t * t) + 6.0,
    ])
    return Sequence(x=x)


def gen_toy3() -> Sequence:
    """Deterministic piecewise benchmark with modulo structure and a jump at t=50."""
    t = np.arange(1, 101, dtype=np.float64)
    lo = t <= 50
    x1 = np.where(lo, t, 2.0 * t + 30.0)
    x2 = np.where(lo, 2.0 * np.mod(t, 3.0), 3.0 * np.mod(t, 2.0) + 5.0)
    x3 = np.where(lo, 20.0 * np.exp(-t / 3.0), 30.0 * t * np.exp(-t) + 10.0)
    return Sequence(x=np.vstack([x1, x2, x3]))


def gen_toy(which: int, rng: Optional[RngStream] = None) -> tuple:
    """Dispatch by benchmark number; returns (Dataset, truth-or-None)."""
    if which == 1:
        if rng is None:
            raise ConfigError("benchmark 1 is stochastic and needs a seed")
        ds, truth = gen_toy1_dataset(1, rng)
        return ds, truth
    if which == 2:
        return Dataset([gen_toy2()], provenance="toy2"), None
    if which == 3:
        return Dataset([gen_toy3()], provenance="toy3"), None
    raise ConfigError(f"unknown benchmark {which}, expected 1, 2, or 3")


def gen_synth_classes(n_classes: int, per_class: int, cfg: ModelConfig,
                      rng: RngStream) -> tuple:
    """Labeled synthetic benchmark: one random generative model per class.

    Each class draws its own loading and transition matrices from the
    config's Dirichlet priors, then emits `per_class` sequences by ancestral
    sampling. Returns the dataset and the class ground-truth parameter list.
    """
    if n_classes < 1:
        raise ConfigError(f"need at least one class, got {n_classes}")
    sequences = []
    truths = []
    for c in range(1, n_classes + 1):
        params = genmodel.init_params(cfg, rng)
        truths.append(params)
        for _ in range(per_class):
            sequences.append(genmodel.generate_sequence(params, cfg, rng, label=c))
    return Dataset(sequences, n_classes=n_classes, provenance="synth-class"), truths


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

_LONG_HEADER = ["label", "v", "t", "value"]
_LONG_MULTI_HEADER = ["label", "seq", "v", "t", "value"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset; `.npz`-suffixed paths get the exact binary container.

    Text mode uses the long CSV layout (one value per row, 1-based indices,
    17 significant digits); multi-sequence datasets add a `seq` column.
    """
    if str(path).endswith(".npz"):
        x = np.stack([s.x for s in dataset.sequences])
        labels = np.asarray([-1 if s.label is None else s.label for s in dataset.sequences])
        payload = {"x": x, "labels": labels, "provenance": dataset.provenance,
                   "n_classes": -1 if dataset.n_classes is None else dataset.n_classes}
        if all(s.counts is not None for s in dataset.sequences):
            payload["counts"] = np.stack([s.counts for s in dataset.sequences])
            payload["mu"] = np.asarray([s.mu or 0.0 for s in dataset.sequences])
        np.savez(path, **payload)
        return
    multi = len(dataset.sequences) > 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LONG_MULTI_HEADER if multi else _LONG_HEADER)
        for i, seq in enumerate(dataset.sequences, start=1):
            label = "" if seq.label is None else str(seq.label)
            v_dim, t_dim = seq.x.shape
            for vi in range(v_dim):
                for ti in range(t_dim):
                    row = [label, vi + 1, ti + 1, _fmt(seq.x[vi, ti])]
                    if multi:
                        row.insert(1, i)
                    writer.writerow(row)


def save_profiles(profiles: np.ndarray, labels, path: str) -> None:
    """Write raw pre-windowing profiles in the wide CSV layout."""
    profiles = np.asarray(profiles, dtype=np.float64)
    d = profiles.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x_{i}" for i in range(1, d + 1)])
        for row, label in zip(profiles, labels):
            writer.writerow(["" if label is None else str(label)] + [_fmt(v) for v in row])


def _parse_label(text: str, where: str) -> Optional[int]:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError as err:
        raise DatasetError(f"{where}: label {text!r} is not an integer") from err


def _load_long(rows, header, path):
    multi = header == _LONG_MULTI_HEADER
    cells: dict = {}
    labels: dict = {}
    for ln, row in rows:
        if len(row) != len(header):
            raise DatasetError(f"{path} line {ln}: expected {len(header)} columns, got {len(row)}")
        try:
            if multi:
                label, seq_id, vi, ti, val = row
                seq_id = int(seq_id)
            else:
                label, vi, ti, val = row
                seq_id = 1
            vi, ti = int(vi), int(ti)
            value = float(val)
        except ValueError as err:
            raise DatasetError(f"{path} line {ln}: {err}") from err
        cells.setdefault(seq_id, {})[(vi, ti)] = value
        labels[seq_id] = _parse_label(label, f"{path} line {ln}")
    sequences = []
    for seq_id in sorted(cells):
        grid = cells[seq_id]
        v_max = max(k[0] for k in grid)
        t_max = max(k[1] for k in grid)
        if len(grid) != v_max * t_max:
            raise DatasetError(f"{path}: sequence {seq_id} is missing cells")
        x = np.zeros((v_max, t_max))
        for (vi, ti), value in grid.items():
            x[vi - 1, ti - 1] = value
        sequences.append(Sequence(x=x, label=labels[seq_id]))
    return sequences


def load_dataset(path: str, window_v: Optional[int] = None,
                 window_o: Optional[int] = None) -> Dataset:
    """Read a dataset file, sniffing the layout from its header.

    Wide-format rows are raw profiles and need (window_v, window_o) to be
    turned into sequences. `.npz` paths restore the binary container.
    """
    if str(path).endswith(".npz"):
        with np.load(path, allow_pickle=False) as z:
            x = z["x"]
            labels = z["labels"]
            counts = z["counts"] if "counts" in z else None
            mu = z["mu"] if "mu" in z else None
            n_classes = int(z["n_classes"])
            sequences = []
            for i in range(x.shape[0]):
                sequences.append(Sequence(
                    x=x[i],
                    counts=None if counts is None else counts[i],
                    label=None if labels[i] < 0 else int(labels[i]),
                    mu=None if mu is None else (float(mu[i]) or None),
                ))
            return Dataset(sequences, n_classes=None if n_classes < 0 else n_classes,
                           provenance=str(z["provenance"]))

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty dataset file") from None
        header = [h.strip() for h in header]
        rows = [(ln, row) for ln, row in enumerate(reader, start=2) if row]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    if header in (_LONG_HEADER, _LONG_MULTI_HEADER):
        return Dataset(_load_long(rows, header, path))
    if header[0] == "label" and len(header) > 1 and header[1].startswith("x_"):
        if window_v is None or window_o is None:
            raise ConfigError(
                "wide-format profiles need window parameters (window_v, window_o)")
        sequences = []
        for ln, row in rows:
            if len(row) != len(header):
                raise DatasetError(f"{path} line {ln}: expected {len(header)} columns, got {len(row)}")
            label = _parse_label(row[0], f"{path} line {ln}")
            try:
                raw = np.asarray([float(v) for v in row[1:]])
            except ValueError as err:
                raise DatasetError(f"{path} line {ln}: {err}") from err
            sequences.append(Sequence(x=window(raw, window_v, window_o), label=label))
        return Dataset(sequences)
    raise DatasetError(f"{path}: unrecognized header {header!r}")


def save_toy_truth(truth: ToyTruth, path: str) -> None:
    """Deterministic sidecar with the generator's transition, loading, states."""
    with open(path, "wb") as fh:
        pickle.dump({"pi": truth.pi, "phi": truth.phi, "states": truth.states},
                    fh, protocol=4)


def load_toy_truth(path: str) -> ToyTruth:
    with open(path, "rb") as fh:
        d = pickle.load(fh)
    return ToyTruth(pi=d["pi"], phi=d["phi"], states=d["states"])
