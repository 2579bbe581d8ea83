"""Benchmark generators, windowing, and dataset round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from rgbn import datagen, genmodel
from rgbn.exceptions import ConfigError, DatasetError
from rgbn.genmodel import ModelConfig, Sequence
from rgbn.stats import RngStream


def test_window_paper_dimensions():
    out = datagen.window(np.arange(256, dtype=float), 30, 15)
    assert out.shape == (30, 16)


def test_window_degenerate_single_column():
    raw = np.arange(12, dtype=float)
    out = datagen.window(raw, 12, 0)
    assert out.shape == (12, 1)
    assert np.array_equal(out[:, 0], raw)


def test_window_start_indices():
    raw = np.arange(1, 11, dtype=float)  # 1..10 so values equal 1-based indices
    out = datagen.window(raw, 4, 2)
    assert out.shape == (4, 4)
    assert np.array_equal(out[0, :], [1, 3, 5, 7])


def test_window_errors():
    with pytest.raises(ConfigError):
        datagen.window(np.arange(5.0), 6, 0)
    with pytest.raises(ConfigError):
        datagen.window(np.arange(5.0), 3, 3)


@settings(max_examples=60, deadline=None)
@given(d=hs.integers(min_value=2, max_value=200), v=hs.integers(min_value=1, max_value=200),
       o=hs.integers(min_value=0, max_value=199), seed=hs.integers(min_value=0, max_value=100))
def test_window_overlap_sharing(d, v, o, seed):
    if not 0 <= o < v <= d:
        return
    raw = RngStream(seed).gen.random(d)
    out = datagen.window(raw, v, o)
    t_count = (d - o) // (v - o)
    assert out.shape == (v, t_count)
    if o > 0:
        for t in range(t_count - 1):
            assert np.array_equal(out[-o:, t], out[:o, t + 1])


def test_toy1_ground_truth_values():
    seq, truth = datagen.gen_toy1(RngStream(0))
    assert np.allclose(truth.pi.sum(axis=0), 1.0)
    assert np.array_equal(truth.pi, [[0.65, 0.20], [0.35, 0.80]])
    assert np.array_equal(truth.states[0][:, 0], [100.0, 0.0])
    assert np.allclose(truth.phi.sum(axis=0), 1.0, atol=1e-12)
    assert seq.x.shape == (3, 100)


def test_toy1_transition_mean_oracle():
    # E[s_2] = pi @ (100, 0) = (65, 35); Monte Carlo over fresh sequences
    rng = RngStream(1)
    ds, truth = datagen.gen_toy1_dataset(10**4, rng)
    second = np.stack([s[:, 1] for s in truth.states])
    assert np.all(np.abs(second.mean(axis=0) - [65.0, 35.0]) < 1.0)


def test_toy1_deterministic_given_seed():
    a, ta = datagen.gen_toy1(RngStream(7))
    b, tb = datagen.gen_toy1(RngStream(7))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(ta.phi, tb.phi)
    assert np.array_equal(ta.states[0], tb.states[0])


def test_toy2_values():
    seq = datagen.gen_toy2()
    assert seq.x.shape == (3, 100)
    assert seq.x[0, 6] == 7.0  # first coordinate is the raw index
    t = 25.0
    assert seq.x[1, 24] == pytest.approx(2.0 * np.exp(-t / 15.0) + 1.0, abs=1e-12)
    assert np.all(seq.x[2] >= 1.0) and np.all(seq.x[2] <= 11.0)
    assert np.array_equal(seq.x, datagen.gen_toy2().x)


def test_toy3_values():
    seq = datagen.gen_toy3()
    assert np.array_equal(seq.x[:, 5], [6.0, 0.0, 20.0 * np.exp(-2.0)])
    expected_51 = [132.0, 8.0, 30.0 * 51.0 * np.exp(-51.0) + 10.0]
    assert np.allclose(seq.x[:, 50], expected_51, rtol=1e-12)
    assert seq.x[2, 50] == pytest.approx(10.0, abs=1e-12)
    mods = seq.x[1, :50]
    assert set(np.unique(mods)) == {0.0, 2.0, 4.0}
    assert np.array_equal(mods[:6], [2.0, 4.0, 0.0, 2.0, 4.0, 0.0])


def test_gen_synth_classes_balanced_and_distinct():
    cfg = ModelConfig(K=(3, 2), V=5, T=4, b=(1.0, 1.0), c=50.0, mu=20.0, link="poisson")
    ds, truths = datagen.gen_synth_classes(3, 10, cfg, RngStream(5))
    labels = ds.labels
    assert labels is not None
    assert all(np.sum(labels == c) == 10 for c in (1, 2, 3))
    assert len(truths) == 3
    assert not np.allclose(truths[0].phi[0], truths[1].phi[0])
    # class-conditional means differ through the distinct loading matrices
    means = [np.mean([s.x for s, l in zip(ds.sequences, labels) if l == c]) for c in (1, 2, 3)]
    assert len(set(np.round(means, 12))) > 1


def test_gen_synth_single_class_degenerate():
    cfg = ModelConfig(K=(2,), V=4, T=3, b=(1.0,), c=10.0, mu=5.0, link="prg")
    ds, _ = datagen.gen_synth_classes(1, 5, cfg, RngStream(6))
    assert all(s.label == 1 for s in ds.sequences)


def test_csv_round_trip_single_sequence(tmp_path):
    seq = datagen.gen_toy2()
    path = tmp_path / "toy2.csv"
    datagen.save_dataset(datagen.Dataset([seq]), path)
    loaded = datagen.load_dataset(path)
    assert len(loaded.sequences) == 1
    assert np.allclose(loaded.sequences[0].x, seq.x, atol=1e-9)
    # 17 significant digits round-trip float64 exactly
    assert np.array_equal(loaded.sequences[0].x, seq.x)


def test_csv_round_trip_multi_labeled(tmp_path):
    cfg = ModelConfig(K=(2,), V=3, T=4, b=(1.0,), c=10.0, mu=5.0, link="prg")
    ds, _ = datagen.gen_synth_classes(2, 3, cfg, RngStream(8))
    path = tmp_path / "synth.csv"
    datagen.save_dataset(ds, path)
    loaded = datagen.load_dataset(path)
    assert len(loaded.sequences) == 6
    for a, b in zip(loaded.sequences, ds.sequences):
        assert np.array_equal(a.x, b.x)
        assert a.label == b.label


def test_npz_round_trip_exact(tmp_path):
    cfg = ModelConfig(K=(2,), V=3, T=4, b=(1.0,), c=10.0, mu=5.0, link="poisson")
    ds, _ = datagen.gen_synth_classes(2, 2, cfg, RngStream(9))
    path = tmp_path / "synth.npz"
    datagen.save_dataset(ds, path)
    loaded = datagen.load_dataset(str(path))
    assert loaded.n_classes == 2
    for a, b in zip(loaded.sequences, ds.sequences):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.counts, b.counts)
        assert a.label == b.label and a.mu == b.mu


def test_wide_format_round_trip(tmp_path):
    rng = RngStream(10)
    profiles = rng.gen.random((4, 20))
    path = tmp_path / "profiles.csv"
    datagen.save_profiles(profiles, [1, 2, 1, 2], path)
    with pytest.raises(ConfigError):
        datagen.load_dataset(path)  # wide data needs window parameters
    ds = datagen.load_dataset(path, window_v=6, window_o=3)
    assert len(ds.sequences) == 4
    assert ds.sequences[0].x.shape == (6, (20 - 3) // 3)
    assert np.array_equal(ds.sequences[0].x, datagen.window(profiles[0], 6, 3))
    assert [s.label for s in ds.sequences] == [1, 2, 1, 2]


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DatasetError):
        datagen.load_dataset(path)
    path.write_text("label,v,t,value\n")
    with pytest.raises(DatasetError):
        datagen.load_dataset(path)


def test_malformed_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,v,t,value\n,1,1,0.5\n,1,2\n")
    with pytest.raises(DatasetError, match="line 3"):
        datagen.load_dataset(path)
    path.write_text("label,v,t,value\n,1,1,notanumber\n")
    with pytest.raises(DatasetError, match="line 2"):
        datagen.load_dataset(path)


def test_unknown_header_rejected(tmp_path):
    path = tmp_path / "odd.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DatasetError):
        datagen.load_dataset(path)
