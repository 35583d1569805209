"""Synthetic dataset generator tests: shape, taxonomy signal, determinism."""

import json

import numpy as np
import pytest

from xmodal import dataio
from xmodal.synthgen import SynthSpec, _mutate, class_counts, generate, write_outputs


def small_spec(**kw):
    base = dict(genera=2, species_per_genus=2, head=30, tail=5, dim=8,
                seq_len=40, seqs_per_species=4, seed=0)
    base.update(kw)
    return SynthSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError, match="genera"):
        SynthSpec(genera=0)
    with pytest.raises(ValueError, match="mu_genus"):
        SynthSpec(mu_genus=1.5)
    with pytest.raises(ValueError, match="ratio"):
        SynthSpec(ratio=0.0)
    with pytest.raises(ValueError, match="sigma_v"):
        SynthSpec(sigma_v=-1.0)
    with pytest.raises(ValueError, match="seq_len"):
        SynthSpec(seq_len=3)
    with pytest.raises(ValueError, match="map_scale"):
        SynthSpec(map_scale=0.0)
    with pytest.raises(ValueError, match="unknown"):
        SynthSpec.from_dict({"species": 4})


def test_spec_round_trip_and_n_classes():
    spec = small_spec(sigma_v=0.5)
    assert spec.n_classes == 4
    assert SynthSpec.from_dict(spec.to_dict()) == spec


def test_class_counts_profile():
    counts = class_counts(SynthSpec())
    assert counts[0] == 500
    assert counts.min() == 10
    assert len(counts) == 16
    assert np.all(np.diff(counts) <= 0)
    custom = class_counts(small_spec(head=100, tail=4, ratio=0.5))
    assert custom.tolist() == [100, 50, 25, 12]


def test_generate_shapes_and_labels():
    spec = small_spec()
    data = generate(spec)
    c = spec.n_classes
    assert len(data.records) == c * spec.seqs_per_species
    assert len({r.id for r in data.records}) == len(data.records)
    for rec in data.records:
        assert len(rec.residues) == spec.seq_len
        assert set(rec.residues) <= set("ACGT")
        assert 0 <= data.seq_labels[rec.id] < c
    assert [a.taxon for a in data.anchors] == list(range(c))
    assert all(a.count == spec.seqs_per_species for a in data.anchors)
    assert all(a.vector.shape == (256,) for a in data.anchors)
    assert data.visual_means.shape == (c, spec.dim)
    assert data.map_matrix.shape == (spec.dim, 256)
    assert np.array_equal(data.counts, class_counts(spec))


def test_generate_split_is_per_class_and_disjoint():
    spec = small_spec()
    data = generate(spec)
    assert not set(data.split.train) & set(data.split.test)
    for taxon in range(spec.n_classes):
        n_train = int(np.sum(data.train_table.labels == taxon))
        n_test = int(np.sum(data.test_table.labels == taxon))
        assert n_train + n_test == data.counts[taxon]
        assert n_test >= 1 and n_train >= 1
    manifest_rows = data.manifest["classes"]
    for t, row in enumerate(manifest_rows):
        assert row["genus"] == t % spec.genera
        assert row["n_train"] + row["n_test"] == row["n_total"]


def test_generate_rejects_tiny_classes():
    with pytest.raises(ValueError, match="train samples"):
        generate(small_spec(head=2, tail=1))


def test_generate_is_deterministic():
    one = generate(small_spec(seed=5))
    two = generate(small_spec(seed=5))
    other = generate(small_spec(seed=6))
    assert one.train_table.matrix.tobytes() == two.train_table.matrix.tobytes()
    assert one.split.train == two.split.train
    assert [r.residues for r in one.records] == [r.residues for r in two.records]
    assert one.train_table.matrix.tobytes() != other.train_table.matrix.tobytes()


def test_taxonomy_signal_in_sequences_and_anchors():
    spec = small_spec(seq_len=200)
    data = generate(spec)

    def agreement(r1, r2):
        return np.mean([a == b for a, b in zip(r1.residues, r2.residues)])

    by_taxon = {}
    for rec in data.records:
        by_taxon.setdefault(data.seq_labels[rec.id], []).append(rec)
    # same species nearly identical, different genus clearly diverged
    same = agreement(by_taxon[0][0], by_taxon[0][1])
    cross = agreement(by_taxon[0][0], by_taxon[1][0])  # taxa 0,1: different genus
    sister = agreement(by_taxon[0][0], by_taxon[2][0])  # taxa 0,2: same genus
    assert same > sister > cross

    vecs = np.stack([a.vector for a in data.anchors])
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    cos = unit @ unit.T
    assert cos[0, 2] > cos[0, 1]  # sister anchors closer than cross-genus


def test_visual_means_follow_anchor_geometry():
    spec = small_spec(sigma_map=0.0, seq_len=200)
    data = generate(spec)
    anchor_mat = np.stack([a.vector for a in data.anchors])
    assert np.allclose(data.visual_means, anchor_mat @ data.map_matrix.T)


def test_mutate_rates_and_stream_alignment():
    rng = np.random.default_rng(0)
    seq = rng.integers(0, 4, size=100)
    same = _mutate(seq, 0.0, np.random.default_rng(1))
    assert np.array_equal(same, seq)
    flipped = _mutate(seq, 1.0, np.random.default_rng(1))
    assert np.all(flipped != seq)
    assert np.all((flipped >= 0) & (flipped <= 3))
    # the generator stream advances identically whatever the rate
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    _mutate(seq, 0.0, r1)
    _mutate(seq, 1.0, r2)
    assert r1.integers(1 << 30) == r2.integers(1 << 30)


def test_write_outputs_round_trip(tmp_path):
    spec = small_spec()
    data = generate(spec)
    write_outputs(data, tmp_path)

    back = dataio.parse_fasta((tmp_path / "sequences.fa").read_text())
    assert back == data.records
    labels = dataio.load_labels_csv(tmp_path / "labels.csv")
    assert labels == data.seq_labels
    train = dataio.load_feature_csv(tmp_path / "train.csv")
    assert train.matrix.tobytes() == data.train_table.matrix.tobytes()
    assert train.ids == data.train_table.ids
    split = dataio.load_split(tmp_path / "split.json")
    assert split.train == data.split.train and split.test == data.split.test
    manifest = json.loads((tmp_path / "truth.json").read_text())
    assert manifest == data.manifest
