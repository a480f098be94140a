import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedgmcc import nn
from fedgmcc.data import (
    ClientDataset,
    DatasetFormatError,
    FeatureTransform,
    apply_concept_shift,
    apply_feature_transform,
    gen_base_task,
    minmax_bounds,
    minmax_scale,
    read_dataset,
    write_dataset,
)
from fedgmcc.nn import ModelArch


def test_base_task_is_balanced_and_seeded():
    d = gen_base_task(200, 2, seed=3)
    assert np.bincount(d.y).tolist() == [100, 100]
    assert d == gen_base_task(200, 2, seed=3)
    assert d != gen_base_task(200, 2, seed=4)


def test_base_task_rejects_tiny_sets():
    with pytest.raises(ValueError):
        gen_base_task(15, 2, seed=0)
    with pytest.raises(ValueError):
        gen_base_task(100, 1, seed=0)


def test_well_separated_blobs_are_learnable():
    d = gen_base_task(400, 3, seed=1, separation=6.0)
    lo, hi = minmax_bounds(d.x)
    d = minmax_scale(d, lo, hi)
    arch = ModelArch((2, 16, 3))
    w = nn.sgd_train(arch, arch.init(0), d.x, d.y, 60, 32, 0.1, seed=0)
    assert nn.accuracy(arch, w, d.x, d.y) > 0.95


def test_minmax_scaling_hits_unit_box():
    d = gen_base_task(300, 3, seed=2)
    lo, hi = minmax_bounds(d.x)
    s = minmax_scale(d, lo, hi)
    assert np.allclose(s.x.min(axis=0), 0.0) and np.allclose(s.x.max(axis=0), 1.0)
    assert np.array_equal(s.y, d.y)


def test_rotation_examples():
    x = np.array([[1.0, 0.0], [0.3, -2.0]])
    assert np.array_equal(FeatureTransform("rotation", angle=0.0).apply(x), x)
    r = FeatureTransform("rotation", angle=np.pi / 2).apply(x[:1])
    np.testing.assert_allclose(r, [[0.0, 1.0]], atol=1e-15)


@given(
    st.floats(-np.pi, np.pi),
    st.floats(-3, 3),
    st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3),
)
@settings(max_examples=60, deadline=None)
def test_transforms_invert(angle, center, factors):
    x = np.random.default_rng(0).normal(size=(20, 3))
    for t in (
        FeatureTransform("rotation", angle=angle, center=center, axes=(0, 2)),
        FeatureTransform("scale", factors=tuple(factors), center=center),
        FeatureTransform("flip", axes=(1,), center=center),
    ):
        np.testing.assert_allclose(t.inverse().apply(t.apply(x)), x, atol=1e-12)


def test_feature_transform_keeps_labels():
    d = gen_base_task(100, 4, seed=0)
    t = apply_feature_transform(d, FeatureTransform("flip", axes=(0,)))
    assert np.array_equal(t.y, d.y)
    np.testing.assert_array_equal(t.x[:, 0], -d.x[:, 0])


def test_bad_transforms_rejected():
    with pytest.raises(ValueError):
        FeatureTransform("shear")
    with pytest.raises(ValueError):
        FeatureTransform("scale", factors=(1.0, 0.0))
    with pytest.raises(ValueError):
        FeatureTransform("rotation", axes=(0,))


def test_concept_shift_counts():
    d = gen_base_task(100, 2, seed=0)
    assert apply_concept_shift(d, 0.0, seed=1) == d
    full = apply_concept_shift(d, 1.0, seed=1)
    assert np.array_equal(full.y, 1 - d.y)
    half = apply_concept_shift(d, 0.5, seed=1)
    assert int(np.sum(half.y != d.y)) == 50
    assert np.array_equal(half.x, d.x)


@given(st.floats(0.0, 1.0), st.integers(2, 6), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_concept_shift_is_a_derangement(frac, n_classes, seed):
    d = gen_base_task(20 * n_classes, n_classes, seed=seed)
    s = apply_concept_shift(d, frac, seed)
    moved = s.y != d.y
    assert moved.sum() == round(frac * d.n)
    assert np.array_equal(s.y[moved], (d.y[moved] + 1) % n_classes)


def test_roundtrip(tmp_path):
    d = gen_base_task(123, 3, seed=5, dim=4)
    # stored as float32, so round-trip is exact for float32-representable inputs
    d = ClientDataset(0, d.x.astype(np.float32), d.y, d.n_classes)
    path = tmp_path / "d.bin"
    write_dataset(path, d)
    assert read_dataset(path) == d
    raw = path.read_bytes()
    assert raw[:4] == b"FGMC"
    assert struct.unpack_from("<IIII", raw, 4) == (1, 123, 4, 3)
    assert len(raw) == 20 + 123 * 4 * 4 + 123 * 2


def test_roundtrip_keeps_empty_classes(tmp_path):
    d = ClientDataset(2, np.zeros((3, 2)), [0, 0, 1], n_classes=5)
    write_dataset(tmp_path / "d.bin", d)
    back = read_dataset(tmp_path / "d.bin", client_id=2)
    assert back == d and back.n_classes == 5


@pytest.mark.parametrize(
    "mutate",
    [
        lambda raw: b"",
        lambda raw: raw[:10],
        lambda raw: b"XXXX" + raw[4:],
        lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:],
        lambda raw: raw[:-1],
        lambda raw: raw + b"\0",
        lambda raw: raw[:-2] + struct.pack("<H", 9),
    ],
    ids=["empty", "short-header", "magic", "version", "truncated", "trailing", "label-range"],
)
def test_malformed_files_rejected(tmp_path, mutate):
    path = tmp_path / "d.bin"
    write_dataset(path, gen_base_task(40, 2, seed=0))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_dataset_validation():
    with pytest.raises(ValueError):
        ClientDataset(0, np.zeros((3, 2)), [0, 1])
    with pytest.raises(ValueError):
        ClientDataset(0, np.zeros((2, 2)), [0, 3], n_classes=2)
