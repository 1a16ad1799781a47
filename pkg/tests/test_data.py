import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refed.data import (
    MAGIC, DatasetFormatError, Domain, Kind, LabeledDataset, LabelRangeError, MagicMismatchError,
    NonFiniteFeatureError, SitsSample, TruncatedFileError, concat, dumps_dataset, load_dataset, loads_dataset,
    mixed_label, mixed_labels, save_dataset,
)


def make_ds(n=10, t=4, c=2, k=3, seed=0):
    r = np.random.default_rng(seed)
    return LabeledDataset(
        r.standard_normal((n, t, c)), r.integers(0, k, n), r.integers(0, 5, n), r.integers(0, 2, n),
        [f"c{i}" for i in range(k)],
    )


def test_mixed_label_cases():
    assert mixed_label(0, Kind.INVARIANT, n_classes=8) == 0
    assert mixed_label(7, Kind.SPECIFIC, Domain.SOURCE, n_classes=8) == 15
    assert mixed_label(7, Kind.SPECIFIC, Domain.TARGET, n_classes=8) == 23


def test_mixed_label_image_has_3k_values():
    k = 8
    image = {mixed_label(y, Kind.INVARIANT, n_classes=k) for y in range(k)}
    for d in Domain:
        image |= {mixed_label(y, Kind.SPECIFIC, d, n_classes=k) for y in range(k)}
    assert image == set(range(3 * k))


def test_mixed_label_errors():
    with pytest.raises(ValueError):
        mixed_label(8, Kind.INVARIANT, n_classes=8)
    with pytest.raises(ValueError):
        mixed_label(1, Kind.SPECIFIC, None, n_classes=8)


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 1)), min_size=1, max_size=30))
def test_mixed_labels_matches_scalar(pairs):
    y = np.array([p[0] for p in pairs])
    d = np.array([p[1] for p in pairs])
    vec = mixed_labels(y, Kind.SPECIFIC, d, 10)
    assert vec.tolist() == [mixed_label(a, Kind.SPECIFIC, b, n_classes=10) for a, b in pairs]
    assert mixed_labels(y, Kind.INVARIANT, None, 10).tolist() == y.tolist()


def test_dataset_is_read_only():
    ds = make_ds()
    with pytest.raises(ValueError):
        ds.features[0, 0, 0] = 1.0


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 1)), [0, 5], [0, 1], [0, 1], ["a", "b"])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 1)), [0, 1], [0, 1], [0, 2], ["a", "b"])
    with pytest.raises(ValueError):
        LabeledDataset(np.full((1, 3, 1), np.nan), [0], [0], [0], ["a"])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 1)), [0], [0, 1], [0, 1], ["a"])


def test_from_samples_and_getitem():
    samples = [SitsSample(np.ones((3, 2)) * i, i % 2, Domain.TARGET, 10 + i) for i in range(4)]
    ds = LabeledDataset.from_samples(samples, ["a", "b"])
    assert len(ds) == 4 and ds.n_target == 4 and ds.n_source == 0
    assert ds[2].polygon_id == 12 and ds[2].domain is Domain.TARGET


def test_concat_and_by_domain():
    a, b = make_ds(seed=1), make_ds(seed=2)
    both = concat([a, b])
    assert len(both) == 20
    assert len(both.by_domain(Domain.SOURCE)) + len(both.by_domain(Domain.TARGET)) == 20
    with pytest.raises(ValueError):
        concat([a, make_ds(t=5)])


dataset_strategy = st.builds(
    lambda n, t, c, k, seed: make_ds(n, t, c, k, seed),
    st.integers(0, 12), st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(0, 1000),
)


@given(dataset_strategy)
def test_sitsb_round_trip(ds):
    back = loads_dataset(dumps_dataset(ds))
    assert back.equals(ds)
    assert dumps_dataset(back) == dumps_dataset(ds)


def test_sitsb_file_round_trip(tmp_path):
    ds = make_ds(n=7)
    save_dataset(ds, tmp_path / "d.sitsb")
    assert load_dataset(tmp_path / "d.sitsb").equals(ds)


def test_sitsb_header_layout():
    ds = make_ds(n=3, t=4, c=2, k=2)
    buf = dumps_dataset(ds)
    assert buf[:8] == MAGIC
    assert struct.unpack("<5I", buf[8:28]) == (3, 4, 2, 2, 0)


def test_magic_mismatch():
    buf = b"XXXX0001" + dumps_dataset(make_ds())[8:]
    with pytest.raises(MagicMismatchError) as exc:
        loads_dataset(buf)
    assert exc.value.offset == 0


def test_truncated_labels():
    ds = make_ds(n=10)
    buf = dumps_dataset(ds)
    # drop the last label (2 bytes) together with the ids and tags that follow it
    n = len(ds)
    cut = len(buf) - (4 * n + n) - 2
    with pytest.raises(TruncatedFileError):
        loads_dataset(buf[:cut])


def test_label_out_of_range_names_offset():
    ds = make_ds(n=4, k=3)
    buf = bytearray(dumps_dataset(ds))
    lab_off = len(buf) - (4 * 4 + 4) - 2 * 4
    buf[lab_off + 2:lab_off + 4] = struct.pack("<H", 9)
    with pytest.raises(LabelRangeError) as exc:
        loads_dataset(bytes(buf))
    assert exc.value.offset == lab_off + 2


def test_non_finite_feature_names_offset():
    ds = make_ds(n=2, t=2, c=1, k=1)
    buf = bytearray(dumps_dataset(ds))
    feat_off = 8 + 20 + 2 + len("c0")
    buf[feat_off + 4:feat_off + 8] = struct.pack("<f", float("inf"))
    with pytest.raises(NonFiniteFeatureError) as exc:
        loads_dataset(bytes(buf))
    assert exc.value.offset == feat_off + 4


def test_trailing_bytes_rejected():
    with pytest.raises(DatasetFormatError):
        loads_dataset(dumps_dataset(make_ds()) + b"\0")
