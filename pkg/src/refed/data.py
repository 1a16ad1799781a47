"""Samples, datasets, the mixed contrastive label space and the SITSB v1 file format.

SITSB v1 layout (little-endian)::

    8 bytes   magic "SITSB001"
    5 x u32   N, T, C, K, reserved (0)
    K x       u16 length + UTF-8 class name
    N*T*C     float32 features, sample-major, then time, then band
    N x u16   class labels
    N x u32   polygon ids
    N x u8    domain tags (0 = source, 1 = target)
"""
import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SITSB001"


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1


class Kind(enum.Enum):
    INVARIANT = "invariant"
    SPECIFIC = "specific"


class DatasetFormatError(ValueError):
    """Malformed SITSB file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MagicMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class NonFiniteFeatureError(DatasetFormatError):
    pass


def mixed_label(class_label, kind, domain=None, n_classes=None):
    """Index into the 3K-way contrastive label space.

    Invariant features keep their class index; source-specific ones are
    shifted by K and target-specific ones by 2K.
    """
    if n_classes is None:
        raise TypeError("n_classes is required")
    if not 0 <= class_label < n_classes:
        raise ValueError(f"class label {class_label} out of range [0, {n_classes})")
    kind = Kind(kind)
    if kind is Kind.INVARIANT:
        return int(class_label)
    if domain is None:
        raise ValueError("domain is required for specific features")
    return int((1 + int(Domain(domain))) * n_classes + class_label)


def mixed_labels(class_labels, kind, domains, n_classes):
    """Vectorised :func:`mixed_label` over arrays."""
    class_labels = np.asarray(class_labels, dtype=np.int64)
    if class_labels.size and (class_labels.min() < 0 or class_labels.max() >= n_classes):
        raise ValueError(f"class label out of range [0, {n_classes})")
    if Kind(kind) is Kind.INVARIANT:
        return class_labels.copy()
    return (1 + np.asarray(domains, dtype=np.int64)) * n_classes + class_labels


@dataclass(frozen=True)
class SitsSample:
    features: np.ndarray
    class_label: int
    domain: Domain
    polygon_id: int


class LabeledDataset:
    """Column-oriented collection of pixel time series.

    ``features`` is ``[N, T, C]`` float32; ``labels``, ``polygon_ids`` and
    ``domains`` are length-N integer columns.
    """

    def __init__(self, features, labels, polygon_ids, domains, class_names):
        features = np.ascontiguousarray(features, dtype=np.float32)
        if features.ndim != 3:
            raise ValueError("features must be [N, T, C]")
        n = features.shape[0]
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        polygon_ids = np.asarray(polygon_ids, dtype=np.int64).reshape(-1)
        domains = np.asarray(domains, dtype=np.int64).reshape(-1)
        if not (len(labels) == len(polygon_ids) == len(domains) == n):
            raise ValueError("column lengths differ")
        class_names = [str(c) for c in class_names]
        k = len(class_names)
        if k == 0:
            raise ValueError("at least one class name is required")
        if n and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"class label out of range [0, {k})")
        if n and polygon_ids.min() < 0:
            raise ValueError("polygon ids must be non-negative")
        if n and not np.isin(domains, (0, 1)).all():
            raise ValueError("domain tags must be 0 (source) or 1 (target)")
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        for arr in (features, labels, polygon_ids, domains):
            arr.setflags(write=False)
        self.features = features
        self.labels = labels
        self.polygon_ids = polygon_ids
        self.domains = domains
        self.class_names = class_names

    @classmethod
    def from_samples(cls, samples, class_names, t_len=None, n_bands=None):
        samples = list(samples)
        if samples:
            feats = np.stack([np.asarray(s.features, dtype=np.float32) for s in samples])
        else:
            feats = np.zeros((0, t_len or 0, n_bands or 0), dtype=np.float32)
        return cls(
            feats,
            [s.class_label for s in samples],
            [s.polygon_id for s in samples],
            [int(Domain(s.domain)) for s in samples],
            class_names,
        )

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i):
        return SitsSample(self.features[i], int(self.labels[i]), Domain(int(self.domains[i])), int(self.polygon_ids[i]))

    @property
    def t_len(self):
        return self.features.shape[1]

    @property
    def n_bands(self):
        return self.features.shape[2]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def n_source(self):
        return int((self.domains == Domain.SOURCE).sum())

    @property
    def n_target(self):
        return int((self.domains == Domain.TARGET).sum())

    def subset(self, index):
        index = np.asarray(index)
        return LabeledDataset(
            self.features[index], self.labels[index], self.polygon_ids[index], self.domains[index], self.class_names
        )

    def with_features(self, features):
        return LabeledDataset(features, self.labels, self.polygon_ids, self.domains, self.class_names)

    def by_domain(self, domain):
        return self.subset(np.flatnonzero(self.domains == int(Domain(domain))))

    def check_compatible(self, other):
        if (self.t_len, self.n_bands, self.n_classes) != (other.t_len, other.n_bands, other.n_classes):
            raise ValueError(
                f"dataset metadata mismatch: (T, C, K) {(self.t_len, self.n_bands, self.n_classes)} "
                f"vs {(other.t_len, other.n_bands, other.n_classes)}"
            )

    def equals(self, other):
        return (
            self.class_names == other.class_names
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.polygon_ids, other.polygon_ids)
            and np.array_equal(self.domains, other.domains)
        )


def concat(datasets):
    datasets = list(datasets)
    for d in datasets[1:]:
        datasets[0].check_compatible(d)
    return LabeledDataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        np.concatenate([d.polygon_ids for d in datasets]),
        np.concatenate([d.domains for d in datasets]),
        datasets[0].class_names,
    )


def dumps_dataset(ds):
    out = [MAGIC, struct.pack("<5I", len(ds), ds.t_len, ds.n_bands, ds.n_classes, 0)]
    for name in ds.class_names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
    out.append(ds.features.astype("<f4").tobytes())
    out.append(ds.labels.astype("<u2").tobytes())
    out.append(ds.polygon_ids.astype("<u4").tobytes())
    out.append(ds.domains.astype("u1").tobytes())
    return b"".join(out)


def save_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(dumps_dataset(ds))


def _take(buf, offset, size, what):
    if offset + size > len(buf):
        raise TruncatedFileError(f"truncated payload while reading {what}: need {size} bytes, have {len(buf) - offset}", offset)
    return buf[offset:offset + size], offset + size


def loads_dataset(buf):
    raw, off = _take(buf, 0, 8, "magic")
    if raw != MAGIC:
        raise MagicMismatchError(f"bad magic {raw!r}, expected {MAGIC!r}", 0)
    raw, off = _take(buf, off, 20, "header")
    n, t, c, k, _reserved = struct.unpack("<5I", raw)
    names = []
    for _ in range(k):
        raw, off = _take(buf, off, 2, "class name length")
        (ln,) = struct.unpack("<H", raw)
        start = off
        raw, off = _take(buf, off, ln, "class name")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DatasetFormatError(f"class name is not valid UTF-8: {exc.reason}", start) from None
    feat_off = off
    raw, off = _take(buf, off, 4 * n * t * c, "features")
    feats = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n, t, c)
    bad = np.flatnonzero(~np.isfinite(feats.reshape(-1)))
    if bad.size:
        raise NonFiniteFeatureError("non-finite feature value", feat_off + 4 * int(bad[0]))
    lab_off = off
    raw, off = _take(buf, off, 2 * n, "class labels")
    labels = np.frombuffer(raw, dtype="<u2").astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        raise LabelRangeError(f"class label {labels[bad[0]]} >= K={k}", lab_off + 2 * int(bad[0]))
    raw, off = _take(buf, off, 4 * n, "polygon ids")
    polys = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    dom_off = off
    raw, off = _take(buf, off, n, "domain tags")
    doms = np.frombuffer(raw, dtype="u1").astype(np.int64)
    bad = np.flatnonzero(doms > 1)
    if bad.size:
        raise DatasetFormatError(f"domain tag {doms[bad[0]]} is not 0 or 1", dom_off + int(bad[0]))
    if off != len(buf):
        raise DatasetFormatError(f"{len(buf) - off} trailing bytes after payload", off)
    return LabeledDataset(feats, labels, polys, doms, names)


def load_dataset(path):
    with open(path, "rb") as fh:
        return loads_dataset(fh.read())
