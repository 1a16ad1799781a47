"""Gap-filling, percentile scaling and polygon-aware stratified splitting."""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

PARTITIONS = ("train", "val", "test")
DEFAULT_RATIOS = (0.5, 0.2, 0.3)


class UnrecoverableGapError(ValueError):
    pass


def gapfill(series, valid_mask):
    """Fill invalid entries by linear interpolation in time.

    Leading and trailing invalid runs copy the nearest valid value.
    """
    series = np.asarray(series, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    if series.shape != valid.shape or series.ndim != 1:
        raise ValueError("series and mask must be 1-D with equal length")
    if not valid.any():
        raise UnrecoverableGapError("series has no valid observation")
    t = np.arange(series.size)
    out = np.interp(t, t[valid], series[valid])
    out[valid] = series[valid]
    return out


def gapfill_features(features, valid_mask):
    """Apply :func:`gapfill` to every (sample, band) series of ``features[N, T, C]``."""
    features = np.asarray(features, dtype=np.float64)
    valid_mask = np.broadcast_to(np.asarray(valid_mask, dtype=bool), features.shape)
    out = np.empty_like(features)
    n, _, c = features.shape
    for i in range(n):
        for b in range(c):
            out[i, :, b] = gapfill(features[i, :, b], valid_mask[i, :, b])
    return out


@dataclass
class ScalingParams:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def to_dict(self):
        return {"p2": self.lower.tolist(), "p98": self.upper.tolist()}


def fit_scaling(dataset, q_low=2.0, q_high=98.0):
    """Per-band 2nd/98th percentiles over all N*T values.

    Percentiles interpolate linearly between order statistics at zero-based
    rank ``q*(M-1)``.
    """
    feats = dataset.features if hasattr(dataset, "features") else np.asarray(dataset)
    if feats.shape[0] == 0:
        raise ValueError("cannot fit scaling on an empty dataset")
    values = feats.reshape(-1, feats.shape[-1]).astype(np.float64)
    lo, hi = np.percentile(values, [q_low, q_high], axis=0, method="linear")
    return ScalingParams(lo, hi)


def scale_features(features, params):
    features = np.asarray(features)
    if features.shape[-1] != params.lower.size:
        raise ValueError(f"band count mismatch: data has {features.shape[-1]}, params have {params.lower.size}")
    span = params.upper - params.lower
    safe = np.where(span > 0, span, 1.0)
    out = (features.astype(np.float64) - params.lower) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_scaling(dataset, params):
    """Min-max scale each band with the fitted bounds and clamp to [0, 1]."""
    return dataset.with_features(scale_features(dataset.features, params))


@dataclass
class SplitAssignment:
    seed: int
    ratios: tuple
    assignment: dict
    achieved: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def polygons(self, partition):
        return sorted(pid for pid, part in self.assignment.items() if part == partition)

    def indices(self, dataset, partition):
        wanted = np.array(self.polygons(partition), dtype=np.int64)
        return np.flatnonzero(np.isin(dataset.polygon_ids, wanted))

    def partition(self, dataset):
        """Return the (train, val, test) sub-datasets."""
        missing = set(np.unique(dataset.polygon_ids).tolist()) - set(self.assignment)
        if missing:
            raise ValueError(f"{len(missing)} polygon ids of the dataset are not covered by the split")
        return tuple(dataset.subset(self.indices(dataset, p)) for p in PARTITIONS)

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "ratios": [float(r) for r in self.ratios],
            "assignment": {str(pid): self.assignment[pid] for pid in sorted(self.assignment)},
            "achieved": self.achieved,
            "warnings": list(self.warnings),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d):
        assignment = {int(k): v for k, v in d["assignment"].items()}
        bad = {v for v in assignment.values() if v not in PARTITIONS}
        if bad:
            raise ValueError(f"unknown partition names {sorted(bad)}")
        return cls(int(d["seed"]), tuple(d["ratios"]), assignment, d.get("achieved", {}), d.get("warnings", []))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _majority_class(labels):
    counts = np.bincount(labels)
    return int(np.argmax(counts))


def assign_polygons(dataset, ratios, rng):
    """Greedy class-stratified assignment of whole polygons to ``len(ratios)`` parts.

    Polygons of each class (their majority class) are shuffled, then handed
    out one by one to the part with the largest pixel-count deficit
    ``ratio * class_pixels - assigned_pixels``. Returns ``({polygon_id: part},
    warnings)``.
    """
    polys, inverse = np.unique(dataset.polygon_ids, return_inverse=True)
    sizes = np.bincount(inverse)
    order = np.argsort(inverse, kind="stable")
    bounds = np.cumsum(sizes)[:-1]
    per_poly_labels = np.split(dataset.labels[order], bounds)
    majority = np.array([_majority_class(lab) for lab in per_poly_labels], dtype=np.int64)

    target = np.asarray(ratios, dtype=np.float64)
    assignment = {}
    notes = []
    for k in range(dataset.n_classes):
        members = np.flatnonzero(majority == k)
        if members.size == 0:
            continue
        if members.size < len(target):
            notes.append(f"class {k} has {members.size} polygon(s); some partitions will miss it")
        members = members[rng.permutation(members.size)]
        total = sizes[members].sum()
        assigned = np.zeros(len(target))
        for m in members:
            part = int(np.argmax(target * total - assigned))
            assigned[part] += sizes[m]
            assignment[int(polys[m])] = part
    return assignment, notes


def polygon_split(dataset, ratios=DEFAULT_RATIOS, seed=0):
    """Split a dataset into train/val/test by polygon, stratified by class.

    No polygon straddles two partitions. See :func:`assign_polygons`.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive values summing to 1")
    parts, notes = assign_polygons(dataset, ratios, np.random.default_rng(seed))
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    assignment = {pid: PARTITIONS[i] for pid, i in parts.items()}
    split = SplitAssignment(int(seed), ratios, assignment, warnings=notes)
    split.achieved = achieved_fractions(dataset, split)
    return split


def polygon_holdout(dataset, fraction, seed=0):
    """Polygon-exclusive ``(kept, held_out)`` pair with ~``fraction`` of each class held out."""
    parts, _ = assign_polygons(dataset, (1.0 - fraction, fraction), np.random.default_rng(seed))
    held = np.array([pid for pid, i in parts.items() if i == 1], dtype=np.int64)
    mask = np.isin(dataset.polygon_ids, held)
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


def achieved_fractions(dataset, split):
    part_of = np.array([PARTITIONS.index(split.assignment[int(p)]) for p in dataset.polygon_ids], dtype=np.int64)
    n = len(dataset)
    overall = np.bincount(part_of, minlength=3) / max(n, 1)
    per_class = {}
    for k in range(dataset.n_classes):
        sel = dataset.labels == k
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        frac = np.bincount(part_of[sel], minlength=3) / cnt
        per_class[str(k)] = {p: round(float(f), 6) for p, f in zip(PARTITIONS, frac)}
    return {"overall": {p: round(float(f), 6) for p, f in zip(PARTITIONS, overall)}, "per_class": per_class}


def repeat_seeds(base_seed, n_repeats=5):
    return [base_seed + r for r in range(n_repeats)]
