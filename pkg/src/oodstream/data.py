"""Synthetic scenarios and stream composition.

In-distribution data is a C-class isotropic Gaussian mixture; outlier pools
come from shifted Gaussians, uniform boxes, or rings. Streams interleave an
ID pool with one or more OOD pools by a per-position Bernoulli draw with ID
probability kappa, sampling without replacement and truncating at the first
pool exhaustion. Everything is a pure function of (spec, seed).

Dataset file format (text, comma-separated):
    line 1:  auto-ood-dataset v1,dim=<d>
    rows:    label,<f1>,...,<fd>      label -1 marks OOD, else 0..C-1
Floats carry 17 significant digits so round trips are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = "auto-ood-dataset v1"


class DatasetFormatError(Exception):
    """Malformed dataset file; message carries the offending line number."""


@dataclass
class LabeledSet:
    """Feature matrix (N, d) with integer labels; label -1 flags OOD rows."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (N, d) with one label per row")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GaussianSource:
    """Isotropic Gaussian outlier cluster."""

    mean: tuple[float, ...]
    spread: float


@dataclass(frozen=True)
class UniformBoxSource:
    """Axis-aligned uniform box."""

    low: tuple[float, ...]
    high: tuple[float, ...]


@dataclass(frozen=True)
class RingSource:
    """Spherical shell: uniform direction, radius + width*(U-1/2) magnitude."""

    radius: float
    width: float


OodSource = GaussianSource | UniformBoxSource | RingSource


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, seeded description of one synthetic benchmark.

    ``train_n`` and ``test_id_n`` are totals split as evenly as possible
    across classes (remainder to the lowest class indices); ``ood_n`` is
    per source.
    """

    dim: int
    num_classes: int
    class_means: tuple[tuple[float, ...], ...]
    id_spread: float
    ood_sources: tuple[OodSource, ...]
    train_n: int
    test_id_n: int
    ood_n: int
    seed: int

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if len(self.class_means) != self.num_classes:
            raise ValueError("one mean per class required")
        if any(len(m) != self.dim for m in self.class_means):
            raise ValueError("class means must have length dim")
        if self.id_spread <= 0:
            raise ValueError("id_spread must be positive")
        if min(self.train_n, self.test_id_n, self.ood_n) < 1:
            raise ValueError("sample counts must be >= 1")
        for src in self.ood_sources:
            if isinstance(src, GaussianSource) and src.spread <= 0:
                raise ValueError("gaussian source spread must be positive")
            if isinstance(src, RingSource) and (src.radius <= 0 or src.width <= 0):
                raise ValueError("ring radius and width must be positive")
            if isinstance(src, UniformBoxSource):
                lo, hi = np.asarray(src.low), np.asarray(src.high)
                if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                    raise ValueError("box bounds must have length dim")
                if np.any(hi <= lo):
                    raise ValueError("box high bounds must exceed low bounds")


def _even_split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _draw_id_set(spec: ScenarioSpec, total: int, rng: np.random.Generator) -> LabeledSet:
    counts = _even_split(total, spec.num_classes)
    feats, labels = [], []
    for c, n_c in enumerate(counts):
        mean = np.asarray(spec.class_means[c], dtype=np.float64)
        feats.append(rng.normal(0.0, spec.id_spread, size=(n_c, spec.dim)) + mean)
        labels.append(np.full(n_c, c, dtype=np.int64))
    features = np.concatenate(feats)
    labels_arr = np.concatenate(labels)
    order = rng.permutation(total)
    return LabeledSet(features[order], labels_arr[order], spec.num_classes)


def _draw_ood_set(src: OodSource, dim: int, n: int, rng: np.random.Generator) -> LabeledSet:
    if isinstance(src, GaussianSource):
        mean = np.asarray(src.mean, dtype=np.float64)
        feats = rng.normal(0.0, src.spread, size=(n, dim)) + mean
    elif isinstance(src, UniformBoxSource):
        lo = np.asarray(src.low, dtype=np.float64)
        hi = np.asarray(src.high, dtype=np.float64)
        feats = rng.uniform(0.0, 1.0, size=(n, dim)) * (hi - lo) + lo
    else:
        direction = rng.normal(0.0, 1.0, size=(n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radii = src.radius + src.width * (rng.uniform(0.0, 1.0, size=(n, 1)) - 0.5)
        feats = direction * radii
    return LabeledSet(feats, np.full(n, -1, dtype=np.int64), 0)


def make_scenario(spec: ScenarioSpec) -> tuple[LabeledSet, LabeledSet, list[LabeledSet]]:
    """Seeded draw of (train ID, test ID, one pool per OOD source)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train = _draw_id_set(spec, spec.train_n, rng)
    test_id = _draw_id_set(spec, spec.test_id_n, rng)
    ood_sets = [_draw_ood_set(src, spec.dim, spec.ood_n, rng) for src in spec.ood_sources]
    return train, test_id, ood_sets


# ---------------------------------------------------------------------------
# streams


@dataclass
class Stream:
    """Ordered arrivals with hidden ground truth and composition metadata."""

    features: np.ndarray
    is_ood: np.ndarray
    labels: np.ndarray
    segment_bounds: tuple[int, ...] = ()
    exhausted_pool: str = ""

    def __len__(self) -> int:
        return len(self.labels)


def _compose(id_set: LabeledSet, ood_features: np.ndarray, ood_labels: np.ndarray,
             kappa: float, rng: np.random.Generator) -> Stream:
    """Common per-position Bernoulli interleaver, without replacement."""
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"kappa must be in [0, 1), got {kappa}")
    n_id, n_ood = len(id_set), len(ood_features)
    if kappa > 0.0 and n_id == 0:
        raise ValueError("kappa > 0 requires a nonempty ID pool")
    if n_ood == 0:
        raise ValueError("OOD pool must be nonempty")
    id_order = rng.permutation(n_id)
    ood_order = rng.permutation(n_ood)
    feats, flags, labels = [], [], []
    i = j = 0
    exhausted = ""
    while True:
        take_id = rng.random() < kappa
        if take_id:
            if i >= n_id:
                exhausted = "id"
                break
            k = id_order[i]
            feats.append(id_set.features[k])
            flags.append(False)
            labels.append(id_set.labels[k])
            i += 1
        else:
            if j >= n_ood:
                exhausted = "ood"
                break
            k = ood_order[j]
            feats.append(ood_features[k])
            flags.append(True)
            labels.append(ood_labels[k])
            j += 1
    return Stream(
        features=np.asarray(feats, dtype=np.float64),
        is_ood=np.asarray(flags, dtype=bool),
        labels=np.asarray(labels, dtype=np.int64),
        segment_bounds=(0,),
        exhausted_pool=exhausted,
    )


def compose_stream(test_id_set: LabeledSet, ood_set: LabeledSet, kappa: float,
                   seed: int) -> Stream:
    """Single-source contaminated stream: ID with probability kappa per slot."""
    rng = np.random.default_rng(seed)
    return _compose(test_id_set, ood_set.features, ood_set.labels, kappa, rng)


def compose_mixed(test_id_set: LabeledSet, ood_sets: list[LabeledSet], kappa: float,
                  seed: int) -> Stream:
    """One segment whose OOD slots draw uniformly across the pooled sources."""
    if len(ood_sets) < 1:
        raise ValueError("compose_mixed needs at least one OOD source")
    feats = np.concatenate([s.features for s in ood_sets])
    labels = np.concatenate([s.labels for s in ood_sets])
    rng = np.random.default_rng(seed)
    return _compose(test_id_set, feats, labels, kappa, rng)


def compose_timeseries(test_id_set: LabeledSet, ood_sets: list[LabeledSet],
                       kappa: float, seed: int) -> Stream:
    """Sequential per-source segments; the ID pool splits evenly across them."""
    if len(ood_sets) < 1:
        raise ValueError("compose_timeseries needs at least one OOD source")
    n_segments = len(ood_sets)
    rng = np.random.default_rng(seed)
    id_order = rng.permutation(len(test_id_set))
    chunk_sizes = _even_split(len(test_id_set), n_segments)
    parts: list[Stream] = []
    start = 0
    for k, (ood, size) in enumerate(zip(ood_sets, chunk_sizes)):
        idx = id_order[start:start + size]
        start += size
        chunk = LabeledSet(test_id_set.features[idx], test_id_set.labels[idx],
                           test_id_set.num_classes)
        seg_rng = np.random.default_rng([seed, k])
        parts.append(_compose(chunk, ood.features, ood.labels, kappa, seg_rng))
    bounds = []
    offset = 0
    for p in parts:
        bounds.append(offset)
        offset += len(p)
    return Stream(
        features=np.concatenate([p.features for p in parts]),
        is_ood=np.concatenate([p.is_ood for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        segment_bounds=tuple(bounds),
        exhausted_pool=";".join(p.exhausted_pool for p in parts),
    )


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path, dataset: LabeledSet) -> None:
    lines = [f"{DATASET_MAGIC},dim={dataset.dim}"]
    for label, row in zip(dataset.labels, dataset.features):
        lines.append(",".join([str(int(label))] + [f"{v:.17g}" for v in row]))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledSet:
    with open(path, "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file")
    header = lines[0].split(",")
    if len(header) != 2 or header[0] != DATASET_MAGIC or not header[1].startswith("dim="):
        raise DatasetFormatError(f"line 1: bad header {lines[0]!r}")
    try:
        dim = int(header[1][4:])
    except ValueError as exc:
        raise DatasetFormatError(f"line 1: bad dim in header {lines[0]!r}") from exc
    feats, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dim + 1:
            raise DatasetFormatError(
                f"line {lineno}: expected {dim + 1} fields, got {len(fields)}"
            )
        try:
            labels.append(int(fields[0]))
            feats.append([float(t) for t in fields[1:]])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: unparsable value") from exc
    features = np.asarray(feats, dtype=np.float64).reshape(len(labels), dim)
    labels_arr = np.asarray(labels, dtype=np.int64)
    ood_mask = labels_arr < 0
    num_classes = int(labels_arr.max()) + 1 if not ood_mask.all() and len(labels_arr) else 0
    return LabeledSet(features, labels_arr, num_classes)


# ---------------------------------------------------------------------------
# the pinned canonical scenario (golden values depend on these constants)


CANONICAL_SEED = 20240611
CANONICAL_STREAM_SEED = 77


def canonical_spec() -> ScenarioSpec:
    """The repository's pinned reference scenario.

    Three unit-circle Gaussian classes in the plane. Both outlier clusters
    sit on the corridor between classes 0 and 1 (the low-confidence wedge of
    a classifier trained on the mixture): the primary cluster at radius 2.5,
    where scores overlap the ID tail, and a drifted cluster at distance 5,
    deep in the region where a frozen classifier is overconfident. The
    drifted source is the second segment of the canonical time-series
    stream.
    """
    angles = [math.pi / 2 + 2 * math.pi * c / 3 for c in range(3)]
    means = tuple((math.cos(a), math.sin(a)) for a in angles)
    bisector = math.pi / 2 + math.pi / 3
    corridor = (math.cos(bisector), math.sin(bisector))
    return ScenarioSpec(
        dim=2,
        num_classes=3,
        class_means=means,
        id_spread=0.25,
        ood_sources=(
            GaussianSource(mean=(2.5 * corridor[0], 2.5 * corridor[1]), spread=0.4),
            GaussianSource(mean=(5.0 * corridor[0], 5.0 * corridor[1]), spread=0.5),
        ),
        train_n=450,
        test_id_n=4000,
        ood_n=4000,
        seed=CANONICAL_SEED,
    )
