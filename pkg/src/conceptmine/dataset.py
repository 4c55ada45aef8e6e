"""Part-feature datasets: ingestion, serialization, synthesis, and fold splitting.

A dataset holds, for each sample, K part-feature vectors plus one
non-prototypical vector g and a class label. The on-disk binary layout
("PFD") is little-endian and bit-exact under round-trip:

    magic "PCMF" | u32 version=1 | u32 n_samples | u32 K | u32 L | u32 d_f
    | f32 features [n_samples x (K+1) x d_f]   (slot K holds g)
    | u32 labels [n_samples]

The CSV alternative has a header row and one sample per row with columns
``part{p}_{d}`` for p in [0,K), d in [0,d_f), then ``g_{d}``, then ``label``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationError, StratificationError, ValidationError

MAGIC = b"PCMF"
VERSION = 1
_HEADER = struct.Struct("<4s5I")

# Attempts per planted mean before generation gives up.
_MAX_REJECTIONS = 10_000


@dataclass
class PartFeatureDataset:
    """N samples of K part-feature vectors, a non-prototypical vector, and a label."""

    part_features: np.ndarray  # [n_samples, K, d_f] float32
    nonproto_features: np.ndarray  # [n_samples, d_f] float32
    labels: np.ndarray  # [n_samples] uint32, values in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        self.part_features = np.asarray(self.part_features, dtype=np.float32)
        self.nonproto_features = np.asarray(self.nonproto_features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        self.n_classes = int(self.n_classes)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.part_features.shape[0]

    @property
    def n_parts(self) -> int:
        return self.part_features.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.part_features.shape[2]

    def validate(self):
        """Raise ValidationError on any invariant violation."""
        if self.part_features.ndim != 3:
            raise ValidationError(
                f"part_features must be 3-D [n, K, d_f], got shape {self.part_features.shape}"
            )
        n, _, d_f = self.part_features.shape
        if self.nonproto_features.shape != (n, d_f):
            raise ValidationError(
                f"nonproto_features shape {self.nonproto_features.shape} "
                f"inconsistent with part_features {(n, d_f)}"
            )
        if self.labels.shape != (n,):
            raise ValidationError(
                f"labels shape {self.labels.shape} inconsistent with n_samples={n}"
            )
        if self.n_classes < 1:
            raise ValidationError(f"n_classes must be >= 1, got {self.n_classes}")
        for name, arr in (("part_features", self.part_features),
                          ("nonproto_features", self.nonproto_features)):
            bad = ~np.isfinite(arr)
            if bad.any():
                idx = int(np.argwhere(bad)[0][0])
                raise ValidationError(f"non-finite value in {name} at sample {idx}")
        if n > 0 and int(self.labels.max()) >= self.n_classes:
            idx = int(np.argmax(self.labels >= self.n_classes))
            raise ValidationError(
                f"label {int(self.labels[idx])} at sample {idx} "
                f">= n_classes={self.n_classes}"
            )
        counts = np.bincount(self.labels.astype(np.int64), minlength=self.n_classes)
        if (counts == 0).any():
            missing = int(np.argmin(counts))
            raise ValidationError(f"class {missing} has no samples")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the planted-ground-truth generator.

    ``min_separation`` should exceed 2 * noise_sigma for the recovery
    guarantees exercised in the tests to hold; this is documented, not
    enforced.
    """

    n_classes: int = 5
    n_parts: int = 4
    feat_dim: int = 32
    samples_per_class: int = 40
    concepts_per_cell: int = 2
    noise_sigma: float = 0.02
    min_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "n_parts", "feat_dim", "samples_per_class",
                     "concepts_per_cell"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_sigma < 0 or self.min_separation < 0:
            raise ValidationError("noise_sigma and min_separation must be >= 0")


@dataclass
class GroundTruth:
    """Planted concept means and the per-(sample, part) concept assignment."""

    planted_means: np.ndarray  # [L, K, G, d_f] float32
    assignment: np.ndarray  # [n_samples, K] int64, values in [0, G)


def save_dataset(ds: PartFeatureDataset, path, format: str = "pfd"):
    """Write a dataset to ``path`` in binary PFD or CSV form."""
    ds.validate()
    path = Path(path)
    if format == "pfd":
        merged = np.concatenate(
            [ds.part_features, ds.nonproto_features[:, None, :]], axis=1
        )
        header = _HEADER.pack(MAGIC, VERSION, ds.n_samples, ds.n_parts,
                              ds.n_classes, ds.feat_dim)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(merged, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    elif format == "csv":
        cols = [f"part{p}_{d}" for p in range(ds.n_parts) for d in range(ds.feat_dim)]
        cols += [f"g_{d}" for d in range(ds.feat_dim)] + ["label"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in range(ds.n_samples):
                row = [repr(float(v)) for v in ds.part_features[i].ravel()]
                row += [repr(float(v)) for v in ds.nonproto_features[i]]
                row.append(str(int(ds.labels[i])))
                writer.writerow(row)
    else:
        raise ValidationError(f"unknown format {format!r} (expected 'pfd' or 'csv')")


def load_dataset(path, format: str = "pfd") -> PartFeatureDataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    if format == "pfd":
        return _load_pfd(path)
    if format == "csv":
        return _load_csv(path)
    raise ValidationError(f"unknown format {format!r} (expected 'pfd' or 'csv')")


def _load_pfd(path: Path) -> PartFeatureDataset:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than PFD header")
    magic, version, n, k, n_classes, d_f = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported PFD version {version}")
    feat_bytes = 4 * n * (k + 1) * d_f
    expected = _HEADER.size + feat_bytes + 4 * n
    if len(raw) != expected:
        raise ValidationError(
            f"{path}: payload size {len(raw)} != expected {expected} "
            f"for n_samples={n}, K={k}, d_f={d_f}"
        )
    merged = np.frombuffer(raw, dtype="<f4", count=n * (k + 1) * d_f,
                           offset=_HEADER.size).reshape(n, k + 1, d_f)
    labels = np.frombuffer(raw, dtype="<u4", count=n,
                           offset=_HEADER.size + feat_bytes)
    return PartFeatureDataset(
        part_features=merged[:, :k, :].copy(),
        nonproto_features=merged[:, k, :].copy(),
        labels=labels.copy(),
        n_classes=n_classes,
    )


def _load_csv(path: Path) -> PartFeatureDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = list(reader)

    part_cols = [c for c in header if c.startswith("part")]
    g_cols = [c for c in header if c.startswith("g_")]
    if not part_cols or not g_cols or header[-1] != "label":
        raise FormatError(f"{path}: header does not match part*/g_*/label layout")
    try:
        pd_pairs = [tuple(int(x) for x in c[4:].split("_")) for c in part_cols]
    except ValueError:
        raise FormatError(f"{path}: malformed part column name") from None
    k = max(p for p, _ in pd_pairs) + 1
    d_f = max(d for _, d in pd_pairs) + 1
    if len(part_cols) != k * d_f or len(g_cols) != d_f:
        raise ValidationError(
            f"{path}: expected {k}x{d_f} part columns and {d_f} g columns, "
            f"got {len(part_cols)} and {len(g_cols)}"
        )

    n = len(rows)
    parts = np.zeros((n, k, d_f), dtype=np.float32)
    g = np.zeros((n, d_f), dtype=np.float32)
    labels = np.zeros(n, dtype=np.uint32)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i} has {len(row)} fields, "
                                  f"expected {len(header)}")
        try:
            vals = np.array(row[:-1], dtype=np.float64)
            labels[i] = int(row[-1])
        except ValueError:
            raise FormatError(f"{path}: row {i} has a non-numeric field") from None
        parts[i] = vals[: k * d_f].reshape(k, d_f)
        g[i] = vals[k * d_f:]

    # L is the number of distinct labels; labels must be the contiguous
    # range 0..L-1, so any label >= L names a gap.
    n_classes = len(np.unique(labels)) if n else 0
    too_big = labels >= n_classes
    if too_big.any():
        i = int(np.argmax(too_big))
        raise ValidationError(
            f"{path}: row {i} has label {int(labels[i])} >= n_classes={n_classes}"
        )
    return PartFeatureDataset(parts, g, labels, n_classes)


def _sphere_points(rng: np.random.Generator, count: int, dim: int,
                   min_separation: float, context: str) -> np.ndarray:
    """Draw ``count`` unit vectors with pairwise distance >= min_separation."""
    points = np.zeros((count, dim))
    for i in range(count):
        for _ in range(_MAX_REJECTIONS):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if i == 0 or np.linalg.norm(points[:i] - v, axis=1).min() >= min_separation:
                points[i] = v
                break
        else:
            raise GenerationError(
                f"could not place mean {i + 1}/{count} in {context} at "
                f"min_separation={min_separation}; reduce the concept count "
                f"or the separation"
            )
    return points


def generate_synthetic(spec: SyntheticSpec) -> tuple[PartFeatureDataset, GroundTruth]:
    """Generate a planted-concept dataset plus its ground truth.

    Per (class, part) cell, ``concepts_per_cell`` means are drawn on the unit
    sphere with pairwise distance >= min_separation; each sample's part
    feature is its assigned mean plus isotropic Gaussian noise. The
    non-prototypical vector g follows one analogous mean per class.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    L, K, G, d_f = (spec.n_classes, spec.n_parts, spec.concepts_per_cell,
                    spec.feat_dim)
    n = L * spec.samples_per_class

    means = np.zeros((L, K, G, d_f), dtype=np.float32)
    for j in range(L):
        for p in range(K):
            means[j, p] = _sphere_points(rng, G, d_f, spec.min_separation,
                                         f"cell (class={j}, part={p})")
    g_means = _sphere_points(rng, L, d_f, spec.min_separation,
                             "non-prototypical class means").astype(np.float32)

    labels = np.repeat(np.arange(L, dtype=np.uint32), spec.samples_per_class)
    assignment = rng.integers(0, G, size=(n, K))

    parts = means[labels.astype(np.int64)[:, None],
                  np.arange(K)[None, :], assignment].astype(np.float64)
    g = g_means[labels.astype(np.int64)].astype(np.float64)
    if spec.noise_sigma > 0:
        parts = parts + spec.noise_sigma * rng.standard_normal(parts.shape)
        g = g + spec.noise_sigma * rng.standard_normal(g.shape)

    ds = PartFeatureDataset(parts.astype(np.float32), g.astype(np.float32),
                            labels, L)
    return ds, GroundTruth(planted_means=means, assignment=assignment)


def split_kfold(ds: PartFeatureDataset, k: int, seed: int) -> list[np.ndarray]:
    """Stratified k-fold split; returns k disjoint sorted index arrays."""
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < k:
            raise StratificationError(
                f"class {c} has {len(idx)} samples, fewer than k={k}"
            )
        perm = rng.permutation(idx)
        for f in range(k):
            folds[f].extend(perm[f::k])
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def subset(ds: PartFeatureDataset, indices: np.ndarray) -> PartFeatureDataset:
    """Dataset restricted to ``indices`` (class set must stay complete)."""
    indices = np.asarray(indices, dtype=np.int64)
    return PartFeatureDataset(
        part_features=ds.part_features[indices],
        nonproto_features=ds.nonproto_features[indices],
        labels=ds.labels[indices],
        n_classes=ds.n_classes,
    )
