"""Labeled feature corpora: synthetic generation, binary persistence, splits.

Feature sets are immutable structure-of-arrays values (float32 features,
uint16 labels) so that writing and re-loading a corpus is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"IOSR1"
FORMAT_VERSION = 1


class CorpusError(Exception):
    """Base class for corpus file and validation errors."""


class CorpusFormatError(CorpusError):
    """Bad magic, unsupported version, or malformed container structure."""


class TruncatedRecordError(CorpusError):
    """File ended in the middle of a table entry or feature record."""


class DimensionMismatchError(CorpusError):
    """Declared feature dimension is invalid or inconsistent."""


class UnknownLabelError(CorpusError):
    """A record references a label id absent from the class table."""


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the deterministic Gaussian-cluster corpus generator."""

    dim: int = 64
    class_count: int = 8
    train_per_class: int = 200
    test_per_class: int = 100
    mean_radius: float = 5.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for field in ("dim", "class_count", "train_per_class", "test_per_class"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive, got {getattr(self, field)}")
        if self.mean_radius <= 0:
            raise ValueError("mean_radius must be positive")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")


class LabeledFeatureSet:
    """Immutable set of (label, feature) examples sharing one dimension."""

    def __init__(self, dim, class_names, labels, features):
        dim = int(dim)
        if dim <= 0:
            raise DimensionMismatchError(f"dim must be positive, got {dim}")
        labels = np.array(labels, dtype=np.uint16)
        features = np.array(features, dtype=np.float32, order="C")
        if features.ndim == 1 and features.size == 0:
            features = features.reshape(0, dim)
        if features.ndim != 2 or features.shape != (labels.shape[0], dim):
            raise DimensionMismatchError(
                f"features shape {features.shape} does not match ({labels.shape[0]}, {dim})"
            )
        if features.size and not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        names = {int(k): str(v) for k, v in class_names.items()}
        if labels.size and not np.all(np.isin(labels, list(names))):
            raise UnknownLabelError("labels reference class ids missing from the class table")
        if len(set(names.values())) != len(names):
            raise ValueError("class names must be unique")
        labels.flags.writeable = False
        features.flags.writeable = False
        self.dim = dim
        self.class_names = names
        self.labels = labels
        self.features = features

    def __len__(self):
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledFeatureSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.class_names == other.class_names
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self):
        return (
            f"LabeledFeatureSet(dim={self.dim}, classes={len(self.class_names)}, "
            f"examples={len(self)})"
        )

    @property
    def class_ids(self):
        return sorted(self.class_names)

    def subset(self, indices) -> "LabeledFeatureSet":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledFeatureSet(self.dim, self.class_names, self.labels[idx], self.features[idx])

    def per_class(self) -> dict[int, "LabeledFeatureSet"]:
        """Split into one single-class set per label id present."""
        out = {}
        for cid in np.unique(self.labels):
            cid = int(cid)
            mask = self.labels == cid
            out[cid] = LabeledFeatureSet(
                self.dim, {cid: self.class_names[cid]}, self.labels[mask], self.features[mask]
            )
        return out


def merge(sets) -> LabeledFeatureSet:
    """Concatenate feature sets; class tables must agree where they overlap."""
    sets = list(sets)
    if not sets:
        raise ValueError("merge needs at least one set")
    dim = sets[0].dim
    names: dict[int, str] = {}
    for s in sets:
        if s.dim != dim:
            raise DimensionMismatchError(f"cannot merge dim {s.dim} into dim {dim}")
        for cid, name in s.class_names.items():
            if names.setdefault(cid, name) != name:
                raise ValueError(f"conflicting names for class {cid}: {names[cid]!r} vs {name!r}")
    labels = np.concatenate([s.labels for s in sets])
    features = np.concatenate([s.features for s in sets])
    return LabeledFeatureSet(dim, names, labels, features)


def filter_classes(fset: LabeledFeatureSet, class_ids) -> LabeledFeatureSet:
    """Keep only examples (and table entries) of the given class ids."""
    keep = sorted(int(c) for c in class_ids)
    missing = [c for c in keep if c not in fset.class_names]
    if missing:
        raise UnknownLabelError(f"class ids {missing} not in the class table")
    mask = np.isin(fset.labels, keep)
    names = {c: fset.class_names[c] for c in keep}
    return LabeledFeatureSet(fset.dim, names, fset.labels[mask], fset.features[mask])


def synth_class_means(spec: SynthSpec) -> np.ndarray:
    """Class cluster centers: seeded Gaussian directions scaled to mean_radius."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0,)))
    raw = rng.standard_normal((spec.class_count, spec.dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return raw / norms * spec.mean_radius


def synth_gaussian_corpus(spec: SynthSpec):
    """Generate a deterministic (train, test) pair of Gaussian-cluster corpora.

    Samples of class c are mean_c + isotropic Normal(0, noise_sigma^2) noise.
    Identical specs produce bit-identical corpora.
    """
    means = synth_class_means(spec)
    names = {c: f"class_{c:02d}" for c in range(spec.class_count)}
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(1,)))

    def draw(per_class):
        labels = np.repeat(np.arange(spec.class_count, dtype=np.uint16), per_class)
        noise = rng.standard_normal((spec.class_count * per_class, spec.dim))
        feats = means[labels] + spec.noise_sigma * noise
        return LabeledFeatureSet(spec.dim, names, labels, feats.astype(np.float32))

    return draw(spec.train_per_class), draw(spec.test_per_class)


def synth_corpus_digest(spec: SynthSpec) -> str:
    """Stable tag identifying features produced by a given synthetic spec."""
    import hashlib

    h = hashlib.sha256()
    h.update(
        struct.pack(
            "<qqqqddQ",
            spec.dim,
            spec.class_count,
            spec.train_per_class,
            spec.test_per_class,
            spec.mean_radius,
            spec.noise_sigma,
            spec.seed & (2**64 - 1),
        )
    )
    return "synth-" + h.hexdigest()[:16]


def write_feature_file(fset: LabeledFeatureSet, path) -> None:
    """Write the binary container; identical sets produce identical bytes."""
    if len(fset) == 0:
        raise ValueError("refusing to write an empty feature set")
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION)]
    parts.append(struct.pack("<II", fset.dim, len(fset.class_names)))
    for cid in sorted(fset.class_names):
        name = fset.class_names[cid].encode("utf-8")
        parts.append(struct.pack("<HH", cid, len(name)))
        parts.append(name)
    parts.append(struct.pack("<I", len(fset)))
    feats = fset.features
    for i in range(len(fset)):
        parts.append(struct.pack("<H", int(fset.labels[i])))
        parts.append(feats[i].astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_feature_file(path) -> LabeledFeatureSet:
    """Read back exactly what write_feature_file produced."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 1 or data[: len(MAGIC)] != MAGIC:
        raise CorpusFormatError("bad magic bytes")
    off = len(MAGIC)
    version = data[off]
    off += 1
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported format version {version}")

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise TruncatedRecordError(f"file truncated while reading {what}")
        chunk = data[off : off + n]
        off += n
        return chunk

    dim, class_count = struct.unpack("<II", take(8, "header"))
    if dim == 0:
        raise DimensionMismatchError("declared dimension is zero")
    names = {}
    for _ in range(class_count):
        cid, name_len = struct.unpack("<HH", take(4, "class table"))
        names[cid] = take(name_len, "class name").decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "example count"))
    labels = np.empty(count, dtype=np.uint16)
    features = np.empty((count, dim), dtype=np.float32)
    rec_bytes = 4 * dim
    for i in range(count):
        (label,) = struct.unpack("<H", take(2, f"record {i} label"))
        if label not in names:
            raise UnknownLabelError(f"record {i} has unknown label id {label}")
        labels[i] = label
        features[i] = np.frombuffer(take(rec_bytes, f"record {i} features"), dtype="<f4")
    if off != len(data):
        raise CorpusFormatError(f"{len(data) - off} trailing bytes after last record")
    return LabeledFeatureSet(dim, names, labels, features)


def split(fset: LabeledFeatureSet, test_fraction: float, seed: int):
    """Stratified deterministic split into (train, test).

    Per-class test counts are round(n_c * test_fraction), clamped so both
    sides stay non-empty.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cid in np.unique(fset.labels):
        idx = np.flatnonzero(fset.labels == cid)
        if idx.size < 2:
            raise ValueError(f"class {int(cid)} has {idx.size} examples, need at least 2 to split")
        n_test = min(max(round(idx.size * test_fraction), 1), idx.size - 1)
        perm = rng.permutation(idx)
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return fset.subset(train_idx), fset.subset(test_idx)
