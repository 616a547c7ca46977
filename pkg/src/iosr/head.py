"""Incremental linear classifier head.

The head is an immutable snapshot: a (dim x n) weight matrix with one
column and one bias per class, plus a class registry. New classes are
taught by appending a randomly initialized column and training only that
column one-vs-all against negatives sampled from the classes the new
positives are most confused with.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .corpus import LabeledFeatureSet
from .seeding import derive_seed

CHECKPOINT_MAGIC = b"IOSH1"


class DimensionMismatchError(ValueError):
    """Input feature dimension differs from the head's."""


class ExtractorMismatchError(ValueError):
    """Features come from an extractor the head was not built with."""


class DuplicateClassError(ValueError):
    """A class with the requested name already exists."""


class CheckpointError(Exception):
    """Malformed head checkpoint file."""


@dataclass(frozen=True)
class ClassId:
    id: int
    name: str
    origin: str  # "base" | "added"

    def __post_init__(self):
        if self.origin not in ("base", "added"):
            raise ValueError(f"origin must be 'base' or 'added', got {self.origin!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for column training and negative sampling.

    Defaults are tuned for appended-column training: the new column races
    the already-converged frozen columns for the argmax, so it needs more
    optimization pressure than a jointly trained layer. Joint reference
    training uses the softer profile in evaluation.joint_train_config.
    """

    init_sigma: float = 0.01
    learning_rate: float = 0.3
    epochs: int = 100
    minibatch: int = 32
    negatives_per_positive: float = 3.0
    smoothing: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.init_sigma <= 0 or self.learning_rate <= 0 or self.minibatch <= 0:
            raise ValueError("init_sigma, learning_rate and minibatch must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.negatives_per_positive <= 0 or self.smoothing <= 0:
            raise ValueError("negatives_per_positive and smoothing must be positive")


@dataclass(frozen=True)
class ConfusionDistribution:
    """Draw probabilities over known classes for negative sampling."""

    probs: tuple  # ((class_id, probability), ...) sorted by class id

    def __post_init__(self):
        total = sum(p for _, p in self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")
        if any(p < 0 for _, p in self.probs):
            raise ValueError("probabilities must be non-negative")

    def as_dict(self) -> dict[int, float]:
        return dict(self.probs)


class ClassifierHead:
    """Immutable classifier snapshot; mutation-like operations return a new head."""

    def __init__(self, weights, biases, registry, extractor_digest="", version=0):
        weights = np.array(weights, dtype=np.float64, order="C")
        biases = np.array(biases, dtype=np.float64)
        registry = tuple(registry)
        if weights.ndim != 2:
            raise ValueError("weights must be 2-D (dim x classes)")
        n = weights.shape[1]
        if biases.shape != (n,) or len(registry) != n:
            raise ValueError("column count, bias count and registry size must agree")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise ValueError("weights and biases must be finite")
        if [c.id for c in registry] != list(range(n)):
            raise ValueError("registry ids must be dense 0..n-1")
        if len({c.name for c in registry}) != n:
            raise DuplicateClassError("class names must be unique")
        weights.flags.writeable = False
        biases.flags.writeable = False
        self.weights = weights
        self.biases = biases
        self.registry = registry
        self.extractor_digest = str(extractor_digest)
        self.version = int(version)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    def class_named(self, name: str):
        for c in self.registry:
            if c.name == name:
                return c
        return None

    def __eq__(self, other):
        if not isinstance(other, ClassifierHead):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
            and self.registry == other.registry
            and self.extractor_digest == other.extractor_digest
            and self.version == other.version
        )

    def __repr__(self):
        return f"ClassifierHead(dim={self.dim}, classes={self.n_classes}, version={self.version})"


def make_head(dim, class_names, extractor_digest="", origin="base") -> ClassifierHead:
    """Fresh all-zero head over the given class names (ids assigned densely)."""
    registry = [ClassId(i, name, origin) for i, name in enumerate(class_names)]
    return ClassifierHead(
        np.zeros((dim, len(registry))), np.zeros(len(registry)), registry, extractor_digest
    )


def _check_input(head: ClassifierHead, x, digest=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (head.dim,):
        raise DimensionMismatchError(f"expected feature of dim {head.dim}, got shape {x.shape}")
    if digest is not None and digest != head.extractor_digest:
        raise ExtractorMismatchError(
            f"features tagged {digest[:12]!r} but head expects {head.extractor_digest[:12]!r}"
        )
    return x


def logits(head: ClassifierHead, x, digest=None) -> np.ndarray:
    """Per-class scores theta_i . x + bias_i.

    Computed with a column-independent reduction so scores of existing
    classes are bit-identical before and after a column append.
    """
    x = _check_input(head, x, digest)
    return (head.weights * x[:, None]).sum(axis=0) + head.biases


def logits_batch(head: ClassifierHead, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.dim:
        raise DimensionMismatchError(f"expected (n, {head.dim}) features, got shape {X.shape}")
    return X @ head.weights + head.biases


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(head: ClassifierHead, x, digest=None):
    """Argmax class (ties to the lowest id) and the softmax probability vector."""
    z = logits(head, x, digest)
    probs = softmax(z)
    return head.registry[int(np.argmax(z))], probs


def predict_batch(head: ClassifierHead, X) -> np.ndarray:
    """Argmax class ids for a feature matrix."""
    return np.argmax(logits_batch(head, X), axis=1)


def append_class(head: ClassifierHead, name: str, cfg: TrainConfig) -> ClassifierHead:
    """Grow the head by one class with a Normal(0, init_sigma^2) column.

    Existing columns and biases are carried over bit-identically.
    """
    if head.class_named(name) is not None:
        raise DuplicateClassError(f"class {name!r} already registered")
    rng = np.random.default_rng(cfg.seed)
    new_col = rng.standard_normal(head.dim) * cfg.init_sigma
    new_bias = rng.standard_normal() * cfg.init_sigma
    weights = np.concatenate([head.weights, new_col[:, None]], axis=1)
    biases = np.concatenate([head.biases, [new_bias]])
    registry = head.registry + (ClassId(head.n_classes, name, "added"),)
    return ClassifierHead(weights, biases, registry, head.extractor_digest, head.version + 1)


def confusion_distribution(
    head: ClassifierHead, positives: LabeledFeatureSet, smoothing: float, n_classes=None
) -> ConfusionDistribution:
    """How often the new positives are taken for each known class.

    Counts argmax predictions of the positives over the first n_classes
    columns (all columns by default) and smooths:
    p_i = (count_i + eps) / (total + n * eps).
    """
    if len(positives) == 0:
        raise ValueError("positives must be non-empty")
    n = head.n_classes if n_classes is None else int(n_classes)
    if not 1 <= n <= head.n_classes:
        raise ValueError(f"n_classes must be in 1..{head.n_classes}")
    scores = logits_batch(head, positives.features.astype(np.float64))[:, :n]
    counts = np.bincount(np.argmax(scores, axis=1), minlength=n).astype(np.float64)
    probs = (counts + smoothing) / (counts.sum() + n * smoothing)
    return ConfusionDistribution(tuple((i, float(p)) for i, p in enumerate(probs)))


def sample_negatives(
    pools: dict[int, LabeledFeatureSet], dist: ConfusionDistribution, count: int, seed: int
) -> LabeledFeatureSet:
    """Draw negatives i.i.d.: class by dist, example uniformly within its pool."""
    if count <= 0:
        raise ValueError("count must be positive")
    entries = [(cid, p) for cid, p in dist.probs if p > 0.0]
    for cid, _ in entries:
        if cid not in pools or len(pools[cid]) == 0:
            raise ValueError(f"class {cid} has positive draw probability but no pool samples")
    rng = np.random.default_rng(seed)
    ids = np.array([cid for cid, _ in entries])
    p = np.array([pr for _, pr in entries])
    picks = rng.choice(len(entries), size=count, p=p / p.sum())
    sizes = np.array([len(pools[cid]) for cid in ids])
    offsets = np.minimum((rng.random(count) * sizes[picks]).astype(np.intp), sizes[picks] - 1)
    dim = pools[int(ids[0])].dim
    features = np.empty((count, dim), dtype=np.float32)
    labels = np.empty(count, dtype=np.uint16)
    names = {}
    for k in range(count):
        pool = pools[int(ids[picks[k]])]
        features[k] = pool.features[offsets[k]]
        labels[k] = pool.labels[offsets[k]]
        names.update(pool.class_names)
    return LabeledFeatureSet(dim, names, labels, features)


def binary_logistic_loss_grad(theta, bias, X, targets):
    """Mean binary logistic loss of scores X.theta + bias and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    s = X @ theta + bias
    # log(1 + exp(-|s|)) form avoids overflow on saturated scores
    loss = np.mean(np.logaddexp(0.0, s) - t * s)
    sig = 1.0 / (1.0 + np.exp(-s))
    g = sig - t
    return loss, X.T @ g / len(t), float(np.mean(g))


def train_new_column(
    head: ClassifierHead,
    positives: LabeledFeatureSet,
    negatives: LabeledFeatureSet,
    cfg: TrainConfig,
) -> ClassifierHead:
    """Minibatch SGD on the binary logistic objective for the last column only."""
    if len(positives) == 0 or len(negatives) == 0:
        raise ValueError("positives and negatives must be non-empty")
    if positives.dim != head.dim or negatives.dim != head.dim:
        raise DimensionMismatchError("training data dimension differs from head dimension")
    X = np.concatenate(
        [positives.features.astype(np.float64), negatives.features.astype(np.float64)]
    )
    t = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    theta = head.weights[:, -1].copy()
    bias = float(head.biases[-1])
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(t))
        for start in range(0, len(t), cfg.minibatch):
            batch = order[start : start + cfg.minibatch]
            _, g_theta, g_bias = binary_logistic_loss_grad(theta, bias, X[batch], t[batch])
            theta -= cfg.learning_rate * g_theta
            bias -= cfg.learning_rate * g_bias
    weights = head.weights.copy()
    weights[:, -1] = theta
    biases = head.biases.copy()
    biases[-1] = bias
    return ClassifierHead(weights, biases, head.registry, head.extractor_digest, head.version + 1)


def add_class_end_to_end(
    head: ClassifierHead,
    name: str,
    positives: LabeledFeatureSet,
    pools: dict[int, LabeledFeatureSet],
    cfg: TrainConfig,
) -> ClassifierHead:
    """Append, sample confusion-weighted negatives, and train the new column.

    All randomness (column init, negative draws, SGD shuffling) derives
    from cfg.seed, so identical inputs give an identical head.
    """
    dist = confusion_distribution(head, positives, cfg.smoothing)
    grown = append_class(head, name, replace(cfg, seed=derive_seed(cfg.seed, 1)))
    n_neg = max(int(round(cfg.negatives_per_positive * len(positives))), 1)
    negatives = sample_negatives(pools, dist, n_neg, derive_seed(cfg.seed, 2))
    return train_new_column(
        grown, positives, negatives, replace(cfg, seed=derive_seed(cfg.seed, 3))
    )


def save_head(head: ClassifierHead, path) -> None:
    """Bit-exact checkpoint: magic, version counter, shape, digest, registry, weights."""
    digest = head.extractor_digest.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", head.version, head.dim, head.n_classes)]
    parts.append(struct.pack("<H", len(digest)))
    parts.append(digest)
    for c in head.registry:
        name = c.name.encode("utf-8")
        parts.append(struct.pack("<HBH", c.id, 0 if c.origin == "base" else 1, len(name)))
        parts.append(name)
    parts.append(np.asfortranarray(head.weights).tobytes(order="F"))
    parts.append(head.biases.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_head(path) -> ClassifierHead:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = data[off : off + n]
        off += n
        return chunk

    version, dim, n = struct.unpack("<III", take(12, "header"))
    (digest_len,) = struct.unpack("<H", take(2, "digest length"))
    digest = take(digest_len, "digest").decode("utf-8")
    registry = []
    for _ in range(n):
        cid, origin, name_len = struct.unpack("<HBH", take(5, "registry entry"))
        name = take(name_len, "class name").decode("utf-8")
        registry.append(ClassId(cid, name, "base" if origin == 0 else "added"))
    weights = np.frombuffer(take(8 * dim * n, "weights"), dtype="<f8").reshape((dim, n), order="F")
    biases = np.frombuffer(take(8 * n, "biases"), dtype="<f8")
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes in checkpoint")
    return ClassifierHead(weights, biases, registry, digest, version)
