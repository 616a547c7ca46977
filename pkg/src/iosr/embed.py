"""Deterministic toy feature extractor behind a pluggable embedding boundary.

Pipeline: per-channel g x g mean pooling -> seeded fixed random projection
-> clamp at zero -> unit-norm scaling. Single-channel images are replicated
to three channels so the projection matrix has a fixed input width.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

CHANNELS = 3


@dataclass(frozen=True)
class ExtractorConfig:
    patch_grid: int = 8
    output_dim: int = 64
    projection_seed: int = 0

    def __post_init__(self):
        if self.patch_grid <= 0:
            raise ValueError("patch_grid must be positive")
        if self.output_dim <= 0:
            raise ValueError("output_dim must be positive")


def _projection_matrix(cfg: ExtractorConfig) -> np.ndarray:
    fan_in = cfg.patch_grid * cfg.patch_grid * CHANNELS
    rng = np.random.default_rng(cfg.projection_seed)
    return rng.standard_normal((cfg.output_dim, fan_in)) / np.sqrt(fan_in)


def _validate_image(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxW or HxWxC with 1 or 3 channels, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("empty image")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("pixel values must be finite and within [0, 1]")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, CHANNELS, axis=2)
    return arr


def _mean_pool(arr: np.ndarray, g: int) -> np.ndarray:
    """g x g per-channel mean pooling; bins never empty even when g > H or W."""
    h, w, _ = arr.shape

    def edges(n):
        lo = (np.arange(g) * n) // g
        hi = np.maximum(lo + 1, (np.arange(1, g + 1) * n) // g)
        return np.minimum(lo, n - 1), np.minimum(hi, n)

    row_lo, row_hi = edges(h)
    col_lo, col_hi = edges(w)
    pooled = np.empty((g, g, CHANNELS))
    for i in range(g):
        rows = arr[row_lo[i] : row_hi[i]]
        for j in range(g):
            pooled[i, j] = rows[:, col_lo[j] : col_hi[j]].mean(axis=(0, 1))
    return pooled


class FeatureExtractor:
    """Immutable extractor; safe to share across threads."""

    def __init__(self, cfg: ExtractorConfig = ExtractorConfig()):
        self.cfg = cfg
        self._projection = _projection_matrix(cfg)
        self._projection.flags.writeable = False

    @property
    def fingerprint(self) -> str:
        return extractor_fingerprint(self.cfg)

    def extract(self, image) -> np.ndarray:
        """Map an image of any size to a fixed-dimension feature vector.

        Output entries are non-negative and the vector has unit Euclidean
        norm, except that an all-zero image maps to the zero vector.
        """
        arr = _validate_image(image)
        pooled = _mean_pool(arr, self.cfg.patch_grid).ravel()
        z = self._projection @ pooled
        np.maximum(z, 0.0, out=z)
        norm = np.linalg.norm(z)
        if norm == 0.0:
            return z
        return z / norm


def extract(image, cfg: ExtractorConfig) -> np.ndarray:
    return FeatureExtractor(cfg).extract(image)


def extractor_fingerprint(cfg: ExtractorConfig) -> str:
    """Content hash of the projection matrix and config.

    Heads record this digest; feeding features from a differently
    fingerprinted extractor into a head is rejected upstream.
    """
    h = hashlib.sha256()
    h.update(struct.pack("<qqq", cfg.patch_grid, cfg.output_dim, cfg.projection_seed))
    h.update(_projection_matrix(cfg).tobytes())
    return h.hexdigest()
