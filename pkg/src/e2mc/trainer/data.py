"""Synthetic labelled datasets and the view augmentations used for training.

Labels are only ever read by probes; SSL training sees inputs alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..transforms import make_rng

GENERATORS = ("gaussian-mixture-2d", "ring-classes", "small-images-8x8")


@dataclass
class SyntheticDataset:
    generator: str = "gaussian-mixture-2d"
    n_samples: int = 4096
    n_classes: int = 16
    seed: int = 0
    spread: float = 0.2

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}", "$.dataset.generator")
        if self.n_samples < 4 or self.n_classes < 2:
            raise ConfigError("need n_samples >= 4 and n_classes >= 2", "$.dataset")

    @property
    def input_dim(self) -> int:
        return 64 if self.generator == "small-images-8x8" else 2

    @property
    def is_image(self) -> bool:
        return self.generator == "small-images-8x8"

    def to_dict(self) -> dict:
        return asdict(self)

    def generate(self) -> tuple[np.ndarray, np.ndarray]:
        """Inputs ``(n, input_dim)`` and integer labels ``(n,)``; deterministic."""
        rng = make_rng([self.seed, 0xDA7A])
        labels = np.arange(self.n_samples) % self.n_classes
        rng.shuffle(labels)
        if self.generator == "gaussian-mixture-2d":
            x = _mixture(labels, self.n_classes, self.spread, rng)
        elif self.generator == "ring-classes":
            x = _rings(labels, self.spread, rng)
        else:
            x = _images(labels, self.n_classes, self.spread, rng)
        return x, labels


def mixture_centers(n_classes: int) -> np.ndarray:
    """Class means on a square grid with unit pitch, centered at the origin."""
    side = math.ceil(math.sqrt(n_classes))
    idx = np.arange(n_classes)
    centers = np.column_stack((idx % side, idx // side)).astype(np.float64)
    return centers - centers.mean(axis=0)


def _mixture(labels, n_classes, spread, rng):
    centers = mixture_centers(n_classes)
    return centers[labels] + spread * rng.standard_normal((labels.size, 2))


def _rings(labels, spread, rng):
    radius = 1.0 + labels + spread * rng.standard_normal(labels.size)
    angle = rng.uniform(0.0, 2.0 * math.pi, labels.size)
    return np.column_stack((radius * np.cos(angle), radius * np.sin(angle)))


def _images(labels, n_classes, spread, rng):
    raw = rng.standard_normal((n_classes, 8, 8))
    # 3x3 box blur so templates have spatial structure worth shifting
    padded = np.pad(raw, ((0, 0), (1, 1), (1, 1)), mode="wrap")
    smooth = sum(
        padded[:, 1 + di:9 + di, 1 + dj:9 + dj] for di in (-1, 0, 1) for dj in (-1, 0, 1)
    ) / 9.0
    smooth /= smooth.reshape(n_classes, -1).std(axis=1)[:, None, None]
    x = smooth[labels] + spread * rng.standard_normal((labels.size, 8, 8))
    return x.reshape(labels.size, 64)


@dataclass
class AugmentSpec:
    """Stand-in view augmentation for the synthetic data."""

    noise_std: float = 0.1
    scale_low: float = 1.0
    scale_high: float = 1.0
    max_shift: int = 0  # image data only: random translation in pixels

    def __post_init__(self):
        if self.noise_std < 0 or not 0 < self.scale_low <= self.scale_high:
            raise ConfigError("invalid augmentation ranges", "$.augmentation")
        if self.max_shift < 0:
            raise ConfigError("max_shift must be >= 0", "$.augmentation.max_shift")

    def to_dict(self) -> dict:
        return asdict(self)


def _shift_images(x: np.ndarray, max_shift: int, rng) -> np.ndarray:
    n = x.shape[0]
    imgs = x.reshape(n, 8, 8)
    pad = np.pad(imgs, ((0, 0), (max_shift, max_shift), (max_shift, max_shift)))
    di = rng.integers(0, 2 * max_shift + 1, n)
    dj = rng.integers(0, 2 * max_shift + 1, n)
    out = np.empty_like(imgs)
    for k in range(n):
        out[k] = pad[k, di[k]:di[k] + 8, dj[k]:dj[k] + 8]
    return out.reshape(n, 64)


def augment(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a batch ``(n, D)``."""
    n = x.shape[0]
    out = x
    if spec.max_shift and x.shape[1] == 64:
        out = _shift_images(out, spec.max_shift, rng)
    if spec.scale_high > spec.scale_low:
        out = out * rng.uniform(spec.scale_low, spec.scale_high, (n, 1))
    if spec.noise_std > 0:
        out = out + spec.noise_std * rng.standard_normal(out.shape)
    return np.array(out, dtype=np.float64)


def augment_views(x, spec: AugmentSpec, rng: np.random.Generator, n_views: int = 2):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return [augment(x, spec, rng) for _ in range(n_views)]


def augment_pair(x, spec: AugmentSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Two views of a sample (1-D) or batch (2-D); deterministic given ``seed``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a, b = augment_views(x, spec, make_rng(seed), 2)
    if single:
        return a[0], b[0]
    return a, b
