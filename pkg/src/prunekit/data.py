"""Seeded class-template images standing in for a real image dataset."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SHAPE = (3, 8, 8)


@dataclass(frozen=True)
class SyntheticDataset:
    images: np.ndarray  # [N, 3, 8, 8]
    labels: np.ndarray  # [N] int64
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.labels)


def class_templates(seed: int, classes: int, contrast: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    return contrast * rng.uniform(-1.0, 1.0, (classes, *IMAGE_SHAPE))


def _balanced_labels(rng, n: int, classes: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % classes).astype(np.int64)


def make_dataset(seed: int, classes: int = 10, n_train: int = 2000, n_test: int = 500,
                 noise: float = 0.3, contrast: float = 0.3) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Train and test splits of template + Gaussian noise, clipped to [-1, 1]."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    templates = class_templates(seed, classes, contrast)
    splits = []
    for k, (split, n) in enumerate((("train", n_train), ("test", n_test)), start=1):
        rng = np.random.default_rng([seed, k])
        labels = _balanced_labels(rng, n, classes)
        images = templates[labels] + noise * rng.standard_normal((n, *IMAGE_SHAPE))
        splits.append(SyntheticDataset(np.clip(images, -1.0, 1.0), labels, split, seed))
    return splits[0], splits[1]


def nearest_template_predict(images: np.ndarray, templates: np.ndarray) -> np.ndarray:
    flat = images.reshape(len(images), -1)
    t = templates.reshape(len(templates), -1)
    d = ((flat[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)
