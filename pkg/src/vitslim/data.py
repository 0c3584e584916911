"""Synthetic images whose label is carried by a few known patches.

Each image is low-amplitude noise plus a brighter motif covering 1-3 patches. The
motif's position (the region of the patch grid it sits in) determines the
class, so the ground-truth salient patches are known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray
    label: int
    salient_patches: tuple


def class_regions(grid: int, classes: int) -> list:
    """Disjoint cell sets (row-major indices), one per class."""
    if not 1 <= classes <= grid * grid:
        raise ConfigError(f"need 1 <= classes <= {grid * grid}, got {classes}")
    side = math.isqrt(classes)
    cells = np.arange(grid * grid).reshape(grid, grid)
    if side * side == classes and grid % side == 0:
        b = grid // side
        return [
            cells[r * b:(r + 1) * b, c * b:(c + 1) * b].reshape(-1).tolist()
            for r in range(side)
            for c in range(side)
        ]
    return [chunk.tolist() for chunk in np.array_split(cells.reshape(-1), classes)]


def _templates(p: int) -> np.ndarray:
    yy, xx = np.mgrid[0:p, 0:p]
    mid = (p - 1) / 2
    cross = (np.abs(yy - mid) < 1) | (np.abs(xx - mid) < 1)
    ring = np.maximum(np.abs(yy - mid), np.abs(xx - mid)) > mid - 1
    checker = (yy + xx) % 2 == 0
    solid = np.ones((p, p), dtype=bool)
    return np.stack([cross, ring, checker, solid]).astype(np.float64)


def make_synth_dataset(seed: int, count: int, grid: int = 4, classes: int = 4,
                       patch: int = 4, channels: int = 1, noise: float = 0.3,
                       contrast: float = 0.5) -> list:
    regions = class_regions(grid, classes)
    rng = np.random.default_rng(seed)
    templates = _templates(patch)
    side = grid * patch
    out = []
    for _ in range(count):
        label = int(rng.integers(classes))
        region = regions[label]
        k = int(rng.integers(1, min(3, len(region)) + 1))
        cells = tuple(sorted(int(c) for c in rng.choice(region, size=k, replace=False)))
        image = noise * rng.random((side, side, channels))
        for cell in cells:
            r, c = divmod(cell, grid)
            motif = contrast * rng.uniform(0.85, 1.0) * templates[rng.integers(len(templates))]
            block = image[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch, :]
            block += motif[:, :, None]
        np.clip(image, 0.0, 1.0, out=image)
        out.append(SynthSample(image, label, cells))
    return out


def stack(samples) -> tuple:
    """(images (n, S, S, c), labels (n,)) arrays."""
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def salient_mask(samples, N: int) -> np.ndarray:
    mask = np.zeros((len(samples), N), dtype=bool)
    for i, s in enumerate(samples):
        mask[i, list(s.salient_patches)] = True
    return mask
