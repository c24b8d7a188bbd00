"""Synthetic desk-scale corpora: smooth gradients, blobs, and stripes."""

from pathlib import Path

import numpy as np

from .codec import save_image


def synthetic_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One random smooth RGB image in [0,1] (gradient + gaussian blobs)."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    img = np.zeros((size, size, 3), np.float32)
    for c in range(3):
        a, b, base = rng.uniform(-0.5, 0.5, 3)
        img[..., c] = 0.5 + base * 0.3 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        sigma = rng.uniform(0.08, 0.25)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        color = rng.uniform(-0.4, 0.4, 3)
        img += blob[..., None] * color[None, None, :]
    if rng.random() < 0.5:
        freq = rng.uniform(4, 12)
        phase = rng.uniform(0, 2 * np.pi)
        stripes = 0.15 * np.sin(freq * 2 * np.pi * xx + phase)
        img += stripes[..., None] * rng.uniform(0, 1, 3)[None, None, :]
    return np.clip(img, 0.0, 1.0)


def make_corpus(out_dir, count: int, seed: int, size_range=(64, 128)) -> list:
    """Write `count` synthetic PNGs and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        size = int(rng.integers(size_range[0], size_range[1] + 1))
        img = synthetic_image(rng, size)
        path = out_dir / f"img_{i:03d}.png"
        save_image(path, img)
        paths.append(path)
    return paths
