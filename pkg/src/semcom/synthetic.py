"""Deterministic synthetic inspection scenes with annotated gauge panels.

Used for fixtures, smoke tests and demos when no real dataset is at hand.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import BoundingBox


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def scene(size: int = 128, seed: int = 0, panel: bool = True) -> tuple[np.ndarray, list[BoundingBox]]:
    """One HxWx3 uint8 scene and the boxes of its gauge panels."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    top, bottom = rng.uniform(0.3, 0.9, 3), rng.uniform(0.1, 0.6, 3)
    t = (yy / (size - 1))[..., None]
    img = top * (1 - t) + bottom * t
    img = img + 0.05 * np.sin(xx / size * rng.uniform(2, 6) + rng.uniform(0, 6))[..., None]

    for _ in range(int(rng.integers(2, 5))):  # cabinets / structures
        h, w = rng.integers(size // 8, size // 2, 2)
        y0, x0 = rng.integers(0, size - h), rng.integers(0, size - w)
        img[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0.1, 0.8, 3)
    for _ in range(int(rng.integers(1, 3))):  # poles / cables
        x0 = int(rng.integers(0, size - 4))
        img[:, x0 : x0 + int(rng.integers(2, 5))] = rng.uniform(0.0, 0.3, 3)

    boxes = []
    if panel:
        side = int(rng.integers(size // 3, size // 2))
        y0, x0 = (int(v) for v in rng.integers(0, size - side, 2))
        img[y0 : y0 + side, x0 : x0 + side] = rng.uniform(0.75, 0.95, 3)
        cy, cx, r = y0 + side / 2, x0 + side / 2, side * 0.38
        img[_disk(yy, xx, cy, cx, r)] = (0.97, 0.97, 0.92)
        ring = _disk(yy, xx, cy, cx, r) & ~_disk(yy, xx, cy, cx, r - max(1.5, side / 20))
        img[ring] = (0.15, 0.15, 0.15)
        angle = rng.uniform(0, 2 * np.pi)
        for s in np.linspace(0, r * 0.85, 4 * side):
            py, px = int(round(cy + s * np.sin(angle))), int(round(cx + s * np.cos(angle)))
            img[max(py - 1, 0) : py + 1, max(px - 1, 0) : px + 1] = (0.8, 0.1, 0.1)
        boxes.append(BoundingBox(x0, y0, x0 + side, y0 + side, "panel", round(float(rng.uniform(0.6, 1.0)), 3)))

    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255).astype(np.uint8), boxes


def write_dataset(root: str | Path, count: int = 8, size: int = 128, seed: int = 0, panels: bool = True) -> list[Path]:
    """Write ``scene_XX.png`` files with ``.txt`` annotation sidecars."""
    from PIL import Image

    from .enhancement import write_sidecar

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        arr, boxes = scene(size, seed * 1000 + i, panel=panels)
        p = root / f"scene_{i:02d}.png"
        Image.fromarray(arr).save(p, format="PNG")
        write_sidecar(p.with_suffix(".txt"), boxes)
        paths.append(p)
    return paths
