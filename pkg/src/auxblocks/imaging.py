"""Image dumps for adversarial batches.

Grids follow the originals / adversarials / amplified-difference layout.
Grayscale grids are written as binary PGM (P5); RGB grids go out as PNG
when Pillow is importable, falling back to binary PPM (P6).
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .attacks import AdvBatch


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)


def image_grid(images: np.ndarray, pad: int = 2) -> np.ndarray:
    """Lay an (N, C, H, W) batch out horizontally with white padding."""
    n, c, h, w = images.shape
    grid = np.ones((c, h, n * (w + pad) - pad), dtype=images.dtype)
    for i in range(n):
        grid[:, :, i * (w + pad): i * (w + pad) + w] = images[i]
    return grid


def write_pgm(path, gray: np.ndarray) -> None:
    """gray: (H, W) uint8."""
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """rgb: (3, H, W) uint8."""
    _, h, w = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.transpose(1, 2, 0).tobytes())


def write_image(path: Path, image: np.ndarray) -> Path:
    """image: (C, H, W) uint8; picks the format from the channel count."""
    if image.shape[0] == 1:
        path = path.with_suffix(".pgm")
        write_pgm(path, image[0])
        return path
    try:
        from PIL import Image
        path = path.with_suffix(".png")
        Image.fromarray(image.transpose(1, 2, 0)).save(path)
        return path
    except ImportError:
        path = path.with_suffix(".ppm")
        write_ppm(path, image)
        return path


def dump_adv_batch(batch: AdvBatch, out_dir, gain: float = 5.0,
                   max_examples: int = 16, prefix: str = "adv") -> List[Path]:
    """Write originals, adversarials, and an amplified difference row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sel = slice(0, max_examples)
    diff = np.clip(0.5 + gain * (batch.adversarials[sel] - batch.originals[sel]), 0.0, 1.0)
    rows = {
        "originals": batch.originals[sel],
        "adversarials": batch.adversarials[sel],
        "difference": diff,
    }
    paths = []
    for name, images in rows.items():
        grid = to_uint8(image_grid(images.astype(np.float32)))
        paths.append(write_image(out_dir / f"{prefix}_{name}", grid))
    return paths
