import numpy as np
import pytest

from srmnet.data import ImageBuffer, save_ppm


def synth_image(seed: int, height: int, width: int) -> np.ndarray:
    """Deterministic natural-ish test image: smooth gradients, soft blobs,
    sharp rectangles, and mild sinusoidal texture.  (H,W,3) float32 in [0,1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    img = np.zeros((height, width, 3))
    for c in range(3):
        ang = rng.uniform(0, 2 * np.pi)
        img[..., c] = rng.uniform(0.25, 0.75) + rng.uniform(-0.4, 0.4) * (
            xx * np.cos(ang) + yy * np.sin(ang))
    for _ in range(10):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.04, 0.25, 2)
        col = rng.uniform(0, 1, 3)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        mask = np.exp(-0.5 * d2 ** 2)[..., None]
        img = img * (1 - 0.8 * mask) + col * 0.8 * mask
    for _ in range(6):
        y0, x0 = rng.uniform(0, 0.8, 2)
        hgt, wid = rng.uniform(0.05, 0.25, 2)
        col = rng.uniform(0, 1, 3)
        sel = (yy >= y0) & (yy < y0 + hgt) & (xx >= x0) & (xx < x0 + wid)
        img[sel] = col
    fy, fx = rng.uniform(4, 18, 2)
    img += 0.03 * np.sin(2 * np.pi * (fy * yy + fx * xx))[..., None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def write_corpus(directory, seeds, size=64):
    """Write synthetic PPM images into a directory; returns the paths."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in seeds:
        p = directory / f"img_{s:03d}.ppm"
        save_ppm(ImageBuffer(synth_image(s, size, size)), p)
        paths.append(p)
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(0)
