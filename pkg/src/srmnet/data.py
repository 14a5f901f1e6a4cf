"""Image I/O (binary PPM), Gaussian noise synthesis, and patch sampling.

Pixel values live in [0,1] in memory (8-bit value / 255 on load) and are
clamped and rounded half-up only when written back to disk.  Noise is
applied in [0,1] space as sigma/255 without clamping, so the training
target sees the unbiased noise model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PatchTooLarge, TruncatedPayload, UnsupportedFormat
from .tensor import Tensor


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_tensor(self) -> Tensor:
        return Tensor(self.pixels.transpose(2, 0, 1)[None].copy())

    @staticmethod
    def from_array(chw_or_hwc: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(chw_or_hwc, dtype=np.float32)
        if arr.ndim == 4:
            arr = arr[0]
        if arr.ndim == 3 and arr.shape[0] == 3:
            arr = arr.transpose(1, 2, 0)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise UnsupportedFormat(f"cannot interpret array of shape {arr.shape} as an image")
        return ImageBuffer(arr)


@dataclass
class NoisySample:
    clean: Tensor
    noisy: Tensor
    sigma: float


# ---------------------------------------------------------------------------
# PPM (P6, maxval 255)
# ---------------------------------------------------------------------------

def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        ch = blob[pos:pos + 1]
        if ch == b"#":
            while pos < n and blob[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncatedPayload("PPM header ended unexpectedly")
    return blob[start:pos], pos


def load_ppm(path: str | Path) -> ImageBuffer:
    blob = Path(path).read_bytes()
    try:
        magic, pos = _next_token(blob, 0)
    except TruncatedPayload:
        raise UnsupportedFormat(f"{path}: empty file") from None
    if magic != b"P6":
        raise UnsupportedFormat(f"{path}: expected binary PPM magic P6, got {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(blob, pos)
        if not tok.isdigit():
            raise UnsupportedFormat(f"{path}: non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise UnsupportedFormat(f"{path}: non-positive dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos:pos + width * height * 3]
    if len(payload) < width * height * 3:
        raise TruncatedPayload(
            f"{path}: expected {width * height * 3} pixel bytes, found {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer((raw.astype(np.float32) / 255.0))


def save_ppm(image: ImageBuffer, path: str | Path) -> None:
    arr = np.clip(image.pixels, 0.0, 1.0)
    raw = np.floor(arr * 255.0 + 0.5).astype(np.uint8)  # round half-up
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raw.tobytes())


# ---------------------------------------------------------------------------
# noise and patches
# ---------------------------------------------------------------------------

def gaussian_field(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Standard normal field via Box-Muller on the generator's uniforms."""
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]: keeps log finite
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(shape).astype(np.float32)


def add_awgn(clean: Tensor, sigma: float, seed: int | np.random.Generator) -> NoisySample:
    """Corrupt with white Gaussian noise of std sigma on the 0-255 scale."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = gaussian_field(clean.shape, rng) * np.float32(sigma / 255.0)
    noisy = Tensor(clean.data + noise)
    return NoisySample(clean=clean, noisy=noisy, sigma=float(sigma))


def sample_patches(image: ImageBuffer, patch: int, count: int,
                   seed: int | np.random.Generator) -> list[Tensor]:
    """Crop ``count`` patches at uniformly random valid top-left corners."""
    if patch > min(image.width, image.height):
        raise PatchTooLarge(
            f"patch {patch} exceeds image {image.width}x{image.height}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    corners = rng.integers(0, (image.height - patch + 1, image.width - patch + 1),
                           size=(count, 2))
    out = []
    for y, x in corners:
        crop = image.pixels[y:y + patch, x:x + patch]
        out.append(Tensor(crop.transpose(2, 0, 1)[None].copy()))
    return out
