"""Training configuration, Adam optimizer, the blind-denoising training
loop, and batch evaluation over noise levels.

The model never sees the noise level: each training sample draws its own
sigma uniformly from [sigma_min, sigma_max] and only the corrupted patch
is fed forward.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .data import ImageBuffer, gaussian_field, load_ppm, sample_patches
from .errors import ConfigInvalid, EmptyDataset, NonFiniteLoss
from .metrics import psnr, ssim
from .model import ModelConfig, SrmNet, charbonnier_loss, denoise_array, init_model
from .modelio import save_model
from .tensor import Tensor

LOSS_VARIANTS = ("literal", "per_element")


@dataclass
class TrainConfig:
    data_dir: str = "."
    patch_size: int = 32
    patches_per_image: int = 100
    sigma_min: float = 5.0
    sigma_max: float = 50.0
    base_channels: int = 96
    scales: int = 4
    blocks_per_srb: int = 3
    skff_reduction: int = 8
    epsilon: float = 1e-3
    loss_variant: str = "literal"
    global_residual: bool = True
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 2
    iterations: int = 200
    seed: int = 0
    checkpoint_path: str = "model.srmn"
    log_path: str = "training_log.csv"

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigInvalid(f"{path}: cannot read config ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"{path}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigInvalid(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.sigma_min > self.sigma_max:
            raise ConfigInvalid(
                f"sigma_min {self.sigma_min} exceeds sigma_max {self.sigma_max}")
        if self.sigma_min < 0:
            raise ConfigInvalid(f"sigma_min must be non-negative, got {self.sigma_min}")
        div = 2 ** (self.scales - 1)
        if self.patch_size < div or self.patch_size % div:
            raise ConfigInvalid(
                f"patch_size {self.patch_size} must be a positive multiple of {div}")
        for name in ("patches_per_image", "batch_size", "iterations"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigInvalid(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigInvalid(f"betas must lie in [0,1), got {self.beta1}, {self.beta2}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigInvalid(
                f"loss_variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig(base_channels=self.base_channels, scales=self.scales,
                           blocks_per_srb=self.blocks_per_srb,
                           skff_reduction=self.skff_reduction, epsilon=self.epsilon,
                           global_residual=self.global_residual)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


class Adam:
    """First-order adaptive-moment descent with bias correction."""

    def __init__(self, params: list[Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class TrainResult:
    rows: list[tuple[int, float, float]]  # (iteration, loss, batch psnr)
    checkpoint_path: Path
    log_path: Path
    model: SrmNet


def load_image_dir(data_dir: str | Path) -> list[ImageBuffer]:
    paths = sorted(Path(data_dir).glob("*.ppm"))
    if not paths:
        raise EmptyDataset(f"no .ppm images found in {data_dir}")
    return [load_ppm(p) for p in paths]


def write_log_csv(rows: list[tuple[int, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "psnr"])
        for it, loss, p in rows:
            writer.writerow([it, f"{loss:.10g}", f"{p:.10g}"])


def train(config: TrainConfig) -> TrainResult:
    """Optimize a fresh model per the configuration; returns the log rows
    and writes the CSV log plus the final checkpoint."""
    config.validate()
    images = load_image_dir(config.data_dir)
    model = init_model(config.model_config(), config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate,
               beta1=config.beta1, beta2=config.beta2)

    patch_root, noise_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(3)
    pool: list[np.ndarray] = []
    for img, ss in zip(images, patch_root.spawn(len(images))):
        rng = np.random.default_rng(ss)
        pool.extend(t.data for t in
                    sample_patches(img, config.patch_size, config.patches_per_image, rng))
    noise_rng = np.random.default_rng(noise_ss)
    batch_rng = np.random.default_rng(batch_ss)

    rows: list[tuple[int, float, float]] = []
    for it in range(1, config.iterations + 1):
        picks = batch_rng.integers(0, len(pool), size=config.batch_size)
        clean = np.concatenate([pool[i] for i in picks], axis=0)
        sigmas = noise_rng.uniform(config.sigma_min, config.sigma_max, size=config.batch_size)
        field = gaussian_field(clean.shape, noise_rng)
        noisy = clean + field * (sigmas[:, None, None, None] / 255.0).astype(np.float32)

        pred = model.forward(Tensor(noisy))
        loss = charbonnier_loss(pred, Tensor(clean), config.epsilon, config.loss_variant)
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise NonFiniteLoss(f"iteration {it}: loss is {loss_val}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        rows.append((it, loss_val, psnr(pred.data, clean)))

    log_path = Path(config.log_path)
    write_log_csv(rows, log_path)
    checkpoint = Path(config.checkpoint_path)
    save_model(model, checkpoint)
    return TrainResult(rows=rows, checkpoint_path=checkpoint, log_path=log_path, model=model)


def _eval_one(model: SrmNet, image: ImageBuffer, sigma: float,
              seed: int, sigma_idx: int, image_idx: int) -> tuple[float, float]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, sigma_idx, image_idx]))
    clean = image.to_tensor().data
    noise = gaussian_field(clean.shape, rng) * np.float32(sigma / 255.0)
    denoised = np.clip(denoise_array(model, clean + noise), 0.0, 1.0)
    return psnr(denoised, clean), ssim(denoised, clean)


def evaluate(model: SrmNet, images: list[ImageBuffer], sigmas: list[float],
             seed: int, threads: int = 1) -> dict:
    """Corrupt, denoise, and score every image at every noise level."""
    if not images:
        raise EmptyDataset("evaluation needs at least one image")
    per_sigma = []
    for si, sigma in enumerate(sigmas):
        jobs = [(ii, img) for ii, img in enumerate(images)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scores = list(pool.map(
                    lambda job: _eval_one(model, job[1], sigma, seed, si, job[0]), jobs))
        else:
            scores = [_eval_one(model, img, sigma, seed, si, ii) for ii, img in jobs]
        per_sigma.append({
            "sigma": float(sigma),
            "mean_psnr": float(np.mean([s[0] for s in scores])),
            "mean_ssim": float(np.mean([s[1] for s in scores])),
            "images": [{"psnr": float(p), "ssim": float(s)} for p, s in scores],
        })
    return {"seed": seed, "num_images": len(images), "per_sigma": per_sigma}
