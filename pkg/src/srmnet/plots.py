"""Figure rendering for the CLI report paths.

Each report command writes its figure next to the delimited output
(training CSV -> loss/PSNR curves, eval JSON -> per-sigma chart).
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_training_curves(rows: list[tuple[int, float, float]], path: str | Path) -> Path:
    iters = [r[0] for r in rows]
    losses = [r[1] for r in rows]
    psnrs = [r[2] for r in rows]

    fig, (ax_loss, ax_psnr) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax_loss.plot(iters, losses, lw=0.9, color="tab:blue")
    ax_loss.set_yscale("log")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("charbonnier loss")
    ax_loss.grid(alpha=0.3)

    finite = [(i, p) for i, p in zip(iters, psnrs) if math.isfinite(p)]
    if finite:
        ax_psnr.plot([f[0] for f in finite], [f[1] for f in finite],
                     lw=0.9, color="tab:orange")
    ax_psnr.set_xlabel("iteration")
    ax_psnr.set_ylabel("batch PSNR (dB)")
    ax_psnr.grid(alpha=0.3)

    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=140)
    plt.close(fig)
    return out


def render_eval_chart(results: dict, path: str | Path) -> Path:
    sigmas = [e["sigma"] for e in results["per_sigma"]]
    psnrs = [e["mean_psnr"] for e in results["per_sigma"]]
    ssims = [e["mean_ssim"] for e in results["per_sigma"]]

    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    finite = [(x, y) for x, y in zip(sigmas, psnrs) if math.isfinite(y)]
    if finite:
        ax_p.plot([f[0] for f in finite], [f[1] for f in finite],
                  marker="o", color="tab:blue")
    ax_p.set_xlabel("noise sigma (0-255 scale)")
    ax_p.set_ylabel("mean PSNR (dB)")
    ax_p.grid(alpha=0.3)

    ax_s.plot(sigmas, ssims, marker="o", color="tab:orange")
    ax_s.set_xlabel("noise sigma (0-255 scale)")
    ax_s.set_ylabel("mean SSIM")
    ax_s.grid(alpha=0.3)

    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=140)
    plt.close(fig)
    return out
