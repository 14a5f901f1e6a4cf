"""Command-line entry points: train, denoise, eval, flops, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .data import ImageBuffer, gaussian_field, load_ppm, save_ppm
from .errors import ModelTooLarge, SrmnetError
from .graph import count_flops
from .metrics import psnr, ssim
from .model import ModelConfig, SrmNet, charbonnier_loss, denoise_array, init_model
from .modelio import load_model
from .tensor import Tensor, finite_diff_check
from .train import TrainConfig, evaluate, load_image_dir, train

GRADCHECK_PARAM_LIMIT = 100_000
TINY_GRADCHECK = ModelConfig(base_channels=4, scales=4, blocks_per_srb=2)


def cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    result = train(config)
    from .plots import render_training_curves
    figure = render_training_curves(result.rows, result.log_path.with_suffix(".png"))
    last = result.rows[-1]
    print(f"trained {len(result.rows)} iterations: final loss {last[1]:.6g}, "
          f"batch PSNR {last[2]:.4f} dB")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    print(f"figure: {figure}")
    return 0


def cmd_denoise(args) -> int:
    image = load_ppm(args.input)  # validate inputs before touching the model
    model = load_model(args.model)
    out = np.clip(denoise_array(model, image.to_tensor().data), 0.0, 1.0)
    save_ppm(ImageBuffer.from_array(out), args.output)
    print(f"wrote {args.output}")
    if args.reference:
        ref = load_ppm(args.reference).to_tensor().data
        print(f"psnr_db={psnr(out, ref):.4f} ssim={ssim(out, ref):.6f}")
    return 0


def _format_eval_table(results: dict) -> str:
    lines = [f"{'sigma':>8}  {'mean_psnr':>10}  {'mean_ssim':>10}"]
    for entry in results["per_sigma"]:
        lines.append(f"{entry['sigma']:>8.1f}  {entry['mean_psnr']:>10.4f}  "
                     f"{entry['mean_ssim']:>10.6f}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    images = load_image_dir(args.data)
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    model = load_model(args.model)
    results = evaluate(model, images, sigmas, seed=args.seed, threads=args.threads)
    print(_format_eval_table(results))
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2) + "\n")
        from .plots import render_eval_chart
        figure = render_eval_chart(results, Path(args.json).with_suffix(".png"))
        print(f"json: {args.json}")
        print(f"figure: {figure}")
    return 0


def cmd_flops(args) -> int:
    if args.config:
        model_config = TrainConfig.from_json(args.config).model_config()
    else:
        model_config = ModelConfig()
    model = SrmNet(model_config)
    report = count_flops(model, (1, 3, args.height, args.width))
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        print(f"json: {args.json}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        model_config = TrainConfig.from_json(args.config).model_config()
    else:
        model_config = TINY_GRADCHECK
    probe = SrmNet(model_config)
    if probe.num_params() >= GRADCHECK_PARAM_LIMIT:
        raise ModelTooLarge(
            f"gradcheck is restricted to models under {GRADCHECK_PARAM_LIMIT} parameters, "
            f"this configuration has {probe.num_params()}")
    model = init_model(model_config, args.seed).astype(np.float64)
    side = model_config.divisor * 2  # 16x16 for the default 4-scale model
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
    clean = rng.random((1, 3, side, side))
    noisy = clean + gaussian_field(clean.shape, rng).astype(np.float64) * (25.0 / 255.0)

    def loss_fn():
        pred = model.forward(Tensor(noisy, dtype=np.float64))
        return charbonnier_loss(pred, Tensor(clean, dtype=np.float64),
                                model_config.epsilon)

    report = finite_diff_check(loss_fn, model.named_params(),
                               tolerance=args.tolerance, seed=args.seed)
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {status}: max_rel_err={report.max_rel_err:.3e} "
          f"tolerance={report.tolerance:.0e} coords={report.n_coordinates} "
          f"params={model.num_params()} seed={args.seed}")
    if report.worst is not None:
        w = report.worst
        print(f"worst: {w.name}[{w.index}] analytic={w.analytic:.6e} "
              f"numeric={w.numeric:.6e} rel_err={w.rel_err:.3e}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srmnet",
        description="Blind image denoising: training, inference, and profiling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="path to TrainConfig JSON")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--reference", help="clean PPM; prints PSNR/SSIM when given")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="score a model on a directory of PPM images")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigmas", default="10,30,50")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write results (and a chart) to this path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic MACs/params for a configuration")
    p.add_argument("--config", help="TrainConfig JSON (defaults to the full-size model)")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--json", help="also write the report to this path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--config", help="TrainConfig JSON (defaults to a tiny model)")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except SrmnetError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"IOError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
