"""Command line entry points: train, eval, sr, ablate, viz.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
during training or inference.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .data import Corpus, load_image, rgb_to_ycbcr, save_image, ycbcr_to_rgb
from .errors import ConfigurationError, NumericError
from .metrics import (EvalProtocol, ablation_run, evaluate_dataset,
                      format_result_table, super_resolve_luminance)
from .models import energy_maps
from .resize import resize
from .training import load_config, load_model_for_eval, train


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="RNG seed override")
    p.add_argument("--data-root", help="directory with corpus images")
    p.add_argument("--out", help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualsr",
                                     description="recurrent super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--model", choices=["resnet", "drcn", "drrn", "dsrn"])
    p.add_argument("--scale", type=int)
    p.add_argument("--T", type=int, dest="T", help="unrolling steps")
    p.add_argument("--width", type=int)
    p.add_argument("--width-in", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--clip-mode", choices=["value", "norm"])
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--val-interval", type=int)
    p.add_argument("--feedback", choices=["true", "false"])
    p.add_argument("--tied", choices=["true", "false"])
    p.add_argument("--dual", choices=["true", "false"])
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint or the bicubic baseline")
    _add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint (omit with --bicubic)")
    p.add_argument("--bicubic", action="store_true", help="score plain bicubic upscale")
    p.add_argument("--scale", type=int, help="SR factor (required with --bicubic)")
    p.add_argument("--manifest", help="text file of relative image paths")
    p.add_argument("--border-crop", type=int, help="pixels cropped per side (default: scale)")
    p.add_argument("--dataset-label", default="dataset")

    p = sub.add_parser("sr", help="super-resolve one image")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("ablate", help="train and compare model variants")
    _add_common(p)
    p.add_argument("--scales", default="2", help="comma-separated scale list")
    p.add_argument("--T", type=int, dest="T", default=5)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--steps", type=int, default=1600)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.add_argument("--lr0", type=float, default=0.02)
    p.add_argument("--val-interval", type=int, default=200)

    p = sub.add_parser("viz", help="export per-step HR state energy maps")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    return parser


_TRAIN_OVERRIDE_KEYS = ("model", "scale", "T", "width", "width_in", "lr0", "batch",
                        "patch", "steps", "clip_mode", "dtype", "val_interval",
                        "feedback", "tied", "dual", "resume", "seed")


def cmd_train(args) -> int:
    overrides = {}
    for key in _TRAIN_OVERRIDE_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.data_root is not None:
        overrides["data_root"] = args.data_root
    if args.out is not None:
        overrides["out_dir"] = args.out
    config = load_config(args.config, overrides)
    summary = train(config)
    print(f"trained {config.model} for {summary['step']} steps; "
          f"final val PSNR {summary['val_psnr']:.2f} dB; "
          f"checkpoints in {summary['out_dir']}")
    return 0


def cmd_eval(args) -> int:
    if args.bicubic:
        if not args.scale:
            raise ConfigurationError("--bicubic requires --scale")
        model: object = "bicubic"
        scale = args.scale
        label = "bicubic"
    else:
        if not args.checkpoint:
            raise ConfigurationError("eval needs --checkpoint or --bicubic")
        model, manifest = load_model_for_eval(args.checkpoint)
        scale = args.scale or manifest["model"]["scale"]
        label = manifest["model"]["model"]
    if not args.data_root:
        raise ConfigurationError("eval requires --data-root")
    dataset = (Corpus.from_manifest(args.data_root, args.manifest)
               if args.manifest else Corpus.from_dir(args.data_root))
    crop = scale if args.border_crop is None else args.border_crop
    protocol = EvalProtocol(border_crop=crop)
    result = evaluate_dataset(model, dataset, scale, protocol, args.out,
                              model_label=label, dataset_label=args.dataset_label)
    for name in result["missing"]:
        print(f"missing image skipped: {name}", file=sys.stderr)
    sys.stdout.write(format_result_table([result]))
    return 0


def cmd_sr(args) -> int:
    model, _ = load_model_for_eval(args.checkpoint)
    img = load_image(args.input)
    if img.ndim == 2:
        sr = np.clip(super_resolve_luminance(model, img), 0.0, 1.0)
        save_image(args.output, sr)
    else:
        ycc = rgb_to_ycbcr(img)
        y_sr = super_resolve_luminance(model, ycc[..., 0])
        h, w = y_sr.shape
        cb = resize(ycc[..., 1], h, w)
        cr = resize(ycc[..., 2], h, w)
        rgb = np.clip(ycbcr_to_rgb(np.stack([y_sr, cb, cr], axis=-1)), 0.0, 1.0)
        save_image(args.output, rgb)
    print(f"wrote {args.output}")
    return 0


def cmd_ablate(args) -> int:
    if not args.data_root:
        raise ConfigurationError("ablate requires --data-root")
    out = args.out or "ablation_out"
    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if not seeds:
        raise ConfigurationError(f"no seeds parsed from {args.seeds!r}")
    scales = tuple(int(s) for s in args.scales.split(",") if s.strip())
    if not scales:
        raise ConfigurationError(f"no scales parsed from {args.scales!r}")
    result = ablation_run(args.data_root, out, scales=scales, t_steps=args.T,
                          width=args.width, steps=args.steps, seeds=seeds,
                          lr0=args.lr0, val_interval=args.val_interval)
    sys.stdout.write(result["table"])
    return 0


def cmd_viz(args) -> int:
    model, manifest = load_model_for_eval(args.checkpoint)
    if manifest["model"]["model"] != "dsrn":
        raise ConfigurationError(
            f"viz requires a dsrn checkpoint, got {manifest['model']['model']!r}")
    out = args.out or "state_energy"
    os.makedirs(out, exist_ok=True)
    from .data import luminance
    y = luminance(load_image(args.input))
    dtype = model.params.tensors()[0].data.dtype
    from .autodiff import Tensor, no_grad
    with no_grad():
        fwd = model.forward(Tensor(y[None, None].astype(dtype)))
    for t, emap in enumerate(energy_maps(fwd.state_trace), start=1):
        save_image(os.path.join(out, f"state_energy_t{t}.png"), emap)
    print(f"wrote {model.t_steps} energy maps to {out}")
    return 0


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sr": cmd_sr,
             "ablate": cmd_ablate, "viz": cmd_viz}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
