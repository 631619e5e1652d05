"""Command-line entry point.

Subcommands chain through files: ``synth-features`` writes an SSGF bundle,
``prompt`` composites a visual prompt from an image plus bundle, ``train``
runs one training phase and writes an SSGM checkpoint plus a CSV curve,
``sample`` draws a latent clip from a checkpoint, ``gradcheck`` verifies
gradients.  Exit codes: 0 success, 1 validation/configuration error, 2 I/O
or format error.

Flags may also be supplied through ``--config FILE`` (flat JSON object);
explicit flags override file values, unknown keys are rejected, and every
run echoes the fully resolved configuration to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .bundle import load_bundle, save_bundle, synth_bundle
from .checkpoint import load_model, save_model
from .data import gen_dataset
from .diffusion import sample as draw_sample
from .errors import ConfigurationError, FormatError, SsgError, ValidationError
from .image import load_png, save_f32_sidecar, save_heatmap_png, save_png
from .model import ModelConfig
from .prompt import PromptParams, make_prompt
from .training import (
    TrainConfig,
    eval_conditions,
    gradcheck,
    init_protocol_model,
    train,
    write_report_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise _CliError(EXIT_VALIDATION, f"{self.prog}: {message}")


def _parse_pair(text: str, sep: str, name: str, cast) -> tuple:
    parts = text.split(sep)
    if len(parts) != 2:
        raise ValidationError(f"{name}: expected two values separated by {sep!r}, got {text!r}")
    try:
        return cast(parts[0]), cast(parts[1])
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssgdit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ssgdit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON file with default flag values")

    p = sub.add_parser("synth-features", parents=[common],
                       help="write a deterministic synthetic SSGF feature bundle")
    p.add_argument("--seed", type=int, default=0, help="SplitMix64 seed")
    p.add_argument("--grid", default="24x24", help="patch grid as HxW")
    p.add_argument("--dim", type=int, default=16, help="feature dimension")
    p.add_argument("--center", default="0.5,0.5", help="normalized blob center as X,Y")
    p.add_argument("--image-size", default="64x64", help="source image size as HxW")
    p.add_argument("--out", required=True, help="output .ssgf path")

    p = sub.add_parser("prompt", parents=[common],
                       help="build the visual prompt for an image + feature bundle")
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--features", required=True, help="input SSGF bundle")
    p.add_argument("--out", required=True, help="output prompt PNG")
    p.add_argument("--gamma", type=float, default=2.0, help="contrast-enhancement exponent")
    p.add_argument("--no-pool", action="store_true", help="disable 3x3 average pooling")
    p.add_argument("--blur-sigma", type=float, default=None,
                   help="background blur sigma in px (default 0.02*min(h,w), floor 3)")
    p.add_argument("--eps", type=float, default=1e-12, help="degeneracy threshold")
    p.add_argument("--branches", choices=["both", "attn", "mlp"], default="both",
                   help="mask branches to fuse (single-branch modes are for ablations)")
    p.add_argument("--dump-intermediates", default=None, metavar="DIR",
                   help="write PNG heatmaps + f32 sidecars of every intermediate mask")

    p = sub.add_parser("train", parents=[common], help="run one training phase")
    p.add_argument("--phase", choices=["backbone", "adapter"], required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--dataset-size", type=int, default=256)
    p.add_argument("--out", required=True, help="output SSGM checkpoint")
    p.add_argument("--init", default=None,
                   help="initial checkpoint (required for --phase adapter)")
    p.add_argument("--report", default=None,
                   help="training-curve CSV (default: <out>.train.csv)")

    p = sub.add_parser("sample", parents=[common],
                       help="draw a latent clip from a trained checkpoint")
    p.add_argument("--ckpt", required=True, help="SSGM checkpoint")
    p.add_argument("--caption-id", type=int, required=True, help="anchor caption id (0-8)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for per-frame heatmaps + f32 sidecars")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of all gradients on the tiny config")
    p.add_argument("--seed", type=int, default=1)

    return parser


def _apply_config_file(args: argparse.Namespace, parser_flags: set[str], argv: list[str]) -> None:
    """Fill argparse defaults from a flat JSON file; explicit flags win."""
    if not args.config:
        return
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {args.config}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config file {args.config}: expected a JSON object")
    explicit = _explicit_flags(argv)
    for key, value in data.items():
        attr = key.replace("-", "_")
        if attr not in parser_flags:
            raise ValidationError(f"config file {args.config}: unknown key {key!r}")
        if attr not in explicit:
            setattr(args, attr, value)


def _explicit_flags(argv: list[str]) -> set[str]:
    out = set()
    for token in argv:
        if token.startswith("--"):
            out.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return out


def _echo_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    print(f"config[{args.command}]: {json.dumps(resolved, default=str, sort_keys=True)}",
          file=sys.stderr)


def _cmd_synth_features(args) -> int:
    grid_h, grid_w = _parse_pair(args.grid, "x", "--grid", int)
    image_h, image_w = _parse_pair(args.image_size, "x", "--image-size", int)
    cx, cy = _parse_pair(args.center, ",", "--center", float)
    bundle = synth_bundle(args.seed, grid_h, grid_w, args.dim, image_h, image_w, (cx, cy))
    save_bundle(bundle, args.out)
    return EXIT_OK


def _cmd_prompt(args) -> int:
    img = load_png(args.image)
    bundle = load_bundle(args.features)
    if (bundle.image_h, bundle.image_w) != (img.h, img.w):
        raise ValidationError(
            f"feature bundle was extracted for {bundle.image_h}x{bundle.image_w} but "
            f"the image is {img.h}x{img.w}"
        )
    params = PromptParams(
        gamma=args.gamma,
        pool=not args.no_pool,
        blur_sigma=args.blur_sigma,
        eps=args.eps,
        branches=args.branches,
    )
    result = make_prompt(img, bundle, params)
    save_png(result.prompt, args.out)
    if args.dump_intermediates:
        os.makedirs(args.dump_intermediates, exist_ok=True)
        dumps = {
            "m_attn": result.m_attn.values,
            "m_mlp": result.m_mlp.values,
            "fused": result.fused.values,
            "upsampled": result.upsampled.values,
            "mask": result.mask.values,
        }
        for name, values in dumps.items():
            base = os.path.join(args.dump_intermediates, name)
            save_heatmap_png(values, base + ".png")
            save_f32_sidecar(values, base + ".f32")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = gen_dataset(args.seed, args.dataset_size)
    config = TrainConfig(phase=args.phase, steps=args.steps, batch=args.batch,
                         lr=args.lr, seed=args.seed, init_checkpoint=args.init)
    if args.phase == "adapter":
        if not args.init:
            raise ConfigurationError("--phase adapter requires --init with a pretrained backbone")
        if not os.path.exists(args.init):
            raise ConfigurationError(f"checkpoint {args.init} does not exist")
        model = load_model(args.init)
    elif args.init:
        model = load_model(args.init)
    else:
        model = init_protocol_model(ModelConfig(), args.seed)
    report = train(model, dataset, config)
    save_model(model, args.out)
    write_report_csv(report, args.report or args.out + ".train.csv")
    print(f"{args.phase}: final loss {report.losses[-1]:.6f}, "
          f"{report.n_trainable} trainable / {report.n_frozen} frozen parameters")
    return EXIT_OK


def _cmd_sample(args) -> int:
    model = load_model(args.ckpt)
    if not 0 <= args.caption_id < model.config.n_captions:
        raise ValidationError(
            f"--caption-id must be in [0, {model.config.n_captions}), got {args.caption_id}"
        )
    schedule = TrainConfig().schedule()
    cond = eval_conditions(model, branches="both", use_text=True)[args.caption_id]
    clip = draw_sample(model, cond, schedule, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for f in range(clip.shape[0]):
        frame = clip[f].mean(axis=-1)  # channel-mean heatmap
        base = os.path.join(args.out, f"frame{f:02d}")
        save_heatmap_png(frame, base + ".png")
    save_f32_sidecar(clip, os.path.join(args.out, "latent.f32"))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    errors, worst = gradcheck(seed=args.seed)
    for name in sorted(errors):
        print(f"{name}: rel_err={errors[name]:.3e}")
    print(f"max_rel_err={worst:.3e}")
    return EXIT_OK if worst < 1e-4 else EXIT_VALIDATION


_COMMANDS = {
    "synth-features": _cmd_synth_features,
    "prompt": _cmd_prompt,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "gradcheck": _cmd_gradcheck,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, set(vars(args)), argv)
        _echo_config(args)
        return _COMMANDS[args.command](args)
    except _CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SsgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
