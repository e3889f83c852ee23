"""Command-line entry point: ``ganinpaint <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
Options may also come from ``--config FILE`` (``key = value`` lines, keys
named like the long options); command-line flags override the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import data as data_mod
from . import gan as gan_mod
from . import masks as masks_mod
from .autodiff import check_op
from .autodiff.gradcheck import GRAD_CHECK_CASES, grad_check
from .blend import finish
from .inpaint import InpaintConfig, grad_check_case, invert_batch, write_trajectory
from .metrics import METHODS, corrupt, evaluate
from .rng import stream

logger = logging.getLogger("ganinpaint")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _write_manifest(path, args, inputs, outputs, seeds, t0) -> None:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "tool": "ganinpaint",
        "version": __version__,
        "command": args.command,
        "config": json.loads(json.dumps(resolved, default=str)),
        "inputs": {str(p): data_mod.sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seeds": seeds,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    spec = data_mod.DatasetSpec(args.family, args.count, args.size, args.channels, args.seed)
    manifest = data_mod.write_dataset(args.out, spec)
    print(f"wrote {len(manifest['files'])} images to {args.out}")
    return EXIT_OK


def _gan_config(args) -> gan_mod.GanConfig:
    return gan_mod.GanConfig(
        latent_dim=args.latent_dim,
        image_size=args.image_size,
        channels=args.channels,
        base_feature_maps=args.base_feature_maps,
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        flip_augmentation=args.flip,
    )


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").is_file():
        raise UsageError(f"no dataset manifest in {data_dir}")
    images, manifest = data_mod.read_dataset(data_dir)
    ckpt = Path(args.checkpoint)
    metrics_path = Path(args.metrics) if args.metrics else ckpt.with_suffix(".metrics.jsonl")
    if args.resume and ckpt.is_file():
        gan = gan_mod.load_checkpoint(ckpt)
        gan.config.epochs = args.epochs
        logger.info("resuming from epoch %d", gan.epoch)
    else:
        args.image_size = args.image_size or images.shape[2]
        args.channels = args.channels or images.shape[1]
        gan = gan_mod.Gan.initialize(_gan_config(args))
        metrics_path.write_text("")
    ckpt.parent.mkdir(parents=True, exist_ok=True)

    def on_epoch(g, record):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        gan_mod.save_checkpoint(ckpt, g)

    gan_mod.save_checkpoint(ckpt, gan)
    gan_mod.train(gan, images, epochs=args.epochs, on_epoch=on_epoch)
    _write_manifest(
        ckpt.with_suffix(".manifest.json"),
        args,
        [data_dir / "manifest.json"],
        [ckpt, metrics_path],
        {"master": gan.config.seed, "streams": ["init", "train"]},
        t0,
    )
    print(f"checkpoint at epoch {gan.epoch}: {ckpt}")
    return EXIT_OK


def cmd_make_mask(args) -> int:
    m = masks_mod.make_mask(args.family, args.size, args.size, seed=args.seed, **_mask_params(args))
    masks_mod.save_mask(args.out, m)
    print(f"{args.family} mask with {masks_mod.missing_count(m)} missing pixels -> {args.out}")
    return EXIT_OK


def _mask_params(args) -> dict:
    return {
        "hole_fraction": args.hole_fraction,
        "target_missing": args.target_missing,
        "missing_fraction": args.missing_fraction,
    }


def _inpaint_config(args) -> InpaintConfig:
    return InpaintConfig(
        prior_weight=0.0 if args.no_prior else args.prior_weight,
        iterations=args.iterations,
        window_size=args.window_size,
        lr=args.latent_lr,
        restarts=args.restarts,
        seed=args.seed,
        clip_latent=args.clip_latent,
    )


def cmd_inpaint(args) -> int:
    t0 = time.perf_counter()
    gan = gan_mod.load_checkpoint(args.checkpoint)
    cfg = _inpaint_config(args)
    expected = (gan.config.channels, gan.config.image_size, gan.config.image_size)
    images = []
    for path in args.images:
        img = data_mod.load_image(path)
        if img.shape != expected:
            raise UsageError(f"{path}: image shape {img.shape} does not match model shape {expected}")
        images.append(img)
    h = w = gan.config.image_size
    masks = []
    for i in range(len(images)):
        if args.mask:
            m = masks_mod.load_mask(args.mask)
            if m.shape != (h, w):
                raise UsageError(f"mask shape {m.shape} does not match image shape {(h, w)}")
        else:
            m = masks_mod.make_mask(args.mask_family, h, w, seed=args.mask_seed + i, **_mask_params(args))
        masks.append(masks_mod.check_mask(m))
    ys = np.stack([corrupt(img, m) for img, m in zip(images, masks)])
    seeds = [cfg.seed + i for i in range(len(images))]
    results = invert_batch(ys, masks, gan.generator, gan.discriminator, cfg, seeds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (path, y, m, res) in enumerate(zip(args.images, ys, masks, results)):
        stem = Path(path).stem
        files = {
            "corrupted": out / f"{stem}_corrupted.png",
            "mask": out / f"{stem}_mask.png",
            "generated": out / f"{stem}_generated.png",
            "result": out / f"{stem}_{args.mode}.png",
            "trajectory": out / f"{stem}_trajectory.jsonl",
        }
        data_mod.save_image(files["corrupted"], y)
        masks_mod.save_mask(files["mask"], m)
        data_mod.save_image(files["generated"], res.generated)
        data_mod.save_image(files["result"], finish(y, m, res.generated, args.mode))
        write_trajectory(files["trajectory"], res)
        _write_manifest(
            out / f"{stem}_manifest.json",
            args,
            [Path(path), Path(args.checkpoint)] + ([Path(args.mask)] if args.mask else []),
            list(files.values()),
            {
                "master": cfg.seed,
                "restart_streams": [f"inpaint-restart-{k}@{seeds[i]}" for k in range(cfg.restarts)],
                "mask_seed": None if args.mask else args.mask_seed + i,
                "chosen_restart": res.restart,
                "mode": args.mode,
                "inpaint_config": asdict(cfg),
            },
            t0,
        )
        print(f"{path}: restart {res.restart}, final loss {res.final_loss:.4f} -> {files['result']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    gan = gan_mod.load_checkpoint(args.checkpoint)
    test, _ = data_mod.read_dataset(args.data)
    if args.limit:
        test = test[: args.limit]
    train = None
    if "nn_fill" in args.methods:
        if not args.train_data:
            raise UsageError("nn_fill needs --train-data")
        train, _ = data_mod.read_dataset(args.train_data)
    cfg = _inpaint_config(args)
    report = evaluate(
        args.methods,
        test,
        args.families,
        gan.generator,
        gan.discriminator,
        cfg,
        train_set=train,
        mask_seed=args.mask_seed,
        mask_params={
            "center": {"hole_fraction": args.hole_fraction},
            "pattern": {"target_missing": args.target_missing},
            "random": {"missing_fraction": args.missing_fraction},
        },
    )
    report.config = {"inpaint": asdict(cfg), "mask_seed": args.mask_seed, "checkpoint": str(args.checkpoint)}
    report.save(args.out)
    for key, cell in sorted(report.cells.items()):
        if cell.get("error"):
            print(f"{key:28s} FAILED {cell['error']}")
        else:
            agg = cell["aggregate"]
            print(f"{key:28s} psnr {agg['psnr']:6.2f}  hole psnr {agg['masked_psnr']:6.2f}  ssim {agg['ssim']:.3f}")
    inputs = [Path(args.checkpoint), Path(args.data) / "manifest.json"]
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), args, inputs, [args.out], {"master": cfg.seed}, t0)
    return EXIT_OK


def grad_check_table(points: int, seed: int, eps: float, cases=None) -> dict[str, float]:
    rng = stream(seed, "grad-check")
    cases = dict(GRAD_CHECK_CASES if cases is None else cases)
    table = {name: check_op(name, rng, points, eps, cases) for name in cases}
    builder, z = grad_check_case(seed)
    table["total_loss(z)"] = grad_check(builder, z, eps)
    return table


def cmd_grad_check(args) -> int:
    table = grad_check_table(args.points, args.seed, args.eps)
    failed = [name for name, err in table.items() if not err < args.tol]
    print(f"{'op':24s} {'max rel err':>12s}  status")
    for name, err in table.items():
        print(f"{name:24s} {err:12.3e}  {'FAIL' if name in failed else 'ok'}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_gan_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--latent-dim", type=int, default=64)
    g.add_argument("--image-size", type=int, default=0, help="default: taken from the dataset")
    g.add_argument("--channels", type=int, default=0, help="default: taken from the dataset")
    g.add_argument("--base-feature-maps", type=int, default=32)
    g.add_argument("--lr", type=float, default=2e-4)
    g.add_argument("--beta1", type=float, default=0.5)
    g.add_argument("--beta2", type=float, default=0.999)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--epochs", type=int, default=25)
    g.add_argument("--flip", type=_bool, default=True, help="random horizontal flips (true/false)")


def _add_mask_flags(p):
    g = p.add_argument_group("masks")
    g.add_argument("--hole-fraction", type=float, default=0.5)
    g.add_argument("--target-missing", type=float, default=0.25)
    g.add_argument("--missing-fraction", type=float, default=0.8)


def _add_inpaint_flags(p):
    g = p.add_argument_group("latent search")
    g.add_argument("--prior-weight", type=float, default=0.003)
    g.add_argument("--no-prior", action="store_true", help="drop the discriminator prior term")
    g.add_argument("--iterations", type=int, default=1500)
    g.add_argument("--window-size", type=int, default=7)
    g.add_argument("--latent-lr", type=float, default=0.1)
    g.add_argument("--restarts", type=int, default=3)
    g.add_argument("--clip-latent", type=_bool, default=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganinpaint", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "render a synthetic dataset to PNGs")
    p.add_argument("--family", choices=data_mod.FAMILIES, default="toy_faces")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train the GAN on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", help="JSON-lines metrics (default: next to the checkpoint)")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint if it exists")
    _add_gan_flags(p)

    p = command("make-mask", cmd_make_mask, "write a mask PNG (255 known, 0 missing)")
    p.add_argument("--family", choices=masks_mod.FAMILIES, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)
    _add_mask_flags(p)

    p = command("inpaint", cmd_inpaint, "fill the holes of one or more images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--mask", help="mask PNG shared by all images")
    p.add_argument("--mask-family", choices=masks_mod.FAMILIES, default="center")
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--mode", choices=("overlay", "blend"), default="blend")
    p.add_argument("--out", required=True)
    _add_mask_flags(p)
    _add_inpaint_flags(p)

    p = command("evaluate", cmd_evaluate, "PSNR/SSIM grid over methods and mask families")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test dataset directory")
    p.add_argument("--train-data", help="training dataset directory (for nn_fill)")
    p.add_argument("--families", nargs="+", choices=masks_mod.FAMILIES, default=list(masks_mod.FAMILIES))
    p.add_argument("--methods", nargs="+", choices=METHODS, default=["ours_blend", "ours_overlay", "mean_fill"])
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=0, help="use only the first N test images")
    p.add_argument("--out", required=True)
    _add_mask_flags(p)
    _add_inpaint_flags(p)

    p = command("grad-check", cmd_grad_check, "verify every autodiff op against finite differences")
    p.add_argument("--points", type=int, default=100, help="random instances per op")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        for action in sub._actions:
            # store_true flags given only in the file arrive as strings
            if isinstance(action, argparse._StoreTrueAction):
                setattr(args, action.dest, _bool(getattr(args, action.dest)))
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
