"""``wsdan`` command line: train, eval, infer, visualize, synth, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from ._validation import ConfigError, ContractError
from .config import TrainConfig, read_config_file
from .data import (ManifestError, SynthConfig, generate_synthetic_dataset, image_size,
                   load_images, load_manifest, preprocess)
from .evaluation import EvalSet, default_grid, evaluate, format_report, run_ablation
from .inference import coarse_predict, coarse_to_fine_predict, object_bbox, object_map
from .trainer import build_model, load_checkpoint, load_training_data, train

log = logging.getLogger("wsdan")

ABLATION_KEYS = ("ablation_seeds", "parts_sweep")


class UsageError(Exception):
    pass


def _load_config(path, extra_keys=ABLATION_KEYS):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values = read_config_file(path)
    extras = {k: values.pop(k) for k in extra_keys if k in values}
    return TrainConfig.from_mapping(values).validate(), extras


def _load_ckpt(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return build_model(load_checkpoint(path))


def _image_tensor(path, cfg):
    if not Path(path).is_file():
        raise UsageError(f"image not found: {path}")
    return torch.from_numpy(preprocess(path, cfg.input_size)).permute(2, 0, 1).contiguous()


def cmd_train(args):
    cfg, _ = _load_config(args.config)
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    train(cfg, resume=args.resume, out=sys.stdout)
    return 0


def _eval_set(manifest, cfg):
    if not Path(manifest).is_file():
        raise UsageError(f"manifest not found: {manifest}")
    records = load_manifest(manifest, cfg.num_classes)
    images, labels = load_images(manifest, records, cfg.input_size)
    sizes = [image_size(Path(manifest).parent / r.image_path) for r in records]
    return EvalSet(images, labels, [r.object_box for r in records], sizes)


def cmd_eval(args):
    model, cfg = _load_ckpt(args.ckpt)
    data = _eval_set(args.manifest, cfg)
    result = evaluate(model, data, refine=not args.coarse_only, theta_loc=cfg.theta_loc)
    for key in ("accuracy", "miou", "loc_error"):
        value = result[key]
        print(f"{key}\t{'n/a' if value is None else f'{value:.6f}'}")
    return 0


def cmd_infer(args):
    model, cfg = _load_ckpt(args.ckpt)
    image = _image_tensor(args.image, cfg)
    pred = coarse_to_fine_predict(model, image, cfg.theta_loc)[0]
    _, attention = coarse_predict(model, image[None])
    box = object_bbox(object_map(attention[0]), cfg.theta_loc, *image_size(args.image))
    cls = int(np.argmax(pred.probabilities))
    print(f"{args.image}\t{cls}\t{pred.probabilities[cls]:.6f}\t{box}")
    return 0


def cmd_visualize(args):
    from .visualize import write_visualizations

    model, cfg = _load_ckpt(args.ckpt)
    written = write_visualizations(model, cfg, args.image, args.out_dir, seed=cfg.seed)
    for path in written:
        print(path)
    return 0


def cmd_synth(args):
    cfg = SynthConfig(num_classes=args.classes, per_class=args.per_class,
                      image_size=args.image_size)
    print(generate_synthetic_dataset(args.out_dir, cfg, seed=args.seed))
    return 0


def _int_list(text, key):
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}") from None


def cmd_ablate(args):
    cfg, extras = _load_config(args.config, ABLATION_KEYS)
    if not cfg.test_manifest:
        raise ConfigError("ablate needs test_manifest in the config")
    seeds = _int_list(extras["ablation_seeds"], "ablation_seeds") if "ablation_seeds" in extras else None
    sweep = _int_list(extras.get("parts_sweep", "1 8"), "parts_sweep")
    train_data = load_training_data(cfg)
    test = _eval_set(cfg.test_manifest, cfg)
    rows = run_ablation(cfg, train_data, test, default_grid(sweep), seeds)
    report = format_report(rows)
    Path(args.out).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="wsdan")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and localization metrics on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--coarse-only", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="coarse-to-fine prediction for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("visualize", help="write attention and augmentation overlays")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=96)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run the ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ManifestError) as exc:
        print(f"wsdan {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ContractError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"wsdan {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
