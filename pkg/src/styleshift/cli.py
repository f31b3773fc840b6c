"""Command-line orchestration: transfer, translate train/apply, segment-train,
evaluate, benchmark, report. Exit codes: 0 ok, 1 usage, 2 runtime."""

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__, benchmark, evaluation, segmentation, translation
from .errors import ArgumentError, StageError, StyleShiftError, UnknownAlgorithmError
from .raster import DatasetManifest, DomainPair, load_image, save_image, to_three_channel
from .synthetic import SyntheticBenchmarkSpec
from .transfer import StyleTransferRequest, default_registry, run_transfer


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _atomic_write_image(path, img):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=path.suffix)
    os.close(fd)
    save_image(img, tmp)
    os.replace(tmp, path)


def _check_output(path, overwrite, is_dir=False):
    p = Path(path)
    exists = p.is_dir() and any(p.iterdir()) if is_dir else p.exists()
    if exists and not overwrite:
        raise UsageError(f"output {path} already exists; pass --overwrite to replace it")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e


def _resolve(args, config, command, name, default):
    """Flag wins over config-file key '<command>.<name>', which wins over the
    built-in default."""
    value = getattr(args, name.replace("-", "_"))
    if value is not None:
        return value
    key = f"{command}.{name}"
    if key in config:
        return config[key]
    return default


def build_parser():
    parser = _Parser(prog="styleshift", description=__doc__)
    parser.add_argument("--version", action="store_true", help="print version and algorithms")
    parser.add_argument("--config", default=None, help="JSON config with flat namespaced keys")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("transfer", help="style-transfer one image")
    p.add_argument("--algorithm", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--style-weight", type=float, default=None)
    p.add_argument("--content-weight", type=float, default=None)
    p.add_argument("--scales", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--trace-csv", default=None, help="write the loss trace as CSV")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("translate", help="train or apply an unpaired translation model")
    tsub = p.add_subparsers(dest="translate_command")
    pt = tsub.add_parser("train")
    pt.add_argument("--algorithm", required=True)
    pt.add_argument("--source", required=True)
    pt.add_argument("--target", required=True)
    pt.add_argument("--out", required=True, help="checkpoint directory")
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--image-size", type=int, default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--overwrite", action="store_true")
    pa = tsub.add_parser("apply")
    pa.add_argument("--model", required=True)
    pa.add_argument("--direction", required=True, choices=["source-to-target", "target-to-source"])
    pa.add_argument("--in", dest="in_dir", required=True)
    pa.add_argument("--out", required=True)
    pa.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("segment-train", help="train the toy U-Net")
    p.add_argument("--train-images", required=True)
    p.add_argument("--train-masks", required=True)
    p.add_argument("--val-images", required=True)
    p.add_argument("--val-masks", required=True)
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--base-channels", type=int, default=None)
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="fixed LR; default runs the range test")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("evaluate", help="evaluate a segmentation checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("benchmark", help="synthetic collapse-and-recovery benchmark")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--transform", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--images-per-domain", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("report", help="re-render a report JSON as text or CSV")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--format", default="text-table", choices=["text-table", "json", "csv"])
    p.add_argument("--out", default=None, help="output file; stdout when omitted")
    p.add_argument("--overwrite", action="store_true")
    return parser


def _cmd_transfer(args, config):
    _check_output(args.out, args.overwrite)
    reg = default_registry()
    hp = {}
    for name, default in (
        ("iterations", None),
        ("seed", 0),
        ("style-weight", None),
        ("content-weight", None),
        ("scales", None),
        ("lr", None),
    ):
        value = _resolve(args, config, "transfer", name, default)
        if value is not None:
            hp[name.replace("-", "_")] = value
    style = to_three_channel(load_image(args.style))
    content = to_three_channel(load_image(args.content))
    req = StyleTransferRequest(
        style_image=style, content_image=content, algorithm=args.algorithm, hyperparams=hp
    )
    result = run_transfer(reg, req)
    _atomic_write_image(args.out, result.output_image)
    if args.trace_csv:
        lines = ["iteration,total,content,style"]
        lines += [f"{it},{t},{c},{s}" for it, t, c, s in result.loss_trace]
        _atomic_write_text(args.trace_csv, "\n".join(lines) + "\n")
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_translate_train(args, config):
    _check_output(args.out, args.overwrite, is_dir=True)
    cfg = translation.make_train_config(
        args.algorithm,
        seed=_resolve(args, config, "translate-train", "seed", 0),
        epochs=_resolve(args, config, "translate-train", "epochs", 30),
        image_size=_resolve(args, config, "translate-train", "image-size", 32),
    )
    pair = DomainPair(
        source=DatasetManifest(name="source", image_dir=args.source, role="source"),
        target=DatasetManifest(name="target", image_dir=args.target, role="target"),
    )
    model = translation.train_translation(pair, cfg, checkpoint_dir=args.out)
    final = Path(args.out) / "final.ckpt"
    translation.save_checkpoint(model, final)
    print(f"trained {args.algorithm}; checkpoints in {args.out}", file=sys.stderr)
    return 0


def _cmd_translate_apply(args, config):
    _check_output(args.out, args.overwrite, is_dir=True)
    model = translation.load_checkpoint(args.model)
    count = translation.translate_images(model, args.in_dir, args.direction, args.out)
    print(f"translated {count} images into {args.out}", file=sys.stderr)
    return 0


def _cmd_segment_train(args, config):
    _check_output(args.out, args.overwrite)
    size = _resolve(args, config, "segment-train", "input-size", 96)
    lr = _resolve(args, config, "segment-train", "lr", None)
    cfg = segmentation.ToyUNetConfig(
        depth=_resolve(args, config, "segment-train", "depth", 2),
        base_channels=_resolve(args, config, "segment-train", "base-channels", 8),
        input_size=(size, size),
        learning_rate="auto" if lr is None else lr,
        max_epochs=_resolve(args, config, "segment-train", "max-epochs", 60),
        patience=_resolve(args, config, "segment-train", "patience", 5),
        seed=_resolve(args, config, "segment-train", "seed", 0),
    )
    train = DatasetManifest(name="train", image_dir=args.train_images, mask_dir=args.train_masks)
    val = DatasetManifest(name="val", image_dir=args.val_images, mask_dir=args.val_masks)
    adapter, state = segmentation.train_unet(cfg, train, val)
    fd, tmp = tempfile.mkstemp(dir=Path(args.out).parent or ".", suffix=".ckpt")
    os.close(fd)
    segmentation.save_unet_checkpoint(adapter, tmp)
    os.replace(tmp, args.out)
    print(
        f"trained toy-unet: best val IoU {state.best_val_iou:.4f} after {state.epoch + 1} epochs",
        file=sys.stderr,
    )
    return 0


def _cmd_evaluate(args, config):
    _check_output(args.out, args.overwrite)
    adapter = segmentation.load_unet_checkpoint(args.model)
    manifest = DatasetManifest(name="eval", image_dir=args.images, mask_dir=args.masks)
    mean, per_image = evaluation.evaluate_dataset(adapter, manifest)
    doc = {"mean_iou_percent": mean, "per_image": per_image}
    _atomic_write_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"mean IoU {mean:.2f}%", file=sys.stderr)
    return 0


def _cmd_benchmark(args, config):
    _check_output(args.out, args.overwrite)
    spec = SyntheticBenchmarkSpec(
        seed=_resolve(args, config, "benchmark", "seed", 0),
        images_per_domain=_resolve(args, config, "benchmark", "images-per-domain", 24),
        image_size=_resolve(args, config, "benchmark", "image-size", 96),
    )
    transform = _resolve(args, config, "benchmark", "transform", "nst")
    workdir = args.workdir
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="styleshift-benchmark-")
    report = benchmark.run_benchmark(spec, transform, workdir)
    _atomic_write_text(args.out, evaluation.render_report(report, "json"))
    print(evaluation.render_report(report, "text-table"), file=sys.stderr)
    return 0


def _cmd_report(args, config):
    with open(args.in_path) as f:
        report = evaluation.report_from_json(f.read())
    rendered = evaluation.render_report(report, args.format)
    if args.out is None:
        sys.stdout.write(rendered)
    else:
        _check_output(args.out, args.overwrite)
        _atomic_write_text(args.out, rendered)
    return 0


_COMMANDS = {
    "transfer": _cmd_transfer,
    "segment-train": _cmd_segment_train,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
    "report": _cmd_report,
}


def _print_version():
    reg = default_registry()
    print(f"styleshift {__version__}")
    print(f"style-transfer algorithms: {', '.join(reg.names())}")
    builtin = ", ".join(translation.BUILTIN_ALGORITHMS)
    stubs = ", ".join(translation.EXTENSION_ALGORITHMS)
    print(f"translation algorithms: {builtin} (extension stubs: {stubs})")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            _print_version()
            return 0
        if args.command is None:
            raise UsageError(parser.format_usage())
        config = _load_config(args.config)
        if args.command == "translate":
            if args.translate_command == "train":
                return _cmd_translate_train(args, config)
            if args.translate_command == "apply":
                return _cmd_translate_apply(args, config)
            raise UsageError("translate requires a subcommand: train or apply")
        return _COMMANDS[args.command](args, config)
    except (UsageError, UnknownAlgorithmError, ArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StyleShiftError as e:
        stage = getattr(args, "command", "run")
        print(f"error: [stage: {stage}] {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - never show a bare stack trace
        stage = getattr(args, "command", "run") if "args" in dir() else "parse"
        print(f"error: [stage: {stage}] {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())
