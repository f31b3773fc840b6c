"""End-to-end desk-scale benchmark: train on domain A, show the collapse on
domain B, and measure the recovery after transforming B into A's style."""

import shutil
from pathlib import Path

from . import segmentation, translation
from .errors import ArgumentError, StageError
from .evaluation import EvaluationReport, evaluate_dataset
from .raster import (
    DatasetManifest,
    list_images,
    load_image,
    save_image,
    to_three_channel,
)
from .synthetic import generate_synthetic_domains
from .transfer import StyleTransferRequest, default_registry, run_transfer

DEFAULT_SPLIT = (0.70, 0.15, 0.15)

# Desk-scale transform settings tuned for the synthetic benchmark.
BENCHMARK_TRANSFER_DEFAULTS = {
    "nst": {"iterations": 800, "content_weight": 1.0, "style_weight": 1e3, "lr": 0.02},
    "strotss": {"scales": 2, "iterations": 60, "content_weight": 1.0, "lr": 0.05, "sample_count": 512},
}


def _split_manifest(manifest, split, out_root):
    """Copy a manifest's images/masks into train/val/test sub-manifests."""
    images = list_images(manifest.image_dir)
    n = len(images)
    n_train = max(1, round(n * split[0]))
    n_val = max(1, round(n * split[1]))
    n_train = min(n_train, n - 2)
    n_val = min(n_val, n - n_train - 1)
    groups = {
        "train": images[:n_train],
        "val": images[n_train : n_train + n_val],
        "test": images[n_train + n_val :],
    }
    out = {}
    for part, files in groups.items():
        img_dir = Path(out_root) / part / "images"
        mask_dir = Path(out_root) / part / "masks"
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for p in files:
            shutil.copy(p, img_dir / p.name)
            shutil.copy(Path(manifest.mask_dir) / p.name, mask_dir / p.name)
        out[part] = DatasetManifest(
            name=f"{manifest.name}-{part}",
            image_dir=str(img_dir),
            mask_dir=str(mask_dir),
            role=manifest.role,
        )
    return out


def transform_dataset(
    method,
    in_manifest,
    out_dir,
    style_source=None,
    registry=None,
    model=None,
    hyperparams=None,
    seed=0,
):
    """Transform every image of a manifest with a style-transfer algorithm,
    a trained translation model, or 'identity'; returns the new manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"method": method}
    if method == "identity":
        for p in list_images(in_manifest.image_dir):
            shutil.copy(p, out_dir / p.name)
    elif method == "translation":
        if model is None:
            raise ArgumentError("transform 'translation' requires a trained model")
        translation.translate_images(model, in_manifest.image_dir, "target-to-source", out_dir)
        meta["algorithm"] = model.algorithm
    else:
        registry = registry or default_registry()
        if style_source is None:
            raise ArgumentError(f"transform {method!r} requires a style source dataset")
        # Deterministic exemplar: the first image of the style dataset.
        style_images = list_images(style_source.image_dir)
        if not style_images:
            raise ArgumentError(f"no style images in {style_source.image_dir}")
        style_path = style_images[0]
        style = to_three_channel(load_image(style_path))
        meta["style_image"] = str(style_path)
        hp = dict(BENCHMARK_TRANSFER_DEFAULTS.get(method, {}))
        hp.update(hyperparams or {})
        hp.setdefault("seed", seed)
        for p in list_images(in_manifest.image_dir):
            content = to_three_channel(load_image(p))
            req = StyleTransferRequest(
                style_image=style, content_image=content, algorithm=method, hyperparams=hp
            )
            result = run_transfer(registry, req)
            save_image(result.output_image, out_dir / p.name)
        meta["hyperparams"] = hp
    return (
        DatasetManifest(
            name=f"{in_manifest.name}-{method}",
            image_dir=str(out_dir),
            mask_dir=in_manifest.mask_dir,
            role=in_manifest.role,
        ),
        meta,
    )


def run_benchmark(
    spec,
    transform_method,
    workdir,
    registry=None,
    model=None,
    unet_config=None,
    split=DEFAULT_SPLIT,
    transform_hyperparams=None,
):
    """Trains the toy U-Net on domain A and reports IoU on the A test split,
    raw domain B, and B transformed by the named method."""
    workdir = Path(workdir)
    manifest_a, manifest_b = generate_synthetic_domains(spec, workdir / "synthetic")
    parts = _split_manifest(manifest_a, split, workdir / "split_a")

    if unet_config is None:
        unet_config = segmentation.ToyUNetConfig(
            input_size=(spec.image_size, spec.image_size),
            learning_rate=3e-3,
            max_epochs=80,
            patience=20,
            seed=spec.seed,
        )
    try:
        adapter, state = segmentation.train_unet(unet_config, parts["train"], parts["val"])
    except Exception as e:
        raise StageError("train", e) from e

    try:
        manifest_bt, transform_meta = transform_dataset(
            transform_method,
            manifest_b,
            workdir / "transformed_b",
            style_source=parts["train"],
            registry=registry,
            model=model,
            hyperparams=transform_hyperparams,
            seed=spec.seed,
        )
    except Exception as e:
        raise StageError("transform", e) from e

    try:
        a_test, a_detail = evaluate_dataset(adapter, parts["test"])
        b_raw, b_detail = evaluate_dataset(adapter, manifest_b)
        b_trans, bt_detail = evaluate_dataset(adapter, manifest_bt)
    except Exception as e:
        raise StageError("evaluate", e) from e

    model_name = adapter.name
    report = EvaluationReport(
        model_names=[model_name],
        baseline_name="target-raw",
        baseline_row={model_name: b_raw},
        rows=[
            ("source-test", {model_name: a_test}),
            (f"target-{transform_method}", {model_name: b_trans}),
        ],
        metadata={
            "seed": spec.seed,
            "spec": {
                "images_per_domain": spec.images_per_domain,
                "image_size": spec.image_size,
                "blob_count_range": list(spec.blob_count_range),
                "blob_radius_range": list(spec.blob_radius_range),
                "domain_a_style": spec.domain_a_style,
                "domain_b_style": spec.domain_b_style,
            },
            "transform": transform_meta,
            "unet": {
                "depth": unet_config.depth,
                "base_channels": unet_config.base_channels,
                "input_size": list(unet_config.input_size),
                "best_val_iou": state.best_val_iou,
                "epochs_trained": state.epoch + 1,
                "learning_rate": adapter.learning_rate,
            },
            "per_image": {
                "source-test": a_detail,
                "target-raw": b_detail,
                f"target-{transform_method}": bt_detail,
            },
            "datasets": [manifest_a.name, manifest_b.name],
        },
    )
    return report
