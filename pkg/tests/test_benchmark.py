import pytest

from styleshift.benchmark import _split_manifest, run_benchmark, transform_dataset
from styleshift.errors import ArgumentError
from styleshift.raster import DatasetManifest, list_images
from styleshift.segmentation import ToyUNetConfig
from styleshift.synthetic import SyntheticBenchmarkSpec, generate_synthetic_domains


def test_split_manifest_partitions(tmp_path):
    spec = SyntheticBenchmarkSpec(images_per_domain=10, image_size=32)
    man_a, _ = generate_synthetic_domains(spec, tmp_path / "data")
    parts = _split_manifest(man_a, (0.70, 0.15, 0.15), tmp_path / "split")
    names = {p: [f.name for f in list_images(parts[p].image_dir)] for p in parts}
    assert len(names["train"]) == 7
    assert len(names["val"]) + len(names["test"]) == 3
    all_names = names["train"] + names["val"] + names["test"]
    assert len(all_names) == len(set(all_names)) == 10
    for part in parts.values():
        assert part.mask_dir is not None


def test_transform_dataset_identity(tmp_path):
    spec = SyntheticBenchmarkSpec(images_per_domain=3, image_size=32)
    _, man_b = generate_synthetic_domains(spec, tmp_path / "data")
    out, meta = transform_dataset("identity", man_b, tmp_path / "out")
    assert meta == {"method": "identity"}
    assert [p.name for p in list_images(out.image_dir)] == [
        p.name for p in list_images(man_b.image_dir)
    ]
    assert out.mask_dir == man_b.mask_dir


def test_transform_dataset_requires_model_or_style(tmp_path):
    spec = SyntheticBenchmarkSpec(images_per_domain=2, image_size=32)
    _, man_b = generate_synthetic_domains(spec, tmp_path / "data")
    with pytest.raises(ArgumentError):
        transform_dataset("translation", man_b, tmp_path / "o1")
    with pytest.raises(ArgumentError):
        transform_dataset("nst", man_b, tmp_path / "o2")


def test_run_benchmark_identity_report_structure(tmp_path):
    spec = SyntheticBenchmarkSpec(images_per_domain=8, image_size=32)
    cfg = ToyUNetConfig(
        input_size=(32, 32), learning_rate=3e-3, max_epochs=6, patience=6, seed=0
    )
    report = run_benchmark(spec, "identity", tmp_path, unet_config=cfg)
    assert report.baseline_name == "target-raw"
    methods = [name for name, _ in report.rows]
    assert methods == ["source-test", "target-identity"]
    assert report.metadata["seed"] == 0
    assert report.metadata["transform"]["method"] == "identity"
    per_image = report.metadata["per_image"]
    assert set(per_image) == {"source-test", "target-raw", "target-identity"}
    # identity transform leaves domain B unchanged, so the scores agree
    model = report.model_names[0]
    assert abs(dict(report.rows)["target-identity"][model] - report.baseline_row[model]) < 1e-9
