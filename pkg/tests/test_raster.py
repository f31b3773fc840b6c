import numpy as np
import pytest

from styleshift.errors import ArgumentError, ContractError, FormatError
from styleshift.raster import (
    DatasetManifest,
    DomainPair,
    ImageRaster,
    SegmentationMask,
    list_images,
    load_image,
    load_mask,
    manifest_from_json,
    manifest_to_json,
    mask_path_for,
    resize,
    resize_mask,
    save_image,
    save_mask,
    to_three_channel,
    validate_manifest,
)


def test_raster_contract_rejects_out_of_range():
    with pytest.raises(ContractError):
        ImageRaster(np.full((4, 4, 3), 1.5, dtype=np.float32))
    with pytest.raises(ContractError):
        ImageRaster(np.full((4, 4, 3), -0.1, dtype=np.float32))


def test_raster_contract_rejects_bad_shapes():
    with pytest.raises(ContractError):
        ImageRaster(np.zeros((4, 4, 2), dtype=np.float32))
    with pytest.raises(ContractError):
        ImageRaster(np.zeros((0, 4, 3), dtype=np.float32))


def test_grayscale_promoted_to_one_channel():
    img = ImageRaster(np.zeros((5, 6), dtype=np.float32))
    assert img.channels == 1
    assert (img.height, img.width) == (5, 6)


def test_png_8bit_roundtrip(tmp_path, rng):
    values = rng.random((10, 12, 3)).astype(np.float32)
    path = tmp_path / "x.png"
    save_image(ImageRaster(values), path)
    back = load_image(path)
    assert back.source_bit_depth == 8
    assert back.source_format == "PNG"
    expected = np.round(values * 255.0) / 255.0
    np.testing.assert_allclose(back.values, expected, atol=1e-6)


def test_png_16bit_single_channel_roundtrip(tmp_path, rng):
    values = rng.random((8, 8, 1)).astype(np.float32)
    path = tmp_path / "x.png"
    save_image(ImageRaster(values, source_bit_depth=16), path)
    back = load_image(path)
    assert back.source_bit_depth == 16
    expected = np.round(values * 65535.0) / 65535.0
    np.testing.assert_allclose(back.values, expected, atol=1e-7)


def test_tiff_roundtrip(tmp_path, rng):
    values = rng.random((8, 8, 1)).astype(np.float32)
    path = tmp_path / "x.tif"
    save_image(ImageRaster(values, source_bit_depth=16, source_format="TIFF"), path)
    back = load_image(path)
    assert back.source_format == "TIFF"
    assert back.source_bit_depth == 16


def test_jpg_loads(tmp_path, rng):
    values = rng.random((8, 8, 3)).astype(np.float32)
    path = tmp_path / "x.jpg"
    save_image(ImageRaster(values), path)
    back = load_image(path)
    assert back.source_format == "JPG"
    assert back.values.shape == (8, 8, 3)


def test_unsupported_extension_rejected(tmp_path):
    path = tmp_path / "x.bmp"
    path.write_bytes(b"data")
    with pytest.raises(FormatError):
        load_image(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "absent.png")


def test_percentile_stretch(tmp_path):
    values = np.linspace(0.0, 1.0, 64, dtype=np.float32).reshape(8, 8, 1)
    path = tmp_path / "x.png"
    save_image(ImageRaster(values), path)
    stretched = load_image(path, stretch_percentiles=(0, 50))
    assert stretched.values.max() == 1.0
    assert stretched.values.min() == 0.0


def test_mask_roundtrip_and_binarization(tmp_path, rng):
    mask = SegmentationMask((rng.random((9, 9)) > 0.5).astype(np.uint8))
    path = tmp_path / "m.png"
    save_mask(mask, path)
    back = load_mask(path)
    np.testing.assert_array_equal(back.values, mask.values)


def test_mask_rejects_non_binary():
    with pytest.raises(ContractError):
        SegmentationMask(np.full((3, 3), 2, dtype=np.uint8))


def test_to_three_channel(rng):
    one = ImageRaster(rng.random((4, 4, 1)).astype(np.float32))
    three = to_three_channel(one)
    assert three.channels == 3
    np.testing.assert_array_equal(three.values[:, :, 0], three.values[:, :, 2])
    assert to_three_channel(three) is three


def test_resize_shapes_and_identity(rng):
    img = ImageRaster(rng.random((8, 8, 3)).astype(np.float32))
    assert resize(img, 8, 8) is img
    out = resize(img, 17, 5)
    assert (out.height, out.width) == (17, 5)
    with pytest.raises(ArgumentError):
        resize(img, 0, 5)


def test_resize_mask_stays_binary(rng):
    mask = SegmentationMask((rng.random((16, 16)) > 0.5).astype(np.uint8))
    out = resize_mask(mask, 7, 11)
    assert out.values.shape == (7, 11)
    assert set(np.unique(out.values)) <= {0, 1}


def test_list_images_sorted_and_filtered(tmp_path, rng):
    for name in ("b.png", "a.png", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    names = [p.name for p in list_images(tmp_path)]
    assert names == ["a.png", "b.png"]


def test_mask_path_for_crosses_extensions(tmp_path, rng):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    save_mask(SegmentationMask(np.zeros((4, 4), dtype=np.uint8)), mask_dir / "img.tif")
    found = mask_path_for(tmp_path / "img.png", mask_dir)
    assert found is not None and found.name == "img.tif"
    assert mask_path_for(tmp_path / "other.png", mask_dir) is None


def test_manifest_json_roundtrip():
    m = DatasetManifest(name="d", image_dir="/x/images", mask_dir="/x/masks", role="target", notes="n")
    back = manifest_from_json(manifest_to_json(m))
    assert back == m


def test_manifest_role_contract():
    with pytest.raises(ContractError):
        DatasetManifest(name="d", image_dir="/x", role="other")


def test_domain_pair_contracts(tmp_path):
    src = DatasetManifest(name="s", image_dir=str(tmp_path / "a"), role="source")
    tgt = DatasetManifest(name="t", image_dir=str(tmp_path / "b"), role="target")
    DomainPair(source=src, target=tgt)
    with pytest.raises(ContractError):
        DomainPair(source=tgt, target=tgt)
    with pytest.raises(ContractError):
        DomainPair(
            source=DatasetManifest(name="s", image_dir=str(tmp_path / "b"), role="source"),
            target=tgt,
        )


def test_validate_manifest_reports_violations(tmp_path, rng):
    missing = DatasetManifest(name="m", image_dir=str(tmp_path / "nope"))
    assert validate_manifest(missing)

    img_dir = tmp_path / "images"
    mask_dir = tmp_path / "masks"
    img_dir.mkdir()
    mask_dir.mkdir()
    save_image(ImageRaster(rng.random((4, 4, 3)).astype(np.float32)), img_dir / "a.png")
    ok = DatasetManifest(name="ok", image_dir=str(img_dir))
    assert validate_manifest(ok) == []
    with_masks = DatasetManifest(name="mm", image_dir=str(img_dir), mask_dir=str(mask_dir))
    assert any("missing mask" in v for v in validate_manifest(with_masks))
