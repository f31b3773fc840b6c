"""Image loading, normalization, resizing, masks, and dataset manifests."""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ArgumentError, ContractError, FormatError

SUPPORTED_FORMATS = ("PNG", "TIFF", "JPG")
_EXT_TO_FORMAT = {
    ".png": "PNG",
    ".tif": "TIFF",
    ".tiff": "TIFF",
    ".jpg": "JPG",
    ".jpeg": "JPG",
}
IMAGE_EXTENSIONS = tuple(_EXT_TO_FORMAT)


@dataclass(frozen=True)
class ImageRaster:
    """Normalized float image in [0, 1], shape (h, w, c) with c in {1, 3}."""

    values: np.ndarray
    source_bit_depth: int = 8
    source_format: str = "PNG"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise ContractError(f"raster must be (h, w, c) with c in {{1, 3}}, got {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ContractError("raster must have height >= 1 and width >= 1")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ContractError("raster values must lie in [0, 1]")
        if self.source_bit_depth not in (8, 16):
            raise ContractError("source_bit_depth must be 8 or 16")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class SegmentationMask:
    """Binary mask, shape (h, w), values in {0, 1}."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ContractError(f"mask must be 2-D, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ContractError("mask values must be strictly binary")
        v = np.ascontiguousarray(v.astype(np.uint8))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class DatasetManifest:
    """Describes one image directory (optionally with masks) and its role."""

    name: str
    image_dir: str
    mask_dir: str = None
    role: str = "source"
    notes: str = ""

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise ContractError(f"role must be 'source' or 'target', got {self.role!r}")


@dataclass
class DomainPair:
    source: DatasetManifest
    target: DatasetManifest

    def __post_init__(self):
        if self.source.role != "source":
            raise ContractError("DomainPair.source must have role='source'")
        if self.target.role != "target":
            raise ContractError("DomainPair.target must have role='target'")
        if os.path.abspath(self.source.image_dir) == os.path.abspath(self.target.image_dir):
            raise ContractError("source and target manifests must be distinct")


def _format_of(path):
    ext = Path(path).suffix.lower()
    fmt = _EXT_TO_FORMAT.get(ext)
    if fmt is None:
        raise FormatError(
            f"unsupported image format {ext!r} for {path}; supported: {', '.join(SUPPORTED_FORMATS)}"
        )
    return fmt


def load_image(path, stretch_percentiles=None):
    """Load a PNG/TIFF/JPG file into a normalized ImageRaster.

    16-bit sources are divided by 65535 by default; stretch_percentiles=(lo, hi)
    rescales between those intensity percentiles instead.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image file not found: {path}")
    fmt = _format_of(path)
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            bit_depth = 16
        else:
            if mode == "P":
                im = im.convert("RGB")
            elif mode == "RGBA":
                im = im.convert("RGB")
            elif mode == "LA":
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)
            bit_depth = 8
    scale = float(2**bit_depth - 1)
    if stretch_percentiles is not None:
        lo_p, hi_p = stretch_percentiles
        lo, hi = np.percentile(arr, [lo_p, hi_p])
        if hi <= lo:
            values = np.zeros_like(arr)
        else:
            values = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    else:
        values = arr / scale
    return ImageRaster(values=values.astype(np.float32), source_bit_depth=bit_depth, source_format=fmt)


def save_image(img, path):
    """Write a raster back at its recorded bit depth. PNG supports 8 and 16 bit;
    JPG and TIFF are written 8-bit except 16-bit single-channel TIFF/PNG."""
    path = Path(path)
    fmt = _format_of(path)
    v = img.values[:, :, 0] if img.channels == 1 else img.values
    if img.source_bit_depth == 16 and img.channels == 1 and fmt in ("PNG", "TIFF"):
        arr = np.round(v * 65535.0).astype(np.uint16)
        pil = Image.fromarray(arr)
    else:
        arr = np.round(v * 255.0).astype(np.uint8)
        pil = Image.fromarray(arr)
    pil.save(path)


def load_mask(path):
    """Load a single-channel mask image, binarizing at 0.5 of full range."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return SegmentationMask((arr >= 0.5).astype(np.uint8))


def save_mask(mask, path):
    Image.fromarray(mask.values * np.uint8(255)).save(path)


def to_three_channel(img):
    """Replicate a 1-channel raster across 3 channels; 3-channel passes through."""
    if img.channels == 3:
        return img
    values = np.repeat(img.values, 3, axis=2)
    return ImageRaster(values, img.source_bit_depth, img.source_format)


def _resize_array(values, h, w, mode):
    # values: (h, w, c) float32
    t = torch.from_numpy(np.array(values, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0)
    if mode == "bilinear":
        out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False, antialias=False)
    elif mode == "nearest":
        out = F.interpolate(t, size=(h, w), mode="nearest-exact")
    else:
        raise ArgumentError(f"unknown resize mode {mode!r}")
    out = out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0)
    return out.numpy()


def resize(img, h, w, mode="bilinear"):
    """Resize a raster to (h, w). Use mode='nearest' for mask-like content."""
    if h < 1 or w < 1:
        raise ArgumentError(f"resize dimensions must be positive, got ({h}, {w})")
    if (h, w) == (img.height, img.width):
        return img
    values = _resize_array(img.values, h, w, mode)
    return ImageRaster(values, img.source_bit_depth, img.source_format)


def resize_mask(mask, h, w):
    if h < 1 or w < 1:
        raise ArgumentError(f"resize dimensions must be positive, got ({h}, {w})")
    if (h, w) == (mask.values.shape[0], mask.values.shape[1]):
        return mask
    values = _resize_array(mask.values[:, :, None].astype(np.float32), h, w, "nearest")
    return SegmentationMask(values[:, :, 0].astype(np.uint8))


def list_images(image_dir):
    d = Path(image_dir)
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def mask_path_for(image_path, mask_dir):
    """Masks share the image's stem; any supported extension matches."""
    stem = Path(image_path).stem
    for ext in IMAGE_EXTENSIONS:
        cand = Path(mask_dir) / (stem + ext)
        if cand.exists():
            return cand
    return None


def validate_manifest(m):
    """Return a list of violation strings; empty means the manifest is valid."""
    violations = []
    d = Path(m.image_dir)
    if not d.is_dir():
        violations.append(f"image_dir does not exist: {m.image_dir}")
        return violations
    images = list_images(d)
    if not images:
        violations.append(f"no readable images in {m.image_dir}")
    for p in images:
        try:
            load_image(p)
        except Exception as e:  # noqa: BLE001 - collect, never raise mid-scan
            violations.append(f"unreadable image {p.name}: {e}")
    if m.mask_dir is not None:
        if not Path(m.mask_dir).is_dir():
            violations.append(f"mask_dir does not exist: {m.mask_dir}")
        else:
            for p in images:
                if mask_path_for(p, m.mask_dir) is None:
                    violations.append(f"missing mask for image {p.name}")
    return violations


def manifest_to_json(m):
    return json.dumps(
        {
            "name": m.name,
            "image_dir": str(m.image_dir),
            "mask_dir": None if m.mask_dir is None else str(m.mask_dir),
            "role": m.role,
            "notes": m.notes,
        },
        indent=2,
        sort_keys=True,
    )


def manifest_from_json(text):
    d = json.loads(text)
    return DatasetManifest(
        name=d["name"],
        image_dir=d["image_dir"],
        mask_dir=d.get("mask_dir"),
        role=d.get("role", "source"),
        notes=d.get("notes", ""),
    )
