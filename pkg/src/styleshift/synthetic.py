"""Seed-deterministic synthetic domain-shift benchmark data.

Domain A: dark blobs on a light background, each blob carrying a bright
boundary rim in the style of a phase-contrast halo. Domain B: same geometry
but contrast-inverted, color-tinted, and mildly blurred, so a model trained
on A fails on B by construction.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ArgumentError
from .raster import DatasetManifest, ImageRaster, SegmentationMask, save_image, save_mask


@dataclass
class SyntheticBenchmarkSpec:
    images_per_domain: int = 24
    image_size: int = 96
    blob_count_range: tuple = (1, 3)
    blob_radius_range: tuple = (0.08, 0.18)  # fraction of image size
    domain_a_style: str = "dark-blob-on-light"
    domain_b_style: str = "inverted-contrast+tint+blur"
    tint: tuple = (1.0, 0.8, 0.6)
    blur_sigma: float = 1.0
    background_range: tuple = (0.80, 0.90)  # per image
    foreground_range: tuple = (0.15, 0.60)  # per blob
    rim_fraction: float = 0.28  # fraction of the radius taken by the halo rim
    rim_range: tuple = (0.94, 0.98)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.images_per_domain < 1:
            raise ArgumentError("images_per_domain must be >= 1")
        if self.image_size < 16:
            raise ArgumentError("image_size must be >= 16")
        lo, hi = self.blob_radius_range
        if not (0 < lo <= hi < 0.5):
            raise ArgumentError("blob_radius_range must satisfy 0 < lo <= hi < 0.5")
        if not (0.0 <= self.rim_fraction < 1.0):
            raise ArgumentError("rim_fraction must lie in [0, 1)")


def _draw_blobs(spec, rng):
    """One grayscale base image plus its exact mask."""
    n = spec.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    mask = np.zeros((n, n), dtype=bool)
    base = np.full((n, n), rng.uniform(*spec.background_range))
    count = rng.integers(spec.blob_count_range[0], spec.blob_count_range[1] + 1)
    inner = 1.0 - spec.rim_fraction
    for _ in range(count):
        r = rng.uniform(*spec.blob_radius_range) * n
        cy = rng.uniform(r, n - r)
        cx = rng.uniform(r, n - r)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        disk = d2 <= r**2
        base[d2 < (inner * r) ** 2] = rng.uniform(*spec.foreground_range)
        base[disk & (d2 >= (inner * r) ** 2)] = rng.uniform(*spec.rim_range)
        mask |= disk
    base += rng.normal(0.0, spec.noise, size=base.shape)
    return np.clip(base, 0.02, 0.98), mask.astype(np.uint8)


def _render_domain_a(base):
    return np.repeat(base[:, :, None], 3, axis=2)


def _render_domain_b(base, spec):
    inv = 1.0 - base
    rgb = np.stack([inv * t for t in spec.tint], axis=2)
    if spec.blur_sigma > 0:
        rgb = gaussian_filter(rgb, sigma=(spec.blur_sigma, spec.blur_sigma, 0))
    return np.clip(rgb, 0.0, 1.0)


def generate_synthetic_domains(spec, out_dir):
    """Write both domains under out_dir; returns (manifest_a, manifest_b)."""
    out_dir = Path(out_dir)
    manifests = []
    for idx, (domain, render, role) in enumerate(
        (
            ("domain_a", _render_domain_a, "source"),
            ("domain_b", lambda b: _render_domain_b(b, spec), "target"),
        )
    ):
        image_dir = out_dir / domain / "images"
        mask_dir = out_dir / domain / "masks"
        image_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng((spec.seed, idx))
        for i in range(spec.images_per_domain):
            base, mask = _draw_blobs(spec, rng)
            values = render(base).astype(np.float32)
            name = f"{domain}_{i:03d}.png"
            save_image(ImageRaster(values), image_dir / name)
            save_mask(SegmentationMask(mask), mask_dir / name)
        manifests.append(
            DatasetManifest(
                name=domain,
                image_dir=str(image_dir),
                mask_dir=str(mask_dir),
                role=role,
                notes=f"synthetic {spec.domain_a_style if role == 'source' else spec.domain_b_style}",
            )
        )
    return manifests[0], manifests[1]
