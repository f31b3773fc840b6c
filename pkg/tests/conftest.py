import numpy as np
import pytest

from styleshift.raster import ImageRaster, SegmentationMask, save_image, save_mask


def random_raster(rng, h=16, w=16, c=3):
    return ImageRaster(rng.random((h, w, c)).astype(np.float32))


def write_blob_dataset(root, n_images=6, size=32, seed=0, invert=False):
    """Tiny dark-blob dataset with masks; invert flips the contrast."""
    img_dir = root / "images"
    mask_dir = root / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_images):
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(8, size - 8, size=2)
        r = rng.uniform(4, 7)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r**2)
        base = np.full((size, size), 0.85)
        base[mask] = 0.2
        base += rng.normal(0, 0.02, base.shape)
        base = np.clip(base, 0.02, 0.98)
        if invert:
            base = 1.0 - base
        values = np.repeat(base[:, :, None], 3, axis=2).astype(np.float32)
        save_image(ImageRaster(values), img_dir / f"img_{i:03d}.png")
        save_mask(SegmentationMask(mask.astype(np.uint8)), mask_dir / f"img_{i:03d}.png")
    return img_dir, mask_dir


@pytest.fixture
def rng():
    return np.random.default_rng(0)
