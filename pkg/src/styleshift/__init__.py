"""styleshift: recover segmentation performance under domain shift via style
transfer and unpaired image-to-image translation."""

__version__ = "0.1.0"

from .raster import (  # noqa: F401
    DatasetManifest,
    DomainPair,
    ImageRaster,
    SegmentationMask,
    load_image,
    load_mask,
    resize,
    save_image,
    save_mask,
    to_three_channel,
    validate_manifest,
)
