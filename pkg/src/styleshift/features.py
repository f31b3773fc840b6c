"""Convolutional feature extraction and the statistics consumed by the
style-transfer objectives: Gram matrices, self-similarity, hypercolumns."""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ArgumentError, ContractError

DEFAULT_CHANNELS = (16, 32, 64, 128, 128)
DEFAULT_STRIDES = (1, 2, 2, 2, 2)  # cumulative strides 1, 2, 4, 8, 16


@dataclass
class FeaturePyramid:
    """Per-layer feature maps keyed by layer id, each (channels, h, w)."""

    maps: dict
    layer_ids: tuple
    image_size: tuple  # (h, w) of the image the pyramid was extracted from

    def __post_init__(self):
        self.layer_ids = tuple(self.layer_ids)
        sizes = [self.maps[i].shape[1:] for i in self.layer_ids]
        for a, b in zip(sizes, sizes[1:]):
            if b[0] > a[0] or b[1] > a[1]:
                raise ContractError("pyramid spatial sizes must be non-increasing with depth")


def _kaiming_conv(out_c, in_c, k, generator):
    fan_in = in_c * k * k
    w = torch.randn(out_c, in_c, k, k, generator=generator)
    return w * math.sqrt(2.0 / fan_in)


class _RandomPyramidNet(nn.Module):
    """Bias-free random conv stack; deterministic for a fixed seed."""

    def __init__(self, seed, channels=DEFAULT_CHANNELS, strides=DEFAULT_STRIDES):
        super().__init__()
        g = torch.Generator().manual_seed(int(seed))
        convs = []
        in_c = 3
        for out_c, s in zip(channels, strides):
            conv = nn.Conv2d(in_c, out_c, 3, stride=s, padding=1, bias=False)
            with torch.no_grad():
                conv.weight.copy_(_kaiming_conv(out_c, in_c, 3, g))
            conv.weight.requires_grad_(False)
            convs.append(conv)
            in_c = out_c
        self.convs = nn.ModuleList(convs)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = torch.relu(conv(x))
            feats.append(x)
        return feats


class _VGGTapNet(nn.Module):
    """VGG16 feature taps at the five relu blocks; weights from a local file."""

    TAPS = (3, 8, 15, 22, 29)  # relu1_2, relu2_2, relu3_3, relu4_3, relu5_3
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, weights_path):
        super().__init__()
        from torchvision.models import vgg16

        net = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        self.features = net.features[: self.TAPS[-1] + 1].eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))

    def forward(self, x):
        x = (x - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.TAPS:
                feats.append(x)
        return feats


class FeatureExtractor:
    """Multi-scale feature tap stack.

    weights_source='fixed-seed-random' builds a bias-free random conv pyramid
    (hermetic, no downloads); 'pretrained-classifier' loads VGG16 weights from
    a local file given by weights_path.
    """

    def __init__(
        self,
        weights_source="fixed-seed-random",
        seed=0,
        layer_ids=(0, 1, 2, 3, 4),
        weights_path=None,
    ):
        layer_ids = tuple(layer_ids)
        if not layer_ids:
            raise ArgumentError("layer_ids must be non-empty")
        if list(layer_ids) != sorted(set(layer_ids)):
            raise ArgumentError("layer_ids must be strictly increasing")
        if weights_source == "fixed-seed-random":
            self.net = _RandomPyramidNet(seed)
        elif weights_source == "pretrained-classifier":
            if weights_path is None:
                raise ArgumentError("pretrained-classifier mode requires weights_path")
            self.net = _VGGTapNet(weights_path)
        else:
            raise ArgumentError(f"unknown weights_source {weights_source!r}")
        if max(layer_ids) > 4 or min(layer_ids) < 0:
            raise ArgumentError("layer_ids must be within 0..4")
        self.weights_source = weights_source
        self.seed = int(seed)
        self.layer_ids = layer_ids
        self.input_channels = 3

    def forward_tensors(self, x):
        """x: (1, 3, h, w) tensor -> list of tapped feature tensors (with grad)."""
        feats = self.net(x)
        return [feats[i] for i in self.layer_ids]


def raster_to_tensor(img):
    t = torch.from_numpy(np.array(img.values, dtype=np.float32))
    return t.permute(2, 0, 1).unsqueeze(0)


def extract_features(extractor, img):
    """Extract a FeaturePyramid from a 3-channel raster; deterministic."""
    if img.channels != 3:
        raise ContractError(
            "extract_features requires a 3-channel raster; use to_three_channel first"
        )
    with torch.no_grad():
        feats = extractor.forward_tensors(raster_to_tensor(img))
    maps = {
        lid: f.squeeze(0).numpy().copy() for lid, f in zip(extractor.layer_ids, feats)
    }
    return FeaturePyramid(maps=maps, layer_ids=extractor.layer_ids, image_size=(img.height, img.width))


def _as_2d(fmap):
    """(C, H, W) or (C, N) array/tensor -> torch tensor (C, N)."""
    t = fmap if torch.is_tensor(fmap) else torch.as_tensor(np.asarray(fmap), dtype=torch.float32)
    if t.dim() == 3:
        t = t.reshape(t.shape[0], -1)
    if t.dim() != 2:
        raise ContractError(f"feature map must be (C, H, W) or (C, N), got shape {tuple(fmap.shape)}")
    return t


def gram_matrix(fmap):
    """G[i, j] = (1/N) sum_n F[i, n] F[j, n] over the N spatial positions."""
    t = _as_2d(fmap)
    if t.shape[1] < 1 or t.shape[0] < 1:
        raise ArgumentError("gram_matrix requires a non-empty feature map")
    g = t @ t.T / t.shape[1]
    return g if torch.is_tensor(fmap) else g.numpy()


def cosine_distance_matrix(a, b):
    """Pairwise 1 - cos between rows of a (n, d) and b (m, d).

    Zero-norm rows are at distance 1 from non-zero rows and 0 from each other.
    """
    a = a if torch.is_tensor(a) else torch.as_tensor(np.asarray(a), dtype=torch.float32)
    b = b if torch.is_tensor(b) else torch.as_tensor(np.asarray(b), dtype=torch.float32)
    na = a.norm(dim=1)
    nb = b.norm(dim=1)
    denom = na[:, None] * nb[None, :]
    dots = a @ b.T
    cos = torch.where(denom > 0, dots / denom.clamp_min(1e-30), torch.zeros_like(dots))
    dist = (1.0 - cos).clamp_min(0.0)
    a_zero = na == 0
    b_zero = nb == 0
    both_zero = a_zero[:, None] & b_zero[None, :]
    one_zero = a_zero[:, None] ^ b_zero[None, :]
    dist = torch.where(both_zero, torch.zeros_like(dist), dist)
    dist = torch.where(one_zero, torch.ones_like(dist), dist)
    return dist


def sample_positions(n_positions, sample_count, seed=0):
    rng = np.random.default_rng(seed)
    if sample_count > n_positions:
        raise ArgumentError(
            f"sample_count {sample_count} exceeds available positions {n_positions}"
        )
    idx = rng.choice(n_positions, size=sample_count, replace=False)
    return np.sort(idx)


def self_similarity(fmap, sample_count=None, seed=0):
    """Cosine-distance matrix between feature vectors at sampled positions."""
    t = _as_2d(fmap)
    n = t.shape[1]
    if sample_count is None or sample_count >= n:
        vecs = t.T
    else:
        idx = sample_positions(n, sample_count, seed)
        vecs = t.T[torch.as_tensor(idx, dtype=torch.long)]
    d = cosine_distance_matrix(vecs, vecs)
    d.fill_diagonal_(0.0)
    return d if torch.is_tensor(fmap) else d.numpy()


def _bilinear_at(fmap, r, c):
    """Sample one (row, col) location of a (C, h, w) tensor, align-corners style."""
    _, h, w = fmap.shape
    r = min(max(r, 0.0), h - 1.0)
    c = min(max(c, 0.0), w - 1.0)
    r0, c0 = int(math.floor(r)), int(math.floor(c))
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    fr, fc = r - r0, c - c0
    top = fmap[:, r0, c0] * (1 - fc) + fmap[:, r0, c1] * fc
    bot = fmap[:, r1, c0] * (1 - fc) + fmap[:, r1, c1] * fc
    return top * (1 - fr) + bot * fr


def hypercolumn_sample(pyr, positions, layers=None):
    """Stack bilinearly-sampled per-layer features at image-space positions.

    Returns a (len(positions), sum of layer channels) matrix; layer grids are
    aligned to the image with corner pixels coinciding.
    """
    layers = pyr.layer_ids if layers is None else tuple(layers)
    for lid in layers:
        if lid not in pyr.layer_ids:
            raise ArgumentError(f"layer {lid} not in pyramid layers {pyr.layer_ids}")
    ih, iw = pyr.image_size
    rows = []
    for r, c in positions:
        if not (0 <= r <= ih - 1 and 0 <= c <= iw - 1):
            raise ArgumentError(f"position ({r}, {c}) outside image bounds {ih}x{iw}")
        parts = []
        for lid in layers:
            fmap = pyr.maps[lid]
            t = fmap if torch.is_tensor(fmap) else torch.as_tensor(fmap, dtype=torch.float32)
            _, h, w = t.shape
            lr = r * (h - 1) / (ih - 1) if ih > 1 else 0.0
            lc = c * (w - 1) / (iw - 1) if iw > 1 else 0.0
            parts.append(_bilinear_at(t, lr, lc))
        rows.append(torch.cat(parts))
    out = torch.stack(rows)
    any_tensor = any(torch.is_tensor(pyr.maps[lid]) for lid in layers)
    return out if any_tensor else out.numpy()


def hypercolumn_sample_batched(feature_tensors, image_size, positions):
    """Differentiable batched hypercolumn sampling for the optimizers.

    feature_tensors: list of (1, C, h, w) tensors; positions: (P, 2) float
    tensor of (row, col) in image coordinates. Same corner-aligned grid as
    hypercolumn_sample.
    """
    ih, iw = image_size
    pos = positions if torch.is_tensor(positions) else torch.as_tensor(positions, dtype=torch.float32)
    pos = pos.to(torch.float32)
    gy = pos[:, 0] * 2.0 / max(ih - 1, 1) - 1.0
    gx = pos[:, 1] * 2.0 / max(iw - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=1).view(1, 1, -1, 2)
    parts = []
    for f in feature_tensors:
        sampled = torch.nn.functional.grid_sample(
            f, grid, mode="bilinear", align_corners=True
        )  # (1, C, 1, P)
        parts.append(sampled[0, :, 0, :].T)
    return torch.cat(parts, dim=1)
