"""Optimization-based style transfer (NST, STROTSS) behind a named registry."""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import raster
from .errors import (
    ArgumentError,
    ContractError,
    DivergenceError,
    ExtensionPointError,
    RegistryConflictError,
    RegistryFrozenError,
    UnknownAlgorithmError,
)
from .features import (
    FeatureExtractor,
    FeaturePyramid,
    cosine_distance_matrix,
    gram_matrix,
    hypercolumn_sample_batched,
    raster_to_tensor,
)
from .raster import ImageRaster, list_images


@dataclass
class StyleTransferRequest:
    style_image: ImageRaster
    content_image: ImageRaster
    algorithm: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        hp = self.hyperparams
        if hp.get("iterations", 0) < 0:
            raise ArgumentError("iterations must be >= 0")
        for key in ("content_weight", "style_weight"):
            if hp.get(key, 0.0) < 0:
                raise ArgumentError(f"{key} must be >= 0")


@dataclass
class TransferResult:
    output_image: ImageRaster
    loss_trace: list  # (iteration, total, content, style)
    algorithm: str
    hyperparams: dict
    diagnostics: dict = field(default_factory=dict)


class AlgorithmRegistry:
    def __init__(self):
        self._entries = {}
        self.frozen = False

    def register(self, name, proc):
        if self.frozen:
            raise RegistryFrozenError(f"registry is frozen; cannot register {name!r}")
        if name in self._entries:
            raise RegistryConflictError(f"algorithm {name!r} is already registered")
        self._entries[name] = proc

    def freeze(self):
        self.frozen = True

    def names(self):
        return sorted(self._entries)

    def get(self, name):
        if name not in self._entries:
            raise UnknownAlgorithmError(name, self._entries)
        return self._entries[name]


def register_algorithm(reg, name, proc):
    reg.register(name, proc)
    return reg


# ---------------------------------------------------------------------------
# Losses


def _pyramid_items(pyr):
    if isinstance(pyr, FeaturePyramid):
        return pyr.layer_ids, pyr.maps
    if isinstance(pyr, dict):
        return tuple(sorted(pyr)), pyr
    raise ContractError("expected a FeaturePyramid or a layer->map dict")


def _select_layers(a, b, layers):
    ids_a, maps_a = _pyramid_items(a)
    ids_b, maps_b = _pyramid_items(b)
    layers = tuple(layers) if layers is not None else ids_a
    for lid in layers:
        if lid not in ids_a or lid not in ids_b:
            raise ContractError(f"layer {lid} missing from one of the pyramids")
    return layers, maps_a, maps_b


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x), dtype=torch.float32)


def _maybe_float(t, inputs):
    if any(torch.is_tensor(x) for x in inputs):
        return t
    return float(t)


def content_loss(f_out, f_content, layers=None):
    """Mean squared feature difference, averaged across the selected layers."""
    layers, maps_a, maps_b = _select_layers(f_out, f_content, layers)
    total = 0.0
    for lid in layers:
        a, b = _as_tensor(maps_a[lid]), _as_tensor(maps_b[lid])
        if a.shape != b.shape:
            raise ContractError(f"layer {lid} shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        total = total + torch.mean((a - b) ** 2)
    out = total / len(layers)
    return _maybe_float(out, [maps_a[layers[0]], maps_b[layers[0]]])


def style_loss(f_out, f_style, layers=None):
    """Mean squared Gram-matrix difference, averaged across the selected layers."""
    layers, maps_a, maps_b = _select_layers(f_out, f_style, layers)
    total = 0.0
    for lid in layers:
        a, b = _as_tensor(maps_a[lid]), _as_tensor(maps_b[lid])
        if a.shape[0] != b.shape[0]:
            raise ContractError(
                f"layer {lid} channel mismatch: {a.shape[0]} vs {b.shape[0]}"
            )
        total = total + torch.mean((gram_matrix(a) - gram_matrix(b)) ** 2)
    out = total / len(layers)
    return _maybe_float(out, [maps_a[layers[0]], maps_b[layers[0]]])


def remd_loss(a, b):
    """Relaxed earth-mover distance under cosine cost:
    max(mean_a min_b cost, mean_b min_a cost)."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.numel() == 0 or tb.numel() == 0:
        raise ArgumentError("remd_loss requires non-empty vector sets")
    cost = cosine_distance_matrix(ta, tb)
    fwd = cost.min(dim=1).values.mean()
    bwd = cost.min(dim=0).values.mean()
    return _maybe_float(torch.maximum(fwd, bwd), [a, b])


def moment_matching_loss(a, b):
    """Mean absolute difference of per-dimension means plus mean absolute
    difference of (biased) covariance entries."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.numel() == 0 or tb.numel() == 0:
        raise ArgumentError("moment_matching_loss requires non-empty vector sets")
    if ta.shape[1] != tb.shape[1]:
        raise ContractError(f"vector dimension mismatch: {ta.shape[1]} vs {tb.shape[1]}")
    mu_a, mu_b = ta.mean(dim=0), tb.mean(dim=0)
    ca = (ta - mu_a).T @ (ta - mu_a) / ta.shape[0]
    cb = (tb - mu_b).T @ (tb - mu_b) / tb.shape[0]
    out = torch.mean(torch.abs(mu_a - mu_b)) + torch.mean(torch.abs(ca - cb))
    return _maybe_float(out, [a, b])


# ---------------------------------------------------------------------------
# NST


def _check_finite(total, iteration, scale=None):
    if not torch.isfinite(total):
        where = f"iteration {iteration}" if scale is None else f"scale {scale}, iteration {iteration}"
        raise DivergenceError(f"non-finite loss at {where}", iteration=iteration, scale=scale)


def nst_transfer(req, extractor):
    """Gradient descent on pixel values minimizing
    content_weight * content_loss + style_weight * style_loss."""
    hp = dict(req.hyperparams)
    iterations = int(hp.get("iterations", 300))
    cw = float(hp.get("content_weight", 1.0))
    sw = float(hp.get("style_weight", 1e3))
    lr = float(hp.get("lr", 0.02))
    seed = int(hp.get("seed", 0))
    content_layers = tuple(hp.get("content_layers", (2,)))
    style_layers = tuple(hp.get("style_layers", extractor.layer_ids))

    torch.manual_seed(seed)
    content = raster_to_tensor(req.content_image)
    style = raster_to_tensor(req.style_image)
    with torch.no_grad():
        style_feats = extractor.forward_tensors(style)
        style_grams = {
            lid: gram_matrix(f.squeeze(0)) for lid, f in zip(extractor.layer_ids, style_feats)
        }
        content_targets = {
            lid: f.detach()
            for lid, f in zip(extractor.layer_ids, extractor.forward_tensors(content))
        }

    x = content.clone().requires_grad_(True)
    opt = torch.optim.Adam([x], lr=lr)
    trace = []
    best = (math.inf, content.detach().clone())
    for it in range(iterations + 1):
        feats = {lid: f.squeeze(0) for lid, f in zip(extractor.layer_ids, extractor.forward_tensors(x))}
        c_term = content_loss(feats, {k: v.squeeze(0) for k, v in content_targets.items()}, content_layers)
        s_term = 0.0
        for lid in style_layers:
            s_term = s_term + torch.mean((gram_matrix(feats[lid]) - style_grams[lid]) ** 2)
        s_term = s_term / len(style_layers)
        total = cw * c_term + sw * s_term
        _check_finite(total, it)
        trace.append((it, total.detach().item(), c_term.detach().item(), s_term.detach().item()))
        if trace[-1][1] < best[0]:
            best = (trace[-1][1], x.detach().clone())
        if it == iterations:
            break
        opt.zero_grad()
        total.backward()
        opt.step()
        with torch.no_grad():
            x.clamp_(0.0, 1.0)

    out = x.detach()
    if trace[-1][1] > trace[0][1]:
        out = best[1]  # keep the post-condition: never return worse than the init
    values = out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()
    echoed = {
        "iterations": iterations,
        "content_weight": cw,
        "style_weight": sw,
        "lr": lr,
        "seed": seed,
        "content_layers": list(content_layers),
        "style_layers": list(style_layers),
        "optimizer": "adam",
        "extractor": extractor.weights_source,
        "extractor_seed": extractor.seed,
    }
    return TransferResult(
        output_image=ImageRaster(values, req.content_image.source_bit_depth, req.content_image.source_format),
        loss_trace=trace,
        algorithm="nst",
        hyperparams=echoed,
    )


# ---------------------------------------------------------------------------
# STROTSS


def _self_sim_term(va, vb):
    da = cosine_distance_matrix(va, va)
    db = cosine_distance_matrix(vb, vb)
    da = da / (da.sum(dim=1, keepdim=True) + 1e-8)
    db = db / (db.sum(dim=1, keepdim=True) + 1e-8)
    return torch.mean(torch.abs(da - db))


def _strotss_objective(x, extractor, content_feats, style_feats, content_t, style_t, pos, cw, palette_weight):
    h, w = x.shape[2], x.shape[3]
    feats_out = extractor.forward_tensors(x)
    hyper_out = hypercolumn_sample_batched(feats_out, (h, w), pos)
    hyper_style = hypercolumn_sample_batched(style_feats, (h, w), pos)
    hyper_content = hypercolumn_sample_batched(content_feats, (h, w), pos)
    pix_out = hypercolumn_sample_batched([x], (h, w), pos)
    pix_style = hypercolumn_sample_batched([style_t], (h, w), pos)
    style_term = (
        remd_loss(hyper_out, hyper_style)
        + moment_matching_loss(hyper_out, hyper_style)
        + palette_weight * remd_loss(pix_out, pix_style)
    )
    content_term = _self_sim_term(hyper_out, hyper_content)
    return style_term + cw * content_term, content_term, style_term


def strotss_transfer(req, extractor):
    """Coarse-to-fine optimization of the relaxed earth-mover style objective
    plus a self-similarity content term; content weight halves per scale."""
    hp = dict(req.hyperparams)
    scales = int(hp.get("scales", 3))
    iterations = int(hp.get("iterations", 80))
    cw0 = float(hp.get("content_weight", 1.0))
    lr = float(hp.get("lr", 0.02))
    seed = int(hp.get("seed", 0))
    sample_count = int(hp.get("sample_count", 1024))
    palette_weight = float(hp.get("palette_weight", 1.0))
    if scales < 1:
        raise ArgumentError("scales must be >= 1")

    torch.manual_seed(seed)
    ch, cw_px = req.content_image.height, req.content_image.width
    trace = []
    scale_objectives = []
    x = None
    global_it = 0
    for s in range(scales):
        factor = 2 ** (s - (scales - 1))
        h = max(8, round(ch * factor))
        w = max(8, round(cw_px * factor))
        if s == scales - 1:
            h, w = ch, cw_px
        content_s = raster.resize(req.content_image, h, w)
        style_s = raster.resize(req.style_image, h, w)
        content_t = raster_to_tensor(content_s)
        style_t = raster_to_tensor(style_s)
        with torch.no_grad():
            content_feats = [f.detach() for f in extractor.forward_tensors(content_t)]
            style_feats = [f.detach() for f in extractor.forward_tensors(style_t)]
        if x is None:
            x = content_t.clone()
        else:
            x = torch.nn.functional.interpolate(
                x, size=(h, w), mode="bilinear", align_corners=False
            ).clamp(0.0, 1.0)
        x = x.detach().requires_grad_(True)
        opt = torch.optim.Adam([x], lr=lr)
        cw_s = cw0 * (0.5**s)
        n_samples = min(sample_count, h * w)

        def draw_positions(rng):
            rows = rng.uniform(0, h - 1, size=n_samples)
            cols = rng.uniform(0, w - 1, size=n_samples)
            return torch.as_tensor(np.stack([rows, cols], axis=1), dtype=torch.float32)

        eval_pos = draw_positions(np.random.default_rng((seed, s, 0xE)))
        rng = np.random.default_rng((seed, s))
        with torch.no_grad():
            init_total, _, _ = _strotss_objective(
                x, extractor, content_feats, style_feats, content_t, style_t, eval_pos, cw_s, palette_weight
            )
        for it in range(iterations):
            pos = draw_positions(rng)
            total, c_term, s_term = _strotss_objective(
                x, extractor, content_feats, style_feats, content_t, style_t, pos, cw_s, palette_weight
            )
            _check_finite(total, it, scale=s)
            trace.append((global_it, total.detach().item(), c_term.detach().item(), s_term.detach().item()))
            global_it += 1
            opt.zero_grad()
            total.backward()
            opt.step()
            with torch.no_grad():
                x.clamp_(0.0, 1.0)
        with torch.no_grad():
            final_total, _, _ = _strotss_objective(
                x, extractor, content_feats, style_feats, content_t, style_t, eval_pos, cw_s, palette_weight
            )
        scale_objectives.append((s, float(init_total), float(final_total)))
        if not trace:
            trace.append((0, float(init_total), 0.0, float(init_total)))

    values = x.detach().squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()
    echoed = {
        "scales": scales,
        "iterations": iterations,
        "content_weight": cw0,
        "lr": lr,
        "seed": seed,
        "sample_count": sample_count,
        "palette_weight": palette_weight,
        "optimizer": "adam",
        "extractor": extractor.weights_source,
        "extractor_seed": extractor.seed,
    }
    return TransferResult(
        output_image=ImageRaster(values, req.content_image.source_bit_depth, req.content_image.source_format),
        loss_trace=trace,
        algorithm="strotss",
        hyperparams=echoed,
        diagnostics={"scale_objectives": scale_objectives},
    )


# ---------------------------------------------------------------------------
# Registry assembly and dispatch


def _dia_stub(req, extractor):
    raise ExtensionPointError(
        "deep image analogy ('dia') is not implemented; extension point for external algorithms"
    )


def default_registry(freeze=True):
    reg = AlgorithmRegistry()
    reg.register("nst", nst_transfer)
    reg.register("strotss", strotss_transfer)
    reg.register("dia", _dia_stub)
    if freeze:
        reg.freeze()
    return reg


def run_transfer(reg, req, extractor=None):
    proc = reg.get(req.algorithm)
    if req.style_image.channels != 3 or req.content_image.channels != 3:
        raise ContractError("style and content images must have 3 channels; use to_three_channel")
    if extractor is None:
        extractor = FeatureExtractor(
            weights_source="fixed-seed-random",
            seed=int(req.hyperparams.get("extractor_seed", 0)),
        )
    result = proc(req, extractor)
    oh, ow = result.output_image.height, result.output_image.width
    if (oh, ow) != (req.content_image.height, req.content_image.width):
        raise ContractError("algorithm returned output sized differently from the content image")
    return result


def pick_style_image(manifest_or_dir, seed=0):
    """Pick one image path from a source dataset under a fixed seed."""
    image_dir = getattr(manifest_or_dir, "image_dir", manifest_or_dir)
    images = list_images(image_dir)
    if not images:
        raise ArgumentError(f"no images to pick a style from in {image_dir}")
    rng = np.random.default_rng(seed)
    return images[int(rng.integers(len(images)))]
