"""Toy trainable U-Net, the adapter interface for external segmentation
models, LR range test, and early-stopping training."""

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpointio
from .errors import ArgumentError, CheckpointCompatibilityError
from .raster import (
    SegmentationMask,
    list_images,
    load_image,
    load_mask,
    mask_path_for,
    resize,
    resize_mask,
    to_three_channel,
    validate_manifest,
)


@dataclass
class SegmentationModelAdapter:
    """Wraps any predictor with signature ImageRaster -> SegmentationMask.

    The adapter owns the resize into and out of the model's native input
    size; the returned mask always matches the input raster's dimensions.
    """

    name: str
    predict: callable
    input_size: tuple


@dataclass
class ToyUNetConfig:
    depth: int = 2
    base_channels: int = 8
    input_size: tuple = (96, 96)
    learning_rate: object = "auto"  # "auto" runs the LR range test
    max_epochs: int = 60
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ArgumentError("depth must be >= 1")
        if self.patience < 1:
            raise ArgumentError("patience must be >= 1")


@dataclass
class TrainState:
    epoch: int = 0
    best_val_iou: float = 0.0
    epochs_since_best: int = 0
    history: list = field(default_factory=list)  # (epoch, train_loss, val_iou)


class EarlyStopper:
    """Stops after `patience` consecutive non-improving epochs."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -float("inf")
        self.since_best = 0

    def update(self, value):
        """Record one epoch's metric; returns True when training should stop."""
        if value > self.best:
            self.best = value
            self.since_best = 0
        else:
            self.since_best += 1
        return self.since_best >= self.patience


class ToyUNet(nn.Module):
    def __init__(self, depth=2, base_channels=8):
        super().__init__()
        self.depth = depth
        self.enc = nn.ModuleList()
        ch_in, ch = 3, base_channels
        for _ in range(depth):
            self.enc.append(self._block(ch_in, ch))
            ch_in, ch = ch, ch * 2
        self.bottleneck = self._block(ch_in, ch)
        self.dec = nn.ModuleList()
        for _ in range(depth):
            self.dec.append(self._block(ch + ch // 2, ch // 2))
            ch //= 2
        self.head = nn.Conv2d(ch, 1, 1)
        # Foreground-prior bias so early predictions are not all-background,
        # which would stall the loss during warmup.
        with torch.no_grad():
            self.head.bias.fill_(math.log(0.15 / 0.85))

    @staticmethod
    def _block(c_in, c_out):
        return nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        h, w = x.shape[2], x.shape[3]
        mult = 2**self.depth
        ph = (mult - h % mult) % mult
        pw = (mult - w % mult) % mult
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for block, skip in zip(self.dec, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        logits = self.head(x)
        return logits[:, :, :h, :w]


def _bce_soft_iou_loss(logits, masks):
    bce = F.binary_cross_entropy_with_logits(
        logits, masks, pos_weight=torch.tensor(3.0)
    )
    probs = torch.sigmoid(logits)
    inter = (probs * masks).sum()
    union = (probs + masks - probs * masks).sum()
    soft_iou = 1.0 - (inter + 1.0) / (union + 1.0)
    return bce + soft_iou


def suggest_lr_from_curve(lrs, losses):
    """LR at the steepest descent of the loss with respect to log(lr)."""
    lrs = np.asarray(lrs, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if len(lrs) < 3:
        raise ArgumentError("need at least 3 points to estimate a slope")
    slopes = np.diff(losses) / np.diff(np.log(lrs))
    idx = int(np.argmin(slopes))
    return float(lrs[idx])


def lr_range_test(model, batches, lr_min, lr_max, steps=50, smoothing=0.9):
    """Exponential LR sweep; returns the LR at the steepest smoothed descent.

    batches: sequence of (images, masks) tensors, cycled as needed.
    """
    if lr_min >= lr_max:
        raise ArgumentError("lr_min must be < lr_max")
    if steps < 10:
        raise ArgumentError("steps must be >= 10")
    state = copy.deepcopy(model.state_dict())
    opt = torch.optim.Adam(model.parameters(), lr=lr_min)
    lrs, raw, smoothed = [], [], []
    avg = 0.0
    for i in range(steps):
        lr = lr_min * (lr_max / lr_min) ** (i / (steps - 1))
        for group in opt.param_groups:
            group["lr"] = lr
        imgs, masks = batches[i % len(batches)]
        logits = model(imgs)
        loss = _bce_soft_iou_loss(logits, masks)
        if not torch.isfinite(loss) or (smoothed and loss.item() > 10 * min(smoothed)):
            if i < 10:
                model.load_state_dict(state)
                raise ArgumentError(
                    f"loss diverged after {i} steps; retry with a smaller lr_max"
                )
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        avg = smoothing * avg + (1 - smoothing) * loss.item()
        lrs.append(lr)
        raw.append(loss.item())
        smoothed.append(avg / (1 - smoothing ** (i + 1)))
    model.load_state_dict(state)
    return min(max(suggest_lr_from_curve(lrs, smoothed), lr_min), lr_max)


def _load_pairs(manifest, input_size):
    imgs, masks, names = [], [], []
    for p in list_images(manifest.image_dir):
        img = to_three_channel(load_image(p))
        mp = mask_path_for(p, manifest.mask_dir)
        if mp is None:
            continue
        mask = load_mask(mp)
        imgs.append((img, mask))
        names.append(p.name)
    tensors_x = []
    tensors_y = []
    for img, mask in imgs:
        small = resize(img, *input_size)
        tensors_x.append(torch.from_numpy(small.values.copy()).permute(2, 0, 1))
        mask_small = resize_mask(mask, *input_size)
        tensors_y.append(torch.from_numpy(mask_small.values[None].astype(np.float32)))
    return torch.stack(tensors_x), torch.stack(tensors_y), imgs, names


def make_adapter(net, input_size, name="toy-unet"):
    def predict(img):
        rgb = to_three_channel(img)
        small = resize(rgb, *input_size)
        t = torch.from_numpy(small.values.copy()).permute(2, 0, 1).unsqueeze(0)
        net.eval()
        with torch.no_grad():
            probs = torch.sigmoid(net(t))
        probs = F.interpolate(probs, size=(img.height, img.width), mode="bilinear", align_corners=False)
        return SegmentationMask((probs.squeeze().numpy() >= 0.5).astype(np.uint8))

    return SegmentationModelAdapter(name=name, predict=predict, input_size=tuple(input_size))


def predict_mask(adapter, img):
    return adapter.predict(img)


def _val_iou(net, input_size, pairs):
    from .evaluation import iou

    adapter = make_adapter(net, input_size)
    vals = [iou(adapter.predict(img), mask) for img, mask in pairs]
    return float(np.mean(vals))


def train_unet(cfg, train_manifest, val_manifest):
    """Train the toy U-Net with early stopping on validation IoU; returns the
    best-validation model wrapped in an adapter, plus the training state."""
    for m in (train_manifest, val_manifest):
        if m.mask_dir is None:
            raise ArgumentError(f"manifest {m.name!r} has no mask_dir")
        violations = validate_manifest(m)
        if violations:
            raise ArgumentError(f"invalid manifest {m.name!r}: {violations}")

    torch.manual_seed(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed)
    x_train, y_train, _, _ = _load_pairs(train_manifest, cfg.input_size)
    _, _, val_pairs, _ = _load_pairs(val_manifest, cfg.input_size)
    if len(x_train) == 0:
        raise ArgumentError("empty training set")
    if len(val_pairs) == 0:
        raise ArgumentError("empty validation set")

    net = ToyUNet(cfg.depth, cfg.base_channels)
    if cfg.learning_rate == "auto":
        batches = [(x_train[i : i + 4], y_train[i : i + 4]) for i in range(0, len(x_train), 4)]
        lr = lr_range_test(net, batches, 1e-5, 0.5, steps=30)
    else:
        lr = float(cfg.learning_rate)
    opt = torch.optim.Adam(net.parameters(), lr=lr)

    state = TrainState()
    stopper = EarlyStopper(cfg.patience)
    best_weights = copy.deepcopy(net.state_dict())
    best_iou = -1.0
    for epoch in range(cfg.max_epochs):
        net.train()
        perm = np_rng.permutation(len(x_train))
        losses = []
        for i in range(0, len(perm), 4):
            idx = torch.as_tensor(perm[i : i + 4])
            logits = net(x_train[idx])
            loss = _bce_soft_iou_loss(logits, y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val = _val_iou(net, cfg.input_size, val_pairs)
        state.history.append((epoch, float(np.mean(losses)), val))
        state.epoch = epoch
        if val > best_iou:
            best_iou = val
            best_weights = copy.deepcopy(net.state_dict())
        if stopper.update(val):
            state.epochs_since_best = stopper.since_best
            break
        state.epochs_since_best = stopper.since_best
    net.load_state_dict(best_weights)
    net.eval()
    state.best_val_iou = best_iou
    adapter = make_adapter(net, cfg.input_size)
    adapter.net = net
    adapter.config = cfg
    adapter.learning_rate = lr
    return adapter, state


def save_unet_checkpoint(adapter, path):
    cfg = adapter.config
    config = {
        "depth": cfg.depth,
        "base_channels": cfg.base_channels,
        "input_size": list(cfg.input_size),
        "seed": cfg.seed,
    }
    checkpointio.write_checkpoint(
        path, "toy-unet", config, checkpointio.state_dict_to_arrays(adapter.net)
    )


def load_unet_checkpoint(path):
    algorithm, config, arrays = checkpointio.read_checkpoint(path)
    if algorithm != "toy-unet":
        raise CheckpointCompatibilityError(f"expected a toy-unet checkpoint, got {algorithm!r}")
    net = ToyUNet(config["depth"], config["base_channels"])
    checkpointio.load_arrays_into(net, arrays)
    net.eval()
    adapter = make_adapter(net, tuple(config["input_size"]))
    adapter.net = net
    adapter.config = ToyUNetConfig(
        depth=config["depth"],
        base_channels=config["base_channels"],
        input_size=tuple(config["input_size"]),
        seed=config.get("seed", 0),
    )
    return adapter
