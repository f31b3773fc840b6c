"""Unpaired image-to-image translation: CycleGAN fully, CUT/FastCUT as
contrastive presets, plus checkpointing and batch translation."""

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpointio
from .errors import (
    ArgumentError,
    ContractError,
    DivergenceError,
    ExtensionPointError,
    UnsupportedDirectionError,
)
from .raster import (
    ImageRaster,
    list_images,
    load_image,
    resize,
    save_image,
    to_three_channel,
    validate_manifest,
)

BUILTIN_ALGORITHMS = ("cyclegan", "cut", "fastcut")
EXTENSION_ALGORITHMS = ("dualgan", "forkgan", "ganilla")


@dataclass
class GeneratorSpec:
    base_channels: int = 16
    residual_blocks: int = 2
    downsample_steps: int = 2
    normalization: str = "instance"

    def __post_init__(self):
        if self.residual_blocks < 0:
            raise ContractError("residual_blocks must be >= 0")
        if self.downsample_steps < 1:
            raise ContractError("downsample_steps must be >= 1")
        if self.normalization != "instance":
            raise ContractError("only instance normalization is supported")


@dataclass
class DiscriminatorSpec:
    base_channels: int = 16
    layers: int = 3
    patch_output: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ContractError("discriminator layers must be >= 1")


@dataclass
class TrainConfig:
    algorithm: str
    seed: int
    epochs: int = 30
    batch_size: int = 1
    image_size: int = 32
    learning_rate: float = 2e-4
    cycle_weight: float = 10.0
    identity_weight: float = 5.0
    nce_weight: float = 1.0
    temperature: float = 0.07
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)

    def __post_init__(self):
        for key in ("cycle_weight", "identity_weight", "nce_weight"):
            if getattr(self, key) < 0:
                raise ArgumentError(f"{key} must be >= 0")
        if self.temperature <= 0:
            raise ArgumentError("temperature must be > 0")
        if self.algorithm == "fastcut" and self.identity_weight != 0:
            raise ArgumentError("fastcut preset requires identity_weight = 0")


def make_train_config(algorithm, seed, **overrides):
    """Presets: cyclegan (cycle 10, idt 5), cut (nce 1 + identity-NCE),
    fastcut (nce 10, no identity terms)."""
    if algorithm == "cut":
        overrides.setdefault("nce_weight", 1.0)
    elif algorithm == "fastcut":
        overrides.setdefault("nce_weight", 10.0)
        overrides["identity_weight"] = 0.0
    return TrainConfig(algorithm=algorithm, seed=seed, **overrides)


# ---------------------------------------------------------------------------
# Networks


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Residual generator with a global skip: out = clamp(x + body(x), 0, 1).

    Output stays in [0, 1] for inputs in [0, 1]; identity_init zeroes the
    final conv so the untrained generator is exactly the identity map.
    """

    def __init__(self, spec=None, identity_init=False):
        super().__init__()
        spec = spec or GeneratorSpec()
        c = spec.base_channels
        layers = [
            nn.Conv2d(3, c, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(c),
            nn.ReLU(inplace=True),
        ]
        ch = c
        self.encoder_taps = [0]
        for _ in range(spec.downsample_steps):
            layers += [
                nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2),
                nn.ReLU(inplace=True),
            ]
            ch *= 2
            self.encoder_taps.append(len(layers) - 1)
        for _ in range(spec.residual_blocks):
            layers.append(ResidualBlock(ch))
        self.encoder_taps.append(len(layers) - 1)
        for _ in range(spec.downsample_steps):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, ch // 2, 3, padding=1),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        final = nn.Conv2d(ch, 3, 7, padding=3, padding_mode="reflect")
        layers.append(final)
        self.body = nn.Sequential(*layers)
        if identity_init:
            with torch.no_grad():
                final.weight.zero_()
                final.bias.zero_()

    def forward(self, x):
        return (x + self.body(x)).clamp(0.0, 1.0)

    def encode(self, x):
        """Intermediate encoder activations, for the contrastive objective."""
        feats = []
        h = x
        for i, layer in enumerate(self.body):
            h = layer(h)
            if i in self.encoder_taps:
                feats.append(h)
        return feats


class PatchDiscriminator(nn.Module):
    def __init__(self, spec=None):
        super().__init__()
        spec = spec or DiscriminatorSpec()
        c = spec.base_channels
        layers = [nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        ch = c
        for _ in range(spec.layers - 1):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch *= 2
        layers.append(nn.Conv2d(ch, 1, 4, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class ProjectionHead(nn.Module):
    """Two-layer MLP projecting sampled encoder features for PatchNCE."""

    def __init__(self, in_dim, out_dim=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, out_dim), nn.ReLU(inplace=True), nn.Linear(out_dim, out_dim))

    def forward(self, x):
        return self.net(x)


# ---------------------------------------------------------------------------
# Losses


def _as_tensor(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x), dtype=torch.float32)


def _maybe_float(t, inputs):
    return t if any(torch.is_tensor(x) for x in inputs) else float(t)


def cycle_consistency_loss(x, g_x, g_y, y=None):
    """L1 between x and G_Y(G_X(x)); adds the mirrored term when y is given."""
    tx = _as_tensor(x)
    recon = g_y(g_x(tx))
    if recon.shape != tx.shape:
        raise ContractError(f"reconstruction shape {tuple(recon.shape)} != input {tuple(tx.shape)}")
    loss = torch.mean(torch.abs(recon - tx))
    if y is not None:
        ty = _as_tensor(y)
        recon_y = g_x(g_y(ty))
        if recon_y.shape != ty.shape:
            raise ContractError("mirrored reconstruction shape mismatch")
        loss = loss + torch.mean(torch.abs(recon_y - ty))
    return _maybe_float(loss, [x] if y is None else [x, y])


def adversarial_loss(d_out, target_label):
    """Least-squares GAN loss over the patch map (real=1, fake=0)."""
    if target_label not in ("real", "fake"):
        raise ArgumentError("target_label must be 'real' or 'fake'")
    t = _as_tensor(d_out)
    label = 1.0 if target_label == "real" else 0.0
    return _maybe_float(torch.mean((t - label) ** 2), [d_out])


def patch_nce_loss(query, positive, negatives, tau):
    """InfoNCE over cosine similarities: queries (n, d), positives (n, d),
    negatives (n, k, d); vectors are L2-normalized before comparison."""
    if tau <= 0:
        raise ArgumentError("temperature must be > 0")
    q = F.normalize(_as_tensor(query), dim=-1)
    p = F.normalize(_as_tensor(positive), dim=-1)
    n = F.normalize(_as_tensor(negatives), dim=-1)
    pos_logit = (q * p).sum(dim=1, keepdim=True) / tau
    neg_logits = torch.einsum("nd,nkd->nk", q, n) / tau
    logits = torch.cat([pos_logit, neg_logits], dim=1)
    loss = F.cross_entropy(logits, torch.zeros(q.shape[0], dtype=torch.long))
    return _maybe_float(loss, [query, positive, negatives])


# ---------------------------------------------------------------------------
# Model container and checkpointing


@dataclass
class TranslationModel:
    algorithm: str
    nets: dict  # name -> nn.Module
    train_config_echo: dict
    step: int = 0
    loss_history: list = field(default_factory=list)

    def generator_for(self, direction):
        if direction not in ("source-to-target", "target-to-source"):
            raise ArgumentError(f"unknown direction {direction!r}")
        key = "g_source_to_target" if direction == "source-to-target" else "g_target_to_source"
        if key not in self.nets:
            raise UnsupportedDirectionError(
                f"{self.algorithm} model was not trained for direction {direction}"
            )
        return self.nets[key]


def _config_echo(cfg):
    return {
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "image_size": cfg.image_size,
        "learning_rate": cfg.learning_rate,
        "cycle_weight": cfg.cycle_weight,
        "identity_weight": cfg.identity_weight,
        "nce_weight": cfg.nce_weight,
        "temperature": cfg.temperature,
        "generator": vars(cfg.generator).copy(),
        "discriminator": vars(cfg.discriminator).copy(),
    }


def _build_nets(algorithm, gen_spec, disc_spec, feat_dims=None):
    nets = {}
    if algorithm == "cyclegan":
        nets["g_source_to_target"] = ResnetGenerator(gen_spec)
        nets["g_target_to_source"] = ResnetGenerator(gen_spec)
        nets["d_source"] = PatchDiscriminator(disc_spec)
        nets["d_target"] = PatchDiscriminator(disc_spec)
    elif algorithm in ("cut", "fastcut"):
        g = ResnetGenerator(gen_spec)
        nets["g_source_to_target"] = g
        nets["d_target"] = PatchDiscriminator(disc_spec)
        if feat_dims is None:
            c = gen_spec.base_channels
            feat_dims = [c] + [c * 2**i for i in range(1, gen_spec.downsample_steps + 1)]
            feat_dims.append(feat_dims[-1])
        for i, dim in enumerate(feat_dims):
            nets[f"proj_{i}"] = ProjectionHead(dim)
    else:
        raise ExtensionPointError(
            f"algorithm {algorithm!r} is an extension point; built-ins: "
            f"{', '.join(BUILTIN_ALGORITHMS)}; extension names: {', '.join(EXTENSION_ALGORITHMS)}"
        )
    return nets


def save_checkpoint(model, path):
    arrays = {}
    for name, net in model.nets.items():
        arrays.update(checkpointio.state_dict_to_arrays(net, prefix=name + "."))
    config = {"train_config": model.train_config_echo, "step": model.step}
    checkpointio.write_checkpoint(path, model.algorithm, config, arrays)
    return Path(path)


def load_checkpoint(path, expect_algorithm=None):
    algorithm, config, arrays = checkpointio.read_checkpoint(path, expect_algorithm)
    echo = config["train_config"]
    gen_spec = GeneratorSpec(**echo["generator"])
    disc_spec = DiscriminatorSpec(**echo["discriminator"])
    nets = _build_nets(algorithm, gen_spec, disc_spec)
    for name, net in nets.items():
        checkpointio.load_arrays_into(net, arrays, prefix=name + ".")
        net.eval()
    return TranslationModel(
        algorithm=algorithm, nets=nets, train_config_echo=echo, step=config.get("step", 0)
    )


# ---------------------------------------------------------------------------
# Training


class ImagePool:
    """History buffer of generated images for discriminator updates."""

    def __init__(self, size=50, rng=None):
        self.size = size
        self.images = []
        self.rng = rng or random.Random(0)

    def query(self, img):
        if self.size == 0:
            return img
        if len(self.images) < self.size:
            self.images.append(img.detach())
            return img
        if self.rng.random() > 0.5:
            idx = self.rng.randrange(self.size)
            out = self.images[idx]
            self.images[idx] = img.detach()
            return out
        return img


def _load_domain(manifest, image_size):
    tensors = []
    for p in list_images(manifest.image_dir):
        img = to_three_channel(load_image(p))
        img = resize(img, image_size, image_size)
        tensors.append(torch.from_numpy(img.values.copy()).permute(2, 0, 1))
    return torch.stack(tensors)


def _check_finite_loss(value, step):
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite training loss at step {step}", iteration=step)


def _sample_feature_patches(feats, n_patches, rng):
    """Pick the same random spatial locations in each feature map; returns a
    list of (n_patches, C) matrices plus the location ids for reuse."""
    ids = []
    out = []
    for f in feats:
        b, c, h, w = f.shape
        idx = torch.as_tensor(rng.choice(h * w, size=min(n_patches, h * w), replace=False))
        ids.append(idx)
        flat = f.permute(0, 2, 3, 1).reshape(-1, c)
        out.append(flat[idx])
    return out, ids


def _gather_feature_patches(feats, ids):
    out = []
    for f, idx in zip(feats, ids):
        c = f.shape[1]
        flat = f.permute(0, 2, 3, 1).reshape(-1, c)
        out.append(flat[idx])
    return out


def _nce_term(model, cfg, real, fake, rng, n_patches=32):
    feats_real = model.nets["g_source_to_target"].encode(real)
    feats_fake = model.nets["g_source_to_target"].encode(fake)
    sampled_fake, ids = _sample_feature_patches(feats_fake, n_patches, rng)
    sampled_real = _gather_feature_patches(feats_real, ids)
    loss = 0.0
    for i, (q_raw, p_raw) in enumerate(zip(sampled_fake, sampled_real)):
        head = model.nets[f"proj_{i}"]
        q = head(q_raw)
        p = head(p_raw)
        n = q.shape[0]
        negatives = p.unsqueeze(0).expand(n, n, -1)
        mask = ~torch.eye(n, dtype=torch.bool)
        negatives = negatives[mask].reshape(n, n - 1, -1)
        loss = loss + patch_nce_loss(q, p, negatives, cfg.temperature)
    return loss / len(sampled_fake)


def train_translation(pair, cfg, checkpoint_dir=None):
    """Train an unpaired translation model on a source/target domain pair.

    Persists one checkpoint per epoch into checkpoint_dir when given; records
    per-epoch mean losses in the returned model's loss_history.
    """
    if cfg.algorithm not in BUILTIN_ALGORITHMS:
        raise ExtensionPointError(
            f"algorithm {cfg.algorithm!r} is an extension point; built-ins: "
            f"{', '.join(BUILTIN_ALGORITHMS)}; extension names: {', '.join(EXTENSION_ALGORITHMS)}"
        )
    for m in (pair.source, pair.target):
        violations = validate_manifest(m)
        if violations:
            raise ArgumentError(f"invalid manifest {m.name!r}: {violations}")

    torch.manual_seed(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed)
    pool_rng = random.Random(cfg.seed)

    source = _load_domain(pair.source, cfg.image_size)
    target = _load_domain(pair.target, cfg.image_size)
    nets = _build_nets(cfg.algorithm, cfg.generator, cfg.discriminator)
    model = TranslationModel(algorithm=cfg.algorithm, nets=nets, train_config_echo=_config_echo(cfg))

    gen_params = []
    disc_params = []
    for name, net in nets.items():
        net.train()
        (disc_params if name.startswith("d_") else gen_params).extend(net.parameters())
    opt_g = torch.optim.Adam(gen_params, lr=cfg.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc_params, lr=cfg.learning_rate, betas=(0.5, 0.999))
    use_pool = cfg.batch_size == 1
    pools = {"source": ImagePool(rng=pool_rng), "target": ImagePool(rng=pool_rng)}

    n_steps = max(len(source), len(target)) // cfg.batch_size
    step = 0
    for epoch in range(cfg.epochs):
        perm_s = torch.as_tensor(np_rng.permutation(len(source)))
        perm_t = torch.as_tensor(np_rng.permutation(len(target)))
        epoch_losses = {}
        for i in range(max(n_steps, 1)):
            xs = source[perm_s[(i * cfg.batch_size) % len(source) : (i * cfg.batch_size) % len(source) + cfg.batch_size]]
            xt = target[perm_t[(i * cfg.batch_size) % len(target) : (i * cfg.batch_size) % len(target) + cfg.batch_size]]
            if len(xs) == 0 or len(xt) == 0:
                continue
            if cfg.algorithm == "cyclegan":
                losses = _cyclegan_step(model, cfg, xs, xt, opt_g, opt_d, pools, use_pool, step)
            else:
                losses = _cut_step(model, cfg, xs, xt, opt_g, opt_d, np_rng, step)
            for k, v in losses.items():
                epoch_losses.setdefault(k, []).append(v)
            step += 1
        model.step = step
        means = {k: float(np.mean(v)) for k, v in sorted(epoch_losses.items())}
        means["epoch"] = epoch
        model.loss_history.append(means)
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, Path(checkpoint_dir) / f"epoch_{epoch:04d}.ckpt")
    for net in nets.values():
        net.eval()
    return model


def _cyclegan_step(model, cfg, xs, xt, opt_g, opt_d, pools, use_pool, step):
    g_st = model.nets["g_source_to_target"]
    g_ts = model.nets["g_target_to_source"]
    d_s = model.nets["d_source"]
    d_t = model.nets["d_target"]

    fake_t = g_st(xs)
    fake_s = g_ts(xt)
    rec_s = g_ts(fake_t)
    rec_t = g_st(fake_s)

    adv = adversarial_loss(d_t(fake_t), "real") + adversarial_loss(d_s(fake_s), "real")
    cyc = torch.mean(torch.abs(rec_s - xs)) + torch.mean(torch.abs(rec_t - xt))
    idt = torch.mean(torch.abs(g_st(xt) - xt)) + torch.mean(torch.abs(g_ts(xs) - xs))
    g_total = adv + cfg.cycle_weight * cyc + cfg.identity_weight * idt
    _check_finite_loss(g_total, step)
    opt_g.zero_grad()
    g_total.backward()
    opt_g.step()

    fake_t_d = pools["target"].query(fake_t.detach()) if use_pool else fake_t.detach()
    fake_s_d = pools["source"].query(fake_s.detach()) if use_pool else fake_s.detach()
    d_total = 0.5 * (
        adversarial_loss(d_t(xt), "real")
        + adversarial_loss(d_t(fake_t_d), "fake")
        + adversarial_loss(d_s(xs), "real")
        + adversarial_loss(d_s(fake_s_d), "fake")
    )
    _check_finite_loss(d_total, step)
    opt_d.zero_grad()
    d_total.backward()
    opt_d.step()
    return {
        "g_total": g_total.detach().item(),
        "g_adv": adv.detach().item(),
        "g_cycle": cyc.detach().item(),
        "g_identity": idt.detach().item(),
        "d_total": d_total.detach().item(),
    }


def _cut_step(model, cfg, xs, xt, opt_g, opt_d, rng, step):
    g = model.nets["g_source_to_target"]
    d_t = model.nets["d_target"]

    fake_t = g(xs)
    adv = adversarial_loss(d_t(fake_t), "real")
    nce = _nce_term(model, cfg, xs, fake_t, rng)
    g_total = adv + cfg.nce_weight * nce
    if cfg.algorithm == "cut":
        idt_t = g(xt)
        g_total = g_total + cfg.nce_weight * _nce_term(model, cfg, xt, idt_t, rng)
    _check_finite_loss(g_total, step)
    opt_g.zero_grad()
    g_total.backward()
    opt_g.step()

    d_total = 0.5 * (
        adversarial_loss(d_t(xt), "real") + adversarial_loss(d_t(fake_t.detach()), "fake")
    )
    _check_finite_loss(d_total, step)
    opt_d.zero_grad()
    d_total.backward()
    opt_d.step()
    return {
        "g_total": g_total.detach().item(),
        "g_adv": adv.detach().item(),
        "g_nce": nce.detach().item(),
        "d_total": d_total.detach().item(),
    }


# ---------------------------------------------------------------------------
# Inference


def translate_images(model, in_dir, direction, out_dir):
    """Translate every image in in_dir; outputs keep filenames and sizes."""
    gen = model.generator_for(direction)
    gen.eval()
    size = model.train_config_echo["image_size"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for p in list_images(in_dir):
        img = load_image(p)
        rgb = to_three_channel(img)
        small = resize(rgb, size, size)
        t = torch.from_numpy(small.values.copy()).permute(2, 0, 1).unsqueeze(0)
        with torch.no_grad():
            out = gen(t)
        values = out.squeeze(0).permute(1, 2, 0).clamp(0.0, 1.0).numpy()
        restored = resize(
            ImageRaster(values, img.source_bit_depth, img.source_format),
            img.height,
            img.width,
        )
        save_image(restored, out_dir / p.name)
        count += 1
    return count
