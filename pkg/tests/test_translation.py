import numpy as np
import pytest
import torch

from styleshift.errors import (
    ArgumentError,
    CheckpointCompatibilityError,
    ContractError,
    ExtensionPointError,
    UnsupportedDirectionError,
)
from styleshift.raster import DatasetManifest, DomainPair, ImageRaster, load_image, save_image
from styleshift.translation import (
    DiscriminatorSpec,
    GeneratorSpec,
    PatchDiscriminator,
    ResnetGenerator,
    TrainConfig,
    adversarial_loss,
    cycle_consistency_loss,
    load_checkpoint,
    make_train_config,
    patch_nce_loss,
    save_checkpoint,
    train_translation,
    translate_images,
    TranslationModel,
    _build_nets,
)


def test_cycle_consistency_matches_oracle(rng):
    for _ in range(50):
        x = rng.random((1, 3, 6, 6)).astype(np.float32)
        scale = rng.uniform(0.5, 1.5)
        shift = rng.uniform(-0.1, 0.1)
        g_x = lambda t: t * scale + shift
        g_y = lambda t: t * 0.9
        expected = np.mean(np.abs((x * scale + shift) * 0.9 - x))
        got = cycle_consistency_loss(x, g_x, g_y)
        assert abs(got - expected) < 1e-6


def test_cycle_consistency_mirrored_term(rng):
    x = rng.random((1, 3, 4, 4)).astype(np.float32)
    y = rng.random((1, 3, 4, 4)).astype(np.float32)
    ident = lambda t: t
    assert cycle_consistency_loss(x, ident, ident, y=y) == 0.0
    half = lambda t: t * 0.5
    expected = np.mean(np.abs(x * 0.25 - x)) + np.mean(np.abs(y * 0.25 - y))
    assert abs(cycle_consistency_loss(x, half, half, y=y) - expected) < 1e-6


def test_cycle_consistency_shape_contract(rng):
    x = rng.random((1, 3, 4, 4)).astype(np.float32)
    crop = lambda t: t[:, :, :2, :2]
    with pytest.raises(ContractError):
        cycle_consistency_loss(x, crop, lambda t: t)


def test_adversarial_loss_matches_oracle(rng):
    for _ in range(50):
        d = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
        assert abs(adversarial_loss(d, "real") - np.mean((d - 1.0) ** 2)) < 1e-6
        assert abs(adversarial_loss(d, "fake") - np.mean(d**2)) < 1e-6
    with pytest.raises(ArgumentError):
        adversarial_loss(d, "maybe")


def nce_oracle(q, p, negs, tau):
    def norm(v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    qn, pn, nn_ = norm(q), norm(p), norm(negs)
    losses = []
    for i in range(len(q)):
        logits = np.concatenate(
            [[np.dot(qn[i], pn[i]) / tau], nn_[i] @ qn[i] / tau]
        )
        logits -= logits.max()
        losses.append(-logits[0] + np.log(np.exp(logits).sum()))
    return float(np.mean(losses))


def test_patch_nce_loss_matches_oracle(rng):
    for _ in range(50):
        n, k, d = rng.integers(1, 6), rng.integers(1, 5), rng.integers(2, 6)
        q = rng.standard_normal((n, d)).astype(np.float32)
        p = rng.standard_normal((n, d)).astype(np.float32)
        negs = rng.standard_normal((n, k, d)).astype(np.float32)
        tau = float(rng.uniform(0.05, 0.5))
        assert abs(patch_nce_loss(q, p, negs, tau) - nce_oracle(q, p, negs, tau)) < 1e-5
    with pytest.raises(ArgumentError):
        patch_nce_loss(q, p, negs, 0.0)


def test_train_config_presets():
    cyc = make_train_config("cyclegan", seed=0)
    assert cyc.cycle_weight == 10.0 and cyc.identity_weight == 5.0
    cut = make_train_config("cut", seed=0)
    assert cut.nce_weight == 1.0
    fast = make_train_config("fastcut", seed=0)
    assert fast.nce_weight == 10.0 and fast.identity_weight == 0.0
    with pytest.raises(ArgumentError):
        TrainConfig(algorithm="fastcut", seed=0, identity_weight=1.0)
    with pytest.raises(ArgumentError):
        TrainConfig(algorithm="cyclegan", seed=0, temperature=0.0)
    with pytest.raises(ArgumentError):
        TrainConfig(algorithm="cyclegan", seed=0, cycle_weight=-1.0)


def test_generator_identity_init_is_exact_identity(rng):
    gen = ResnetGenerator(identity_init=True)
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        out = gen(x)
    assert torch.equal(out, x)


def test_identity_generators_give_zero_cycle_loss(rng):
    g_x = ResnetGenerator(identity_init=True)
    g_y = ResnetGenerator(identity_init=True)
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        loss = cycle_consistency_loss(x, g_x, g_y)
    assert float(loss) == 0.0


def test_generator_output_bounded(rng):
    gen = ResnetGenerator()
    x = torch.rand(2, 3, 16, 16)
    with torch.no_grad():
        out = gen(x)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.shape == x.shape


def test_discriminator_patch_output():
    d = PatchDiscriminator()
    out = d(torch.rand(1, 3, 32, 32))
    assert out.shape[1] == 1
    assert out.shape[2] > 1 and out.shape[3] > 1


def test_spec_contracts():
    with pytest.raises(ContractError):
        GeneratorSpec(normalization="batch")
    with pytest.raises(ContractError):
        GeneratorSpec(downsample_steps=0)
    with pytest.raises(ContractError):
        DiscriminatorSpec(layers=0)


def test_build_nets_extension_point():
    with pytest.raises(ExtensionPointError):
        _build_nets("dualgan", GeneratorSpec(), DiscriminatorSpec())


def test_direction_contracts():
    nets = _build_nets("cut", GeneratorSpec(), DiscriminatorSpec())
    model = TranslationModel(algorithm="cut", nets=nets, train_config_echo={})
    with pytest.raises(ArgumentError):
        model.generator_for("sideways")
    with pytest.raises(UnsupportedDirectionError):
        model.generator_for("target-to-source")
    assert model.generator_for("source-to-target") is nets["g_source_to_target"]


def _tiny_pair(tmp_path, rng, n=3, size=16):
    for name, invert in (("src", False), ("tgt", True)):
        d = tmp_path / name
        d.mkdir()
        for i in range(n):
            base = rng.random((size, size, 3)).astype(np.float32)
            if invert:
                base = 1.0 - base
            save_image(ImageRaster(base), d / f"{i}.png")
    return DomainPair(
        source=DatasetManifest(name="src", image_dir=str(tmp_path / "src"), role="source"),
        target=DatasetManifest(name="tgt", image_dir=str(tmp_path / "tgt"), role="target"),
    )


def test_cyclegan_short_training_and_checkpoint(tmp_path, rng):
    pair = _tiny_pair(tmp_path, rng)
    cfg = make_train_config("cyclegan", seed=0, epochs=2, image_size=16)
    model = train_translation(pair, cfg, checkpoint_dir=tmp_path / "ckpts")
    assert len(model.loss_history) == 2
    assert all(np.isfinite(list(h.values())).all() for h in model.loss_history)
    assert (tmp_path / "ckpts" / "epoch_0001.ckpt").exists()

    path = tmp_path / "final.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, expect_algorithm="cyclegan")
    assert back.algorithm == "cyclegan"
    for name, net in model.nets.items():
        for key, value in net.state_dict().items():
            np.testing.assert_array_equal(
                value.numpy(), back.nets[name].state_dict()[key].numpy()
            )
    with pytest.raises(CheckpointCompatibilityError):
        load_checkpoint(path, expect_algorithm="cut")


def test_cut_short_training(tmp_path, rng):
    pair = _tiny_pair(tmp_path, rng)
    cfg = make_train_config("cut", seed=0, epochs=1, image_size=16)
    model = train_translation(pair, cfg)
    assert "g_nce" in model.loss_history[0]
    assert "g_target_to_source" not in model.nets


def test_train_rejects_unknown_algorithm(tmp_path, rng):
    pair = _tiny_pair(tmp_path, rng)
    cfg = TrainConfig(algorithm="forkgan", seed=0)
    with pytest.raises(ExtensionPointError):
        train_translation(pair, cfg)


def test_translate_images_keeps_names_and_sizes(tmp_path, rng):
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    save_image(ImageRaster(rng.random((20, 24, 3)).astype(np.float32)), in_dir / "a.png")
    save_image(ImageRaster(rng.random((10, 10, 1)).astype(np.float32)), in_dir / "b.png")
    nets = {"g_target_to_source": ResnetGenerator(identity_init=True)}
    model = TranslationModel(
        algorithm="cyclegan", nets=nets, train_config_echo={"image_size": 16}
    )
    out_dir = tmp_path / "out"
    count = translate_images(model, in_dir, "target-to-source", out_dir)
    assert count == 2
    a = load_image(out_dir / "a.png")
    assert (a.height, a.width) == (20, 24)
    b = load_image(out_dir / "b.png")
    assert (b.height, b.width) == (10, 10)
