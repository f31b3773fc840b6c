import numpy as np
import pytest
import torch

from styleshift import checkpointio
from styleshift.errors import CheckpointCompatibilityError, CheckpointIntegrityError


def test_roundtrip_preserves_arrays(tmp_path, rng):
    arrays = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "b.bias": rng.standard_normal(7).astype(np.float64),
        "c.count": np.array(5, dtype=np.int64),
    }
    path = tmp_path / "x.ckpt"
    checkpointio.write_checkpoint(path, "algo", {"k": 1}, arrays)
    algorithm, config, back = checkpointio.read_checkpoint(path)
    assert algorithm == "algo"
    assert config == {"k": 1}
    assert set(back) == set(arrays)
    for name in arrays:
        assert back[name].dtype == arrays[name].dtype
        np.testing.assert_array_equal(back[name], arrays[name])


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(CheckpointIntegrityError):
        checkpointio.read_checkpoint(path)


def test_corruption_detected(tmp_path, rng):
    path = tmp_path / "x.ckpt"
    checkpointio.write_checkpoint(path, "algo", {}, {"w": rng.standard_normal(16)})
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointIntegrityError):
        checkpointio.read_checkpoint(path)


def test_truncation_detected(tmp_path, rng):
    path = tmp_path / "x.ckpt"
    checkpointio.write_checkpoint(path, "algo", {}, {"w": rng.standard_normal(16)})
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointIntegrityError):
        checkpointio.read_checkpoint(path)


def test_algorithm_mismatch(tmp_path):
    path = tmp_path / "x.ckpt"
    checkpointio.write_checkpoint(path, "algo", {}, {})
    with pytest.raises(CheckpointCompatibilityError):
        checkpointio.read_checkpoint(path, expect_algorithm="other")


def test_module_state_helpers(tmp_path):
    torch.manual_seed(0)
    net = torch.nn.Linear(4, 2)
    arrays = checkpointio.state_dict_to_arrays(net, prefix="net.")
    path = tmp_path / "m.ckpt"
    checkpointio.write_checkpoint(path, "algo", {}, arrays)
    _, _, back = checkpointio.read_checkpoint(path)
    other = torch.nn.Linear(4, 2)
    checkpointio.load_arrays_into(other, back, prefix="net.")
    for k, v in net.state_dict().items():
        assert torch.equal(v, other.state_dict()[k])
    with pytest.raises(CheckpointCompatibilityError):
        checkpointio.load_arrays_into(torch.nn.Linear(5, 2), back, prefix="net.")
