"""Versioned binary checkpoint container.

Layout: magic, version, algorithm, config JSON, payload sha256, then named
parameter blocks (name, dtype, shape, raw little-endian bytes).
"""

import hashlib
import io
import json
import struct

import numpy as np

from .errors import CheckpointCompatibilityError, CheckpointIntegrityError

MAGIC = b"SSCK"
VERSION = 1


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _read_exact(f, n):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointIntegrityError("checkpoint truncated")
    return b


def _unpack_str(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n).decode("utf-8")


def write_checkpoint(path, algorithm, config, arrays):
    """arrays: mapping name -> numpy array."""
    payload = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        payload.write(_pack_str(name))
        payload.write(_pack_str(arr.dtype.str))
        payload.write(struct.pack("<I", arr.ndim))
        payload.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        raw = arr.tobytes()
        payload.write(struct.pack("<Q", len(raw)))
        payload.write(raw)
    body = payload.getvalue()
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(_pack_str(algorithm))
        f.write(_pack_str(json.dumps(config, sort_keys=True)))
        f.write(digest)
        f.write(struct.pack("<I", len(arrays)))
        f.write(body)


def read_checkpoint(path, expect_algorithm=None):
    """Returns (algorithm, config, arrays). Verifies checksum and magic."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointIntegrityError(f"bad magic {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointCompatibilityError(f"unsupported checkpoint version {version}")
        algorithm = _unpack_str(f)
        config = json.loads(_unpack_str(f))
        digest = _read_exact(f, 32)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        body = f.read()
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError("checksum mismatch; checkpoint is corrupt")
    if expect_algorithm is not None and algorithm != expect_algorithm:
        raise CheckpointCompatibilityError(
            f"checkpoint holds algorithm {algorithm!r}, expected {expect_algorithm!r}"
        )
    arrays = {}
    f = io.BytesIO(body)
    for _ in range(count):
        name = _unpack_str(f)
        dtype = np.dtype(_unpack_str(f))
        (ndim,) = struct.unpack("<I", _read_exact(f, 4))
        shape = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim))
        (nbytes,) = struct.unpack("<Q", _read_exact(f, 8))
        raw = _read_exact(f, nbytes)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return algorithm, config, arrays


def state_dict_to_arrays(module, prefix=""):
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_arrays_into(module, arrays, prefix=""):
    import torch

    state = {
        k[len(prefix):]: torch.as_tensor(v)
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise CheckpointCompatibilityError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    try:
        module.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointCompatibilityError(f"checkpoint does not fit the module: {e}") from e
