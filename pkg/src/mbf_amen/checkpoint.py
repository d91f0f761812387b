"""Binary branch checkpoints.

``checkpoint.bin`` layout (all integers little-endian)::

    b"AMENCKPT"  uint32 version  uint32 tensor count
    per tensor: uint16 name length, utf-8 name, uint8 rank,
                rank x uint32 extents, float32 values (C order)

The ``checkpoint.json`` sidecar repeats the tensor list and carries the
backbone spec, so a checkpoint can be loaded without the run config.
"""
import json
import struct
from pathlib import Path

import numpy as np
from packaging.version import InvalidVersion, Version

from .backbone import BackboneSpec, BranchParams
from .exceptions import CheckpointError
from .tensor import Tensor

MAGIC = b"AMENCKPT"
FORMAT_NAME = "amen-checkpoint"
FORMAT_VERSION = 1


def _tool_version():
    from . import __version__

    return __version__


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def encode_params(params):
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.tensors()))]
    for name, t in params.tensors():
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", t.ndim))
        chunks.append(struct.pack("<%dI" % t.ndim, *t.shape))
        chunks.append(np.ascontiguousarray(t.values, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_tensors(raw):
    """bytes -> list of (name, float32 ndarray)"""
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", raw, offset)
        offset += 8
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        result = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from("<%dI" % rank, raw, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * size > len(raw):
                raise CheckpointError(f"checkpoint truncated inside '{name}'")
            values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            result.append((name, values.reshape(shape).astype(np.float32)))
    except struct.error as e:
        raise CheckpointError(f"checkpoint truncated: {e}") from e
    if offset != len(raw):
        raise CheckpointError("trailing bytes after the last tensor")
    return result


def write_checkpoint(path, params, scale):
    """Write ``checkpoint.bin`` and its ``checkpoint.json`` sidecar"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_params(params))
    sidecar = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "tool_version": _tool_version(),
        "scale": scale,
        "backbone": params.spec.to_dict(),
        "tensors": [
            {"name": name, "group": params.group_of(name), "shape": list(t.shape)}
            for name, t in params.tensors()
        ],
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def _warn_if_newer(written_by):
    try:
        if Version(written_by) > Version(_tool_version()):
            print(
                f"Warning: checkpoint written by mbf_amen {written_by}, "
                f"this is {_tool_version()}"
            )
    except InvalidVersion:
        pass


def read_checkpoint(path):
    """Load a checkpoint; returns ``(BranchParams, scale)``.

    The tensor list in the binary file must match the sidecar exactly.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {side}")
    try:
        meta = json.loads(side.read_text())
    except ValueError as e:
        raise CheckpointError(f"unreadable sidecar {side}: {e}") from e
    if meta.get("format") != FORMAT_NAME or meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{side} is not a version {FORMAT_VERSION} checkpoint sidecar")
    _warn_if_newer(str(meta.get("tool_version", "0")))
    tensors = decode_tensors(path.read_bytes())
    listed = [(t["name"], tuple(t["shape"])) for t in meta["tensors"]]
    found = [(name, values.shape) for name, values in tensors]
    if listed != found:
        raise CheckpointError(f"{path} does not match its sidecar tensor list")
    spec = BackboneSpec.from_dict(meta["backbone"])
    groups = {t["name"]: t["group"] for t in meta["tensors"]}
    feature = [(n, Tensor(v)) for n, v in tensors if groups[n] == "feature"]
    head = [(n, Tensor(v)) for n, v in tensors if groups[n] == "head"]
    return BranchParams(spec, feature, head), meta.get("scale")
