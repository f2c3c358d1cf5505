"""TDMDL001 model files: magic, little-endian u32 header length, JSON header
(architecture + tensor manifest), then float64 LE parameter blobs."""
import json
import struct
from pathlib import Path

import numpy as np

from .model import ArchConfig, NetParams

MAGIC = b"TDMDL001"


class ModelFormatError(ValueError):
    pass


def encode_model(params):
    arch = params.arch
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in params.items()]
    header = json.dumps({"arch": arch.to_dict(), "tensors": manifest},
                        separators=(",", ":"), sort_keys=True).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.values())
    return MAGIC + struct.pack("<I", len(header)) + header + blobs


def save_model(params, path):
    """Write ``params`` (with its architecture) to ``path``; returns byte count."""
    blob = encode_model(params)
    Path(path).write_bytes(blob)
    return len(blob)


def decode_model(blob):
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise ModelFormatError("unrecognized model format: bad magic")
    (header_len,) = struct.unpack("<I", blob[8:12])
    if 12 + header_len > len(blob):
        raise ModelFormatError("header length runs past end of file")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        arch = ArchConfig(**header["arch"])
        manifest = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model header: {exc}") from exc
    expected = arch.param_shapes()
    names = [t["name"] for t in manifest]
    if names != list(expected):
        raise ModelFormatError("tensor manifest does not match the architecture")
    offset = 12 + header_len
    tensors = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        if shape != expected[entry["name"]]:
            raise ModelFormatError(
                f"tensor {entry['name']} has shape {shape}, architecture expects "
                f"{expected[entry['name']]}")
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(blob):
            raise ModelFormatError("parameter payload truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                               offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise ModelFormatError("trailing bytes after parameter payload")
    return NetParams(arch, tensors)


def load_model(path):
    return decode_model(Path(path).read_bytes())
