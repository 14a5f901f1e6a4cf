"""Binary model file: "SRMN" magic, u32 version, length-prefixed JSON
header (config + ordered tensor manifest), raw little-endian float32
payloads in manifest order, trailing CRC32 of everything prior.

Offsets in the manifest are relative to the start of the payload section.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptFile, TensorCountMismatch
from .model import ModelConfig, SrmNet

MAGIC = b"SRMN"
VERSION = 1


def save_model(model: SrmNet, path: str | Path) -> None:
    manifest = []
    payloads = []
    offset = 0
    for name, p in model.named_params():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config.to_dict(), "tensors": manifest},
                        separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(header)) + header
    body += b"".join(payloads)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_model(path: str | Path) -> SrmNet:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise CorruptFile(f"{path}: file too short to be a model")
    body, crc_bytes = blob[:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise CorruptFile(f"{path}: checksum mismatch (truncated or altered)")
    if body[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic {body[:4]!r}")
    (version,) = struct.unpack("<I", body[4:8])
    if version != VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<I", body[8:12])
    if 12 + hlen > len(body):
        raise CorruptFile(f"{path}: header length exceeds file size")
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed header ({exc})") from exc

    model = SrmNet(config)
    params = model.named_params()
    if len(manifest) != len(params):
        raise TensorCountMismatch(
            f"{path}: file holds {len(manifest)} tensors, model needs {len(params)}")
    payload = body[12 + hlen:]
    for entry, (name, p) in zip(manifest, params):
        if entry["name"] != name or tuple(entry["shape"]) != p.shape:
            raise TensorCountMismatch(
                f"{path}: manifest entry {entry['name']} {entry['shape']} does not match "
                f"model tensor {name} {list(p.shape)}")
        n = int(np.prod(entry["shape"]))
        start = int(entry["offset"])
        raw = payload[start:start + 4 * n]
        if len(raw) != 4 * n:
            raise CorruptFile(f"{path}: payload truncated at tensor {name}")
        p.data = np.frombuffer(raw, dtype="<f4").reshape(p.shape).astype(np.float32)
    return model
