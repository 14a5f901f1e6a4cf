import json
import struct
import zlib

import numpy as np
import pytest

from srmnet.errors import CorruptFile, TensorCountMismatch
from srmnet.model import ModelConfig, SrmNet, init_model
from srmnet.modelio import MAGIC, load_model, save_model
from srmnet.tensor import Tensor

SMALL = ModelConfig(base_channels=4, scales=2, blocks_per_srb=1)


@pytest.fixture
def model():
    return init_model(SMALL, 0)


def test_round_trip_parameters_bit_exact(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == model.config
    for (na, pa), (nb, pb) in zip(model.named_params(), loaded.named_params()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)


def test_save_load_save_byte_identical(model, tmp_path):
    p1, p2 = tmp_path / "a.srmn", tmp_path / "b.srmn"
    save_model(model, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_forward_identical_after_reload(model, tmp_path, rng):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    loaded = load_model(path)
    x = rng.random((1, 3, 8, 8)).astype(np.float32)
    before = model.forward(Tensor(x)).data
    after = loaded.forward(Tensor(x)).data
    assert np.array_equal(before, after)


def test_truncated_file_rejected(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(CorruptFile):
        load_model(path)


def test_flipped_payload_byte_rejected(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        load_model(path)


def test_bad_magic_rejected(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    body = bytes(blob[:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(CorruptFile):
        load_model(path)


def test_manifest_name_mismatch_rejected(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen].decode())
    header["tensors"][0]["name"] = "something.else"
    new_header = json.dumps(header, separators=(",", ":")).encode()
    body = (MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(new_header))
            + new_header + blob[12 + hlen:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(TensorCountMismatch):
        load_model(path)


def test_tensor_count_mismatch_rejected(model, tmp_path):
    path = tmp_path / "m.srmn"
    save_model(model, path)
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen].decode())
    header["tensors"] = header["tensors"][:-1]
    new_header = json.dumps(header, separators=(",", ":")).encode()
    body = (MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(new_header))
            + new_header + blob[12 + hlen:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(TensorCountMismatch):
        load_model(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "m.srmn"
    path.write_bytes(b"SR")
    with pytest.raises(CorruptFile):
        load_model(path)
