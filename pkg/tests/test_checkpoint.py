import struct

import numpy as np
import pytest

from cpi3d.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from cpi3d.equinet import IrrepLayout, ModelConfig, ParameterStore, init_params
from cpi3d.errors import CheckpointError, ConfigError
from cpi3d.geograph import CutoffConfig


def _store(seed=0):
    cfg = ModelConfig(layers=1, layout=IrrepLayout((3, 1, 1)),
                      edge_mlp_hidden=4, readout_hidden=4,
                      fingerprint_width=16, fingerprint_embed=4)
    return init_params(cfg, CutoffConfig(rbf_k=4), seed=seed), cfg


def test_round_trip_bitwise(tmp_path):
    params, cfg = _store()
    path = tmp_path / "model.eqcp"
    save_checkpoint(path, params, config={"model": cfg.to_dict()})
    first = path.read_bytes()

    state, config, trainable = load_checkpoint(path)
    assert config["model"]["layers"] == 1
    loaded, _ = _store(seed=99)       # different values, same shapes
    loaded.load_state(state)
    for name in params.names():
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
        assert trainable[name] == params.is_trainable(name)

    path2 = tmp_path / "again.eqcp"
    save_checkpoint(path2, loaded, config={"model": cfg.to_dict()})
    assert path2.read_bytes() == first


def test_corrupt_magic(tmp_path):
    params, _ = _store()
    path = tmp_path / "bad.eqcp"
    blob = bytearray(checkpoint_bytes(params))
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    params, _ = _store()
    path = tmp_path / "bad.eqcp"
    blob = bytearray(checkpoint_bytes(params))
    blob[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    params, _ = _store()
    path = tmp_path / "bad.eqcp"
    blob = checkpoint_bytes(params)
    path.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_shape_mismatch_rejected(tmp_path):
    params, _ = _store()
    path = tmp_path / "ok.eqcp"
    save_checkpoint(path, params)
    state, _, _ = load_checkpoint(path)
    other = ParameterStore()
    other.add("embed.ligand.W", np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        other.load_state({"embed.ligand.W": state["embed.ligand.W"]})


def test_directory_overrun_rejected(tmp_path):
    params, _ = _store()
    blob = bytearray(checkpoint_bytes(params))
    header_len = struct.unpack("<I", blob[8:12])[0]
    import json
    header = json.loads(blob[12:12 + header_len])
    header["tensors"][0]["shape"] = [10_000, 10_000]
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    new_blob = blob[:8] + struct.pack("<I", len(new_header)) + new_header \
        + blob[12 + header_len:]
    path = tmp_path / "bad.eqcp"
    path.write_bytes(bytes(new_blob))
    with pytest.raises(CheckpointError, match="overrun"):
        load_checkpoint(path)


def test_magic_constant():
    assert MAGIC == b"EQCP"
