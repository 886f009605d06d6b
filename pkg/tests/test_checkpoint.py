import numpy as np
import pytest

from regiongrasp.checkpoint import (CheckpointError, MAGIC, load_checkpoint,
                                    save_checkpoint)


def _arrays(seed):
    rng = np.random.default_rng(seed)
    return {"w.a": rng.normal(size=(3, 4)), "w.b": rng.normal(size=7),
            "scalar": np.array(2.5)}


def test_round_trip_values_quantized_to_f32(tmp_path):
    path = tmp_path / "a.ckpt"
    arrays = _arrays(0)
    save_checkpoint(path, arrays, config={"d": 16}, rng_digest="abc")
    ck = load_checkpoint(path)
    assert set(ck.arrays) == set(arrays)
    for k, v in arrays.items():
        assert ck.arrays[k].dtype == np.float64
        np.testing.assert_array_equal(ck.arrays[k],
                                      v.astype(np.float32).astype(np.float64))
    assert ck.config == {"d": 16}
    assert ck.rng_digest == "abc"


def test_load_save_is_byte_identical(tmp_path):
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, _arrays(1), config={"x": [1, 2]}, rng_digest="z")
    ck = load_checkpoint(p1)
    save_checkpoint(p2, ck.arrays, config=ck.config, rng_digest=ck.rng_digest)
    assert p1.read_bytes() == p2.read_bytes()


def test_corrupted_magic_rejected(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, _arrays(2))
    blob = bytearray(path.read_bytes())
    blob[:len(MAGIC)] = b"XXXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, _arrays(3))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises((FileNotFoundError, OSError)):
        load_checkpoint(tmp_path / "missing.ckpt")
