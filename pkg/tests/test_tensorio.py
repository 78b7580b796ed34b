import numpy as np
import pytest

from ctxsim import tensorio


def test_roundtrip_is_byte_identical(tmp_path, rng):
    tensors = {"A": rng.normal(size=(2, 3, 2)) + 1j * rng.normal(size=(2, 3, 2)), "b": np.arange(4.0)}
    tensorio.write_tensors(tmp_path / "a.json", tensors, {"kind": "test", "x": np.float64(1.5)})
    back, meta = tensorio.read_tensors(tmp_path / "a.json")
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
    assert meta["x"] == 1.5
    tensorio.write_tensors(tmp_path / "b.json", back, meta)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_rejects_foreign_json():
    with pytest.raises(ValueError):
        tensorio.loads('{"format": "other"}')
