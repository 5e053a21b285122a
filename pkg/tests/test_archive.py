import numpy as np
import pytest

from garmentspace.archive import load_archive, save_archive


def test_round_trip(tmp_path):
    tensors = {
        "a": np.arange(12, dtype=np.float64).reshape(3, 4),
        "b": np.array([1, 2, 3], dtype=np.int64),
        "empty": np.zeros((0, 3)),
    }
    meta = {"kind": "test", "nested": {"x": 1}}
    path = tmp_path / "t.gsar"
    save_archive(path, tensors, meta)
    loaded, m = load_archive(path)
    assert m == meta
    for k, v in tensors.items():
        assert loaded[k].dtype == v.dtype
        assert np.array_equal(loaded[k], v)


def test_bytes_deterministic(tmp_path):
    tensors = {"w": np.random.default_rng(0).standard_normal((5, 7))}
    save_archive(tmp_path / "a.gsar", tensors, {"v": 1})
    save_archive(tmp_path / "b.gsar", tensors, {"v": 1})
    assert (tmp_path / "a.gsar").read_bytes() == (tmp_path / "b.gsar").read_bytes()


def test_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.gsar"
    p.write_bytes(b"not an archive at all")
    with pytest.raises(ValueError):
        load_archive(p)
