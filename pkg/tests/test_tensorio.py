import numpy as np
import pytest

from radgraph_eval.tensorio import (
    ContainerError,
    read_checkpoint,
    read_feature_map,
    write_checkpoint,
    write_feature_map,
)


def test_feature_map_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    array = rng.standard_normal((8, 4, 4))
    path = tmp_path / "fmap.bin"
    write_feature_map(str(path), array)
    back = read_feature_map(str(path))
    assert back.shape == (8, 4, 4)
    assert np.array_equal(back, array)


def test_header_is_sixteen_bytes_plus_dims(tmp_path):
    path = tmp_path / "fmap.bin"
    write_feature_map(str(path), np.zeros((2, 3)))
    raw = path.read_bytes()
    assert raw[:4] == b"KGT1"
    # 16-byte header + 2 u32 dims + 6 float64 values
    assert len(raw) == 16 + 8 + 48


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "model.weight": rng.standard_normal((3, 5)),
        "model.bias": rng.standard_normal(5),
        "scalar": np.array(2.5),
    }
    path = tmp_path / "ckpt.bin"
    write_checkpoint(str(path), tensors)
    back = read_checkpoint(str(path))
    assert set(back) == set(tensors)
    for name in tensors:
        assert np.array_equal(back[name], tensors[name])


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ContainerError, match="magic"):
        read_feature_map(str(path))
    with pytest.raises(ContainerError, match="magic"):
        read_checkpoint(str(path))


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "fmap.bin"
    write_feature_map(str(path), np.zeros((4, 4)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ContainerError, match="truncated"):
        read_feature_map(str(path))


def test_nonfinite_payload_rejected(tmp_path):
    path = tmp_path / "fmap.bin"
    array = np.zeros((2, 2))
    array[0, 0] = np.nan
    write_feature_map(str(path), array)
    with pytest.raises(ContainerError, match="non-finite"):
        read_feature_map(str(path))
