import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from melstyle.tensorfile import TensorFileError, read_tensor, write_tensor


def test_single_value_file_layout(tmp_path):
    """Header is magic(4) + version(4) + dtype(1) + ndim(1) + dims(8/dim)."""
    path = tmp_path / "one.msst"
    write_tensor(path, np.array([0.0], dtype=np.float32))
    blob = path.read_bytes()
    assert len(blob) == 4 + 4 + 1 + 1 + 8 + 4 * 1
    assert blob[:4] == b"MSST"
    assert blob[8] == 1  # float32 dtype code
    assert blob[9] == 1  # ndim


def test_round_trip_2x3_zeros(tmp_path):
    path = tmp_path / "z.msst"
    write_tensor(path, np.zeros((2, 3)))
    out = read_tensor(path)
    assert out.shape == (2, 3)
    assert out.dtype == np.float32
    assert np.all(out == 0.0)


def test_nan_rejected_with_location(tmp_path):
    bad = np.zeros((2, 2))
    bad[1, 0] = np.nan
    with pytest.raises(TensorFileError, match=r"\(1, 0\)"):
        write_tensor(tmp_path / "bad.msst", bad)


def test_inf_rejected(tmp_path):
    with pytest.raises(TensorFileError):
        write_tensor(tmp_path / "bad.msst", np.array([np.inf]))


@settings(max_examples=60, deadline=None)
@given(arrays(dtype=np.float32,
              shape=array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_bit_exact(tmp_path_factory, array):
    path = tmp_path_factory.mktemp("rt") / "t.msst"
    write_tensor(path, array)
    out = read_tensor(path)
    assert out.dtype == np.float32
    assert out.shape == array.shape
    assert np.array_equal(out.view(np.uint32), array.view(np.uint32))


def test_float64_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    array = rng.standard_normal((4, 5))
    path = tmp_path / "f8.msst"
    write_tensor(path, array, dtype="float64")
    out = read_tensor(path)
    assert out.dtype == np.float64
    assert np.array_equal(out.view(np.uint64), array.view(np.uint64))


def test_scalar_and_max_ndim(tmp_path):
    write_tensor(tmp_path / "s.msst", np.float64(2.5))
    assert read_tensor(tmp_path / "s.msst") == np.float32(2.5)
    shape = (1,) * 8
    write_tensor(tmp_path / "m.msst", np.ones(shape))
    assert read_tensor(tmp_path / "m.msst").shape == shape
    with pytest.raises(TensorFileError, match="dims"):
        write_tensor(tmp_path / "n.msst", np.ones((1,) * 9))


def test_corrupt_files_rejected(tmp_path):
    path = tmp_path / "c.msst"
    write_tensor(path, np.zeros(3))
    blob = bytearray(path.read_bytes())
    (tmp_path / "magic.msst").write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(TensorFileError, match="magic"):
        read_tensor(tmp_path / "magic.msst")
    (tmp_path / "trunc.msst").write_bytes(bytes(blob[:-2]))
    with pytest.raises(TensorFileError, match="payload"):
        read_tensor(tmp_path / "trunc.msst")
