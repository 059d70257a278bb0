"""TEN1 exactness and netpbm quantization bounds."""

import numpy as np
import pytest

from nsrestore.errors import DimensionError, FormatError
from nsrestore.formats import (
    read_image,
    read_mask,
    read_tensor,
    write_image,
    write_mask,
    write_tensor,
)
from nsrestore.rng import RngStream


class TestTen1:
    def test_round_trip_small(self, tmp_path):
        path = tmp_path / "v.ten"
        write_tensor(path, np.array([1.5, -2.0]))
        back = read_tensor(path)
        assert back.shape == (2,)
        assert np.array_equal(back, [1.5, -2.0])

    def test_round_trip_random_tensors_bitwise(self, tmp_path):
        for seed in range(5):
            x = RngStream(seed).gaussian((3, 8, 8))
            path = tmp_path / f"r{seed}.ten"
            write_tensor(path, x)
            assert np.array_equal(read_tensor(path), x)

    def test_round_trip_extreme_values(self, tmp_path):
        x = np.array([1e-300, -1e300, 1.0 + 2**-52, np.pi, 0.0])
        path = tmp_path / "e.ten"
        write_tensor(path, x)
        assert np.array_equal(read_tensor(path), x)

    def test_value_count_mismatch_reports_line(self, tmp_path):
        path = tmp_path / "bad.ten"
        path.write_text("TEN1\ndims 2 2\n1.0 2.0 3.0\n")
        with pytest.raises(FormatError) as err:
            read_tensor(path)
        assert "line" in str(err.value)

    def test_non_numeric_token_reports_line(self, tmp_path):
        path = tmp_path / "bad.ten"
        path.write_text("TEN1\ndims 2\n1.0\nbanana\n")
        with pytest.raises(FormatError) as err:
            read_tensor(path)
        assert "line 4" in str(err.value)

    def test_missing_magic(self, tmp_path):
        path = tmp_path / "bad.ten"
        path.write_text("TENX\ndims 1\n0\n")
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_nan_write_refused(self, tmp_path):
        with pytest.raises(FormatError):
            write_tensor(tmp_path / "nan.ten", np.array([np.nan]))


class TestNetpbm:
    def test_zeros_write_p5_payload(self, tmp_path):
        path = tmp_path / "z.pgm"
        write_image(path, np.zeros((1, 2, 2)))
        data = path.read_bytes()
        assert data.startswith(b"P5\n2 2\n255\n")
        assert data[-4:] == b"\x00\x00\x00\x00"

    def test_peak_maps_to_255(self, tmp_path):
        path = tmp_path / "one.pgm"
        write_image(path, np.ones((1, 1, 1)), peak=1.0)
        assert path.read_bytes()[-1] == 255

    def test_quantization_bound(self, tmp_path):
        # 8-bit quantization loses at most one level = 1/255 per pixel
        img = RngStream(9).uniform(3 * 6 * 5).reshape(3, 6, 5)
        path = tmp_path / "q.ppm"
        write_image(path, img)
        back = read_image(path)
        assert back.shape == (3, 6, 5)
        assert np.abs(back - img).max() <= 1.0 / 255.0

    def test_clamping_out_of_range(self, tmp_path):
        path = tmp_path / "c.pgm"
        write_image(path, np.array([[[-0.5, 2.0]]]), peak=1.0)
        raster = path.read_bytes()[-2:]
        assert raster == bytes([0, 255])

    def test_bad_channel_count(self, tmp_path):
        with pytest.raises(DimensionError):
            write_image(tmp_path / "x.ppm", np.zeros((2, 4, 4)))

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(FormatError):
            read_image(path)

    def test_mask_round_trip(self, tmp_path):
        keep = RngStream(3).uniform(24).reshape(4, 6) > 0.5
        path = tmp_path / "m.pgm"
        write_mask(path, keep)
        assert np.array_equal(read_mask(path), keep)


class TestIoWrappers:
    def test_tensor_io_dispatches_on_argument(self, tmp_path):
        from nsrestore.formats import tensor_io

        path = tmp_path / "w.ten"
        x = RngStream(11).gaussian((2, 3))
        assert tensor_io(path, x) is None
        assert np.array_equal(tensor_io(path), x)

    def test_image_io_dispatches_on_argument(self, tmp_path):
        from nsrestore.formats import image_io

        path = tmp_path / "w.ppm"
        img = RngStream(12).uniform(3 * 16).reshape(3, 4, 4)
        assert image_io(path, img, peak=1.0) is None
        assert np.abs(image_io(path) - img).max() <= 1.0 / 255.0
