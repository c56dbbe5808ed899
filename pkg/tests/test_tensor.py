import numpy as np
import pytest

from tilefuse import Rect, crop, read_flt, trilinear_resize, write_flt, zero_pad
from tilefuse.errors import ArgumentError, BoundsError, FileFormatError, ShapeError
from tilefuse.tensor import flt_from_bytes, flt_to_bytes

from _oracles import crop_loop, trilinear_loop

from conftest import random_latent


class TestRect:
    def test_rejects_negative_corner(self):
        with pytest.raises(BoundsError):
            Rect(-1, 0, 2, 2)

    def test_rejects_empty_window(self):
        with pytest.raises(ArgumentError):
            Rect(0, 0, 0, 2)

    def test_bounds_error_names_dimension(self):
        with pytest.raises(BoundsError, match="height"):
            Rect(3, 0, 2, 2).validate_within(4, 8)
        with pytest.raises(BoundsError, match="width"):
            Rect(0, 7, 2, 2).validate_within(4, 8)


class TestCrop:
    def test_identity_crop(self, rng):
        x = random_latent(rng, (2, 3, 5, 7))
        out = crop(x, Rect(0, 0, 5, 7))
        assert np.array_equal(out, x)
        assert out is not x

    def test_index_arithmetic(self):
        vals = np.zeros((1, 1, 4, 4), dtype=np.float32)
        for i in range(4):
            for j in range(4):
                vals[0, 0, i, j] = 10 * i + j
        out = crop(vals, Rect(1, 2, 2, 2))
        assert out[0, 0].tolist() == [[12, 13], [22, 23]]

    def test_matches_loop(self, rng):
        x = random_latent(rng, (3, 2, 9, 11))
        r = Rect(2, 3, 4, 5)
        assert np.array_equal(
            crop(x, r), crop_loop(x, 2, 3, 4, 5).astype(np.float32)
        )

    def test_out_of_bounds(self, rng):
        x = random_latent(rng, (1, 1, 4, 4))
        with pytest.raises(BoundsError):
            crop(x, Rect(2, 0, 3, 2))


class TestZeroPad:
    def test_full_canvas_pad_is_identity(self, rng):
        x = random_latent(rng, (2, 2, 3, 4))
        out = zero_pad(x, Rect(0, 0, 3, 4), (2, 2, 3, 4))
        assert np.array_equal(out, x)

    def test_sum_preserved(self, rng):
        tile = random_latent(rng, (1, 2, 2, 3))
        out = zero_pad(tile, Rect(1, 1, 2, 3), (1, 2, 6, 6))
        assert np.isclose(out.sum(), tile.sum())

    def test_ones_placement(self):
        tile = np.ones((1, 1, 2, 2), dtype=np.float32)
        out = zero_pad(tile, Rect(1, 1, 2, 2), (1, 1, 4, 4))
        assert out.sum() == 4
        assert out[0, 0, 1:3, 1:3].min() == 1.0
        assert out[0, 0, 0, :].max() == 0.0

    def test_shape_mismatch(self):
        tile = np.ones((1, 1, 2, 2), dtype=np.float32)
        with pytest.raises(ShapeError):
            zero_pad(tile, Rect(0, 0, 3, 2), (1, 1, 4, 4))

    def test_crop_pad_round_trip(self, rng):
        for _ in range(20):
            c, t = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            th = int(rng.integers(1, h + 1))
            tw = int(rng.integers(1, w + 1))
            row = int(rng.integers(0, h - th + 1))
            col = int(rng.integers(0, w - tw + 1))
            tile = random_latent(rng, (c, t, th, tw))
            r = Rect(row, col, th, tw)
            back = crop(zero_pad(tile, r, (c, t, h, w)), r)
            assert np.array_equal(back, tile)


class TestTrilinearResize:
    def test_identity_is_bit_exact(self, rng):
        x = random_latent(rng, (2, 3, 4, 5))
        out = trilinear_resize(x, 3, 4, 5)
        assert np.array_equal(out, x)

    def test_ramp_midpoint(self):
        x = np.array([0.0, 1.0], dtype=np.float32).reshape(1, 1, 1, 2)
        out = trilinear_resize(x, 1, 1, 3)
        assert np.allclose(out[0, 0, 0], [0.0, 0.5, 1.0])

    def test_matches_loop_oracle(self, rng):
        x = random_latent(rng, (1, 2, 4, 4))
        out = trilinear_resize(x, 3, 8, 8)
        ref = trilinear_loop(x, 3, 8, 8)
        assert np.allclose(out, ref, atol=1e-6)

    def test_matches_loop_downscale(self, rng):
        x = random_latent(rng, (2, 3, 7, 5))
        out = trilinear_resize(x, 2, 3, 4)
        ref = trilinear_loop(x, 2, 3, 4)
        assert np.allclose(out, ref, atol=1e-6)

    def test_bounds_preserved(self, rng):
        x = random_latent(rng, (1, 3, 6, 6))
        out = trilinear_resize(x, 5, 11, 9)
        assert out.min() >= x.min() - 1e-6
        assert out.max() <= x.max() + 1e-6

    def test_constant_stays_constant(self):
        x = np.full((2, 2, 3, 3), 0.37, dtype=np.float32)
        out = trilinear_resize(x, 5, 7, 9)
        assert np.allclose(out, 0.37, atol=1e-6)

    def test_zero_output_rejected(self, rng):
        x = random_latent(rng, (1, 1, 2, 2))
        with pytest.raises(ArgumentError):
            trilinear_resize(x, 0, 2, 2)

    def test_singleton_axes(self):
        x = np.array([3.0], dtype=np.float32).reshape(1, 1, 1, 1)
        out = trilinear_resize(x, 2, 3, 4)
        assert np.allclose(out, 3.0)


class TestFltFormat:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        x = random_latent(rng, (3, 2, 5, 4))
        path = tmp_path / "latent.flt"
        write_flt(path, x)
        back = read_flt(path)
        assert back.dtype == np.float32
        assert np.array_equal(back.view(np.uint32), x.view(np.uint32))

    def test_header_layout(self, rng):
        x = random_latent(rng, (1, 2, 3, 4))
        blob = flt_to_bytes(x)
        assert blob[:4] == b"FLT1"
        assert np.frombuffer(blob[4:24], dtype="<u4").tolist() == [1, 1, 2, 3, 4]
        assert len(blob) == 24 + 4 * x.size

    def test_bad_magic(self):
        with pytest.raises(FileFormatError, match="magic"):
            flt_from_bytes(b"NOPE" + bytes(20))

    def test_truncated_payload(self, rng):
        blob = flt_to_bytes(random_latent(rng, (1, 1, 2, 2)))
        with pytest.raises(FileFormatError):
            flt_from_bytes(blob[:-4])

    def test_non_finite_rejected(self):
        x = np.full((1, 1, 1, 2), np.nan, dtype=np.float32)
        with pytest.raises(ShapeError):
            flt_from_bytes(flt_to_bytes(x))
