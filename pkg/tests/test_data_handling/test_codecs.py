import numpy as np
import pytest

from vtds.core.errors import DatasetWriteError
from vtds.core.ground_truth import FlowField, depth_image, metric_depth
from vtds.core.renderer import GBuffer
from vtds.data_handling.codecs import (
    decode_depth,
    decode_flow,
    encode_depth,
    encode_flow,
    encode_instance,
    read_png,
    write_png,
)


def _flow(u, v, valid=None):
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    valid = np.ones(u.shape, dtype=bool) if valid is None else np.atleast_2d(valid)
    return FlowField(u, v, valid)


def _depth_buffer(z):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    h, w = z.shape
    zeros = np.zeros((h, w, 3))
    return GBuffer(np.zeros((h, w), np.uint8), np.zeros((h, w), np.int32), z, zeros, zeros, zeros)


class TestFlowCodec:
    def test_channel_values(self):
        image, overflow = encode_flow(_flow([0.0, 1.0, -1.0], [0.0, 0.5, -2.0]))
        assert image.dtype == np.uint16
        assert image[0, :, 0].tolist() == [32768, 32832, 32704]
        assert image[0, :, 1].tolist() == [32768, 32800, 32640]
        assert image[0, :, 2].tolist() == [1, 1, 1]
        assert overflow == 0

    def test_invalid_pixel_is_zeroed(self):
        image, _ = encode_flow(_flow([7.0], [-3.0], [False]))
        assert image[0, 0].tolist() == [32768, 32768, 0]
        decoded = decode_flow(image)
        assert not decoded.valid[0, 0]
        assert decoded.u[0, 0] == 0.0

    def test_overflow_is_clamped_and_counted(self):
        image, overflow = encode_flow(_flow([600.0, -600.0, 100.0], [0.0, 0.0, 700.0], [True, True, False]))
        assert image[0, 0, 0] == 65535
        assert image[0, 1, 0] == 0
        # invalid pixels do not count
        assert overflow == 2

    def test_decode_precision(self):
        rng = np.random.default_rng(4)
        flow = _flow(rng.uniform(-500, 500, (20, 30)), rng.uniform(-500, 500, (20, 30)))
        decoded = decode_flow(encode_flow(flow)[0])
        assert np.abs(decoded.u - flow.u).max() <= 1 / 128 + 1e-12
        assert np.abs(decoded.v - flow.v).max() <= 1 / 128 + 1e-12

    def test_reencode_is_stable(self):
        rng = np.random.default_rng(5)
        flow = _flow(rng.normal(0, 20, (8, 8)), rng.normal(0, 20, (8, 8)), rng.random((8, 8)) > 0.3)
        image, _ = encode_flow(flow)
        again, _ = encode_flow(decode_flow(image))
        assert np.array_equal(image, again)


class TestDepthCodec:
    @pytest.mark.parametrize("d,expected", [(0.0, 0), (1.0, 65535), (0.5, 32768)])
    def test_values(self, d, expected):
        assert encode_depth(np.array([[d]]))[0, 0] == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_depth(np.array([[1.2]]))

    def test_decode_precision(self):
        d = np.linspace(0.0, 1.0, 1001).reshape(11, 91)
        assert np.abs(decode_depth(encode_depth(d)) - d).max() <= 1 / 131070 + 1e-12

    def test_metric_round_trip(self):
        near = 8.0
        z = np.geomspace(near, 100.0, 400)
        encoded = encode_depth(depth_image(_depth_buffer(z), near))
        recovered = metric_depth(decode_depth(encoded), near)
        assert np.allclose(recovered, z.reshape(1, -1), rtol=1e-4, atol=0)

    def test_relative_error_grows_with_distance(self):
        near = 0.5
        z = np.geomspace(near, 100.0, 2000)
        recovered = metric_depth(decode_depth(encode_depth(depth_image(_depth_buffer(z), near))), near)[0]
        error = np.abs(recovered - z) / z
        assert (error <= 1.01 * z / (131070 * near)).all()
        assert error[z <= 13.1 * near].max() <= 1e-4
        assert error[z >= 50.0].max() > 1e-4

    def test_sky_and_nonlinearity(self):
        near = 0.5
        d = depth_image(_depth_buffer([np.inf, 2 * near, near]), near)
        assert decode_depth(encode_depth(d))[0, 0] == 1.0
        assert d[0, 1] == pytest.approx(0.5)
        assert d[0, 2] == 0.0

    def test_reencode_is_stable(self):
        d = np.random.default_rng(6).random((10, 10))
        image = encode_depth(d)
        assert np.array_equal(encode_depth(decode_depth(image)), image)


def test_instance_range():
    assert encode_instance(np.array([[0, 65535]])).dtype == np.uint16
    with pytest.raises(ValueError):
        encode_instance(np.array([[70000]]))
    with pytest.raises(ValueError):
        encode_instance(np.array([[-1]]))


class TestPng:
    def test_lossless_rgb16(self, tmp_path):
        image = np.random.default_rng(7).integers(0, 65536, (12, 9, 3)).astype(np.uint16)
        write_png(tmp_path / "flow.png", image)
        back = read_png(tmp_path / "flow.png")
        assert back.dtype == np.uint16
        assert np.array_equal(back, image)

    def test_lossless_gray8(self, tmp_path):
        image = np.arange(120, dtype=np.uint8).reshape(10, 12)
        write_png(tmp_path / "ids.png", image)
        assert np.array_equal(read_png(tmp_path / "ids.png"), image)

    def test_channel_order(self, tmp_path):
        image = np.zeros((2, 2, 3), np.uint8)
        image[..., 0] = 255
        write_png(tmp_path / "red.png", image)
        assert read_png(tmp_path / "red.png")[0, 0].tolist() == [255, 0, 0]

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(DatasetWriteError) as info:
            write_png(tmp_path / "missing" / "a.png", np.zeros((2, 2), np.uint8))
        assert "missing" in info.value.path

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_png(tmp_path / "nope.png")
