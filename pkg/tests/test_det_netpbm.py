"""Test the PGM/PPM image container"""
import numpy as np
import pytest

from det_netpbm import (ImagePlane, NetpbmError, decode_netpbm, encode_netpbm,
                        read_netpbm, write_netpbm)


def test_encode_grayscale_header():
    """Test the exact bytes written for a tiny grayscale image"""
    plane = ImagePlane.from_array(np.array([[0, 128], [255, 7]], dtype=np.uint8))
    assert encode_netpbm(plane) == b'P5\n2 2\n255\n' + bytes([0, 128, 255, 7])


def test_write_and_read_color(tmp_path):
    """Test writing an RGB image to disk and reading it back"""
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    plane = ImagePlane.from_array(pixels)
    path = tmp_path / "sample.ppm"
    write_netpbm(plane, path)

    assert path.read_bytes().startswith(b'P6\n7 5\n255\n')
    loaded = read_netpbm(path)
    assert loaded == plane
    assert (loaded.width, loaded.height, loaded.channels) == (7, 5, 3)


def test_header_comments_and_whitespace():
    """Test that comments and irregular whitespace in the header are accepted"""
    data = b'P5\n# made by hand\n3   1\n# depth\n255\n' + bytes([1, 2, 3])
    plane = read_netpbm(data)
    assert (plane.width, plane.height, plane.channels) == (3, 1, 1)
    assert plane.pixels[:, :, 0].tolist() == [[1, 2, 3]]


def test_raster_starting_with_whitespace_byte():
    """Test that only one separator byte is consumed after maxval"""
    data = b'P5 2 1 255\n' + bytes([10, 32])
    assert read_netpbm(data).pixels[:, :, 0].tolist() == [[10, 32]]


@pytest.mark.parametrize("data, fragment", [
    (b'P3\n1 1\n255\n0 0 0', "only P5 and P6"),
    (b'P5\n1 1\n65535\n\x00\x00', "maxval 255"),
    (b'P5\n2 2\n255\n\x00', "raster holds 1 bytes"),
    (b'P5\n2', "truncated header"),
    (b'P5\nx 2\n255\n', "non-numeric"),
    (b'P5\n0 2\n255\n', "must be positive"),
])
def test_decode_errors(data, fragment):
    """Test that malformed images are rejected with a useful message"""
    with pytest.raises(NetpbmError) as excinfo:
        decode_netpbm(data)
    assert fragment in str(excinfo.value)


def test_image_plane_validation():
    """Test the shape and dtype checks on ImagePlane"""
    with pytest.raises(NetpbmError):
        ImagePlane(width=2, height=2, channels=1, pixels=np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(NetpbmError):
        ImagePlane(width=2, height=2, channels=1, pixels=np.zeros((2, 2, 1), dtype=np.float64))
    with pytest.raises(NetpbmError):
        ImagePlane.from_array(np.zeros((2, 2, 2), dtype=np.uint8))
