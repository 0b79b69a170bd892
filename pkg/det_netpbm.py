"""8-bit image planes and the binary PGM (P5) / PPM (P6) container."""
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

PathLike = Union[str, os.PathLike]

MAGIC_CHANNELS = {b'P5': 1, b'P6': 3}
CHANNEL_MAGIC = {1: b'P5', 3: b'P6'}
SUPPORTED_SUFFIXES = ('.pgm', '.ppm', '.pnm')


class NetpbmError(ValueError):
    pass


@dataclass(eq=False)
class ImagePlane:
    """
    An 8-bit image stored as a (height, width, channels) uint8 array.

    channels is 1 for grayscale and 3 for RGB; each channel is blurred on its
    own.
    """
    width: int
    height: int
    channels: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise NetpbmError(f"image size must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise NetpbmError(f"channels must be 1 or 3, got {self.channels}")
        expected = (self.height, self.width, self.channels)
        if self.pixels.shape != expected:
            raise NetpbmError(f"pixel array shape {self.pixels.shape} does not match {expected}")
        if self.pixels.dtype != np.uint8:
            raise NetpbmError(f"pixels must be uint8, got {self.pixels.dtype}")

    @classmethod
    def from_array(cls, pixels) -> "ImagePlane":
        """Wrap a (h, w) or (h, w, c) array of 0..255 values."""
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise NetpbmError(f"expected a 2-D or 3-D array, got {arr.ndim} dimensions")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        height, width, channels = arr.shape
        return cls(width=width, height=height, channels=channels, pixels=arr)

    def __eq__(self, other):
        if not isinstance(other, ImagePlane):
            return NotImplemented
        return (self.width, self.height, self.channels) == (other.width, other.height, other.channels) \
            and np.array_equal(self.pixels, other.pixels)


def _read_header(data: bytes) -> Tuple[bytes, int, int, int, int]:
    """Return magic, width, height, maxval and the raster offset."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise NetpbmError("truncated header")
        if data[pos:pos + 1] == b'#':
            end = data.find(b'\n', pos)
            if end < 0:
                raise NetpbmError("truncated header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
            pos += 1
        tokens.append(data[start:pos])

    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError("missing whitespace after maxval")
    pos += 1

    magic = tokens[0]
    if magic not in MAGIC_CHANNELS:
        raise NetpbmError(f"unsupported format {magic!r}; only P5 and P6 are read")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise NetpbmError(f"non-numeric header field in {tokens[1:]!r}")
    return magic, width, height, maxval, pos


def decode_netpbm(data: bytes) -> ImagePlane:
    magic, width, height, maxval, offset = _read_header(data)
    if maxval != 255:
        raise NetpbmError(f"only 8-bit images (maxval 255) are supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise NetpbmError(f"image size must be positive, got {width}x{height}")
    channels = MAGIC_CHANNELS[magic]
    size = width * height * channels
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise NetpbmError(f"raster holds {len(raster)} bytes, expected {size}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).copy()
    return ImagePlane(width=width, height=height, channels=channels, pixels=pixels)


def encode_netpbm(plane: ImagePlane) -> bytes:
    header = b'%s\n%d %d\n255\n' % (CHANNEL_MAGIC[plane.channels], plane.width, plane.height)
    return header + plane.pixels.tobytes()


def read_netpbm(source: Union[PathLike, bytes]) -> ImagePlane:
    """Read a P5/P6 image from a path or from raw bytes."""
    if isinstance(source, (bytes, bytearray)):
        return decode_netpbm(bytes(source))
    return decode_netpbm(Path(source).read_bytes())


def write_netpbm(plane: ImagePlane, path: PathLike):
    Path(path).write_bytes(encode_netpbm(plane))
