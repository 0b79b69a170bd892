"""Gaussian kernels and per-channel blurring for data augmentation."""
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from det_netpbm import (ImagePlane, NetpbmError, PathLike, SUPPORTED_SUFFIXES,
                        read_netpbm, write_netpbm)

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 1.0
DEFAULT_RADIUS = 1
ANNOTATION_SUFFIXES = ('.xml', '.txt')
BLUR_METHODS = ('separable', 'direct')


class BlurError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianKernelSpec:
    sigma: float = DEFAULT_SIGMA
    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        _check_sigma(self.sigma)
        if int(self.radius) != self.radius or self.radius < 1:
            raise BlurError(f"radius must be an integer >= 1, got {self.radius}")

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    Normalised weight grid, indexed by offset from the centre.

    ``factor`` is the normalised 1-D Gaussian whose outer product with itself
    is ``weights``; the separable blur runs on it.
    """
    size: int
    weights: np.ndarray
    factor: np.ndarray

    @property
    def radius(self) -> int:
        return self.size // 2

    def weight(self, dx: int, dy: int) -> float:
        return float(self.weights[dy + self.radius, dx + self.radius])


@dataclass
class AugmentReport:
    written: int = 0
    skipped: List[str] = field(default_factory=list)
    annotations_copied: int = 0


def _check_sigma(sigma: float):
    if not (math.isfinite(sigma) and sigma > 0):
        raise BlurError(f"sigma must be finite and positive, got {sigma}")
    # sigma^2 and the 2-D normaliser must both stay finite and non-zero
    variance = sigma * sigma
    if not (variance > 0 and math.isfinite(variance) and math.isfinite(1.0 / (2.0 * math.pi * variance))):
        raise BlurError(f"sigma {sigma} is outside the representable range")


def gaussian_density_nd(r: float, sigma: float, n: int) -> float:
    """Isotropic Gaussian density at distance r in n dimensions."""
    _check_sigma(sigma)
    if n < 1:
        raise BlurError(f"dimension must be >= 1, got {n}")
    return (1.0 / math.sqrt(2.0 * math.pi * sigma * sigma)) ** n \
        * math.exp(-r * r / (2.0 * sigma * sigma))


def gaussian_density_2d(u: float, v: float, sigma: float) -> float:
    _check_sigma(sigma)
    return math.exp(-(u * u + v * v) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def gaussian_weights_1d(spec: GaussianKernelSpec) -> np.ndarray:
    offsets = np.arange(-spec.radius, spec.radius + 1, dtype=np.float64)
    raw = np.exp(-offsets * offsets / (2.0 * spec.sigma * spec.sigma))
    return raw / raw.sum()


def build_kernel(spec: GaussianKernelSpec) -> KernelMatrix:
    """
    Sample the 2-D density at every integer offset within the radius and
    normalise so the weights sum to 1.

    Raises BlurError when sigma is so small relative to the radius that an
    off-centre weight underflows to zero.
    """
    offsets = range(-spec.radius, spec.radius + 1)
    raw = np.array([[gaussian_density_2d(u, v, spec.sigma) for u in offsets] for v in offsets])
    weights = raw / raw.sum()
    if not np.all(weights > 0):
        raise BlurError(f"kernel weights underflow for sigma={spec.sigma}, radius={spec.radius}")
    return KernelMatrix(size=spec.size, weights=weights, factor=gaussian_weights_1d(spec))


def _round_to_u8(values: np.ndarray) -> np.ndarray:
    # half-up rounding, then clamp
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _convolve_direct(padded: np.ndarray, k: KernelMatrix, height: int, width: int) -> np.ndarray:
    out = np.zeros((height, width, padded.shape[2]), dtype=np.float64)
    for dy in range(k.size):
        for dx in range(k.size):
            out += k.weights[dy, dx] * padded[dy:dy + height, dx:dx + width]
    return out


def _convolve_separable(padded: np.ndarray, k: KernelMatrix, height: int, width: int) -> np.ndarray:
    rows = np.zeros((padded.shape[0], width, padded.shape[2]), dtype=np.float64)
    for dx in range(k.size):
        rows += k.factor[dx] * padded[:, dx:dx + width]
    out = np.zeros((height, width, padded.shape[2]), dtype=np.float64)
    for dy in range(k.size):
        out += k.factor[dy] * rows[dy:dy + height]
    return out


def convolve_plane(img: ImagePlane, k: KernelMatrix, method: str = 'separable') -> np.ndarray:
    """
    Weighted sums of every pixel window, before rounding.

    Borders are mirrored (the edge pixel is repeated), so the kernel radius
    may not exceed the smaller image dimension.

    Raises:
        BlurError: If the kernel is too large for the image or the method is unknown
    """
    if method not in BLUR_METHODS:
        raise BlurError(f"unknown blur method '{method}', expected one of {BLUR_METHODS}")
    if k.size > 2 * min(img.width, img.height) + 1:
        raise BlurError(
            f"kernel of size {k.size} is too large for a {img.width}x{img.height} image")

    r = k.radius
    padded = np.pad(img.pixels.astype(np.float64), ((r, r), (r, r), (0, 0)), mode='symmetric')
    if method == 'direct':
        return _convolve_direct(padded, k, img.height, img.width)
    return _convolve_separable(padded, k, img.height, img.width)


def blur_plane(img: ImagePlane, k: KernelMatrix, method: str = 'separable') -> ImagePlane:
    """Blur every channel independently; see convolve_plane for border handling."""
    return ImagePlane.from_array(_round_to_u8(convolve_plane(img, k, method)))


def _blur_file(src: Path, dst: Path, kernel: KernelMatrix, method: str) -> bool:
    try:
        plane = read_netpbm(src)
    except (OSError, NetpbmError) as e:
        logger.warning("Skipping unreadable image %s: %s", src, e)
        return False
    try:
        blurred = blur_plane(plane, kernel, method)
    except BlurError as e:
        logger.warning("Skipping %s: %s", src, e)
        return False
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_netpbm(blurred, dst)
    logger.debug("Blurred %s -> %s", src, dst)
    return True


def augment_directory(in_dir: PathLike, out_dir: PathLike, spec: GaussianKernelSpec,
                      workers: Optional[int] = None,
                      only: Optional[Iterable[str]] = None,
                      method: str = 'separable') -> AugmentReport:
    """
    Blur every PGM/PPM image under in_dir into out_dir, keeping relative names.

    Annotation files (.xml/.txt) sharing a stem with a blurred image are
    copied unchanged. Images that cannot be read are skipped with a warning.

    Args:
        in_dir: Directory scanned recursively for images
        out_dir: Destination root, created if missing
        spec: Kernel parameters
        workers: Thread pool size (None lets the executor decide)
        only: Optional image stems to restrict the run to
        method: "separable" or "direct" convolution

    Raises:
        FileNotFoundError: If in_dir does not exist
        OSError: If out_dir cannot be created or written
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / '.write-probe'
    probe.touch()
    probe.unlink()

    wanted = set(only) if only is not None else None
    images = sorted(
        p for p in in_dir.rglob('*')
        if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES
        and (wanted is None or p.stem in wanted)
    )
    if method not in BLUR_METHODS:
        raise BlurError(f"unknown blur method '{method}', expected one of {BLUR_METHODS}")
    kernel = build_kernel(spec)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(
            lambda p: _blur_file(p, out_dir / p.relative_to(in_dir), kernel, method), images))

    report = AugmentReport()
    for path, ok in zip(images, outcomes):
        if not ok:
            report.skipped.append(str(path.relative_to(in_dir)))
            continue
        report.written += 1
        for suffix in ANNOTATION_SUFFIXES:
            annotation = path.with_suffix(suffix)
            if annotation.is_file():
                shutil.copyfile(annotation, out_dir / annotation.relative_to(in_dir))
                report.annotations_copied += 1

    logger.info("Blurred %d image(s) into %s, skipped %d", report.written, out_dir, len(report.skipped))
    return report
