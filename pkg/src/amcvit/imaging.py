"""Constellation images: binary, gray (count), enhanced gray and three-channel encodings.

Pixel geometry: the window ``[-scale, scale]^2`` is split into ``height_px`` rows
and ``width_px`` columns. Row 0 is the top (largest imaginary part), column 0 the
left (most negative real part). Bins are half-open, so a sample lying exactly on
a bin edge belongs to the bin with the larger index. Distances for the enhanced
encoding are measured in pixel units to pixel centroids.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from amcvit.errors import EncodingFailure, InvalidSpec, NonDistinctAlphas

DEFAULT_SCALE = 2.5
DEFAULT_SIZE_PX = 32
DEFAULT_ALPHAS = (1.0, 2.0, 4.0)
DEFAULT_CUTOFF_PX = 4.0


class PowerMode(enum.Enum):
    UNIT = "unit"
    MAGNITUDE_SQUARED = "magnitude_squared"

    @classmethod
    def parse(cls, value: str | PowerMode) -> PowerMode:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidSpec(f"unknown power mode {value!r}; expected 'unit' or 'magnitude_squared'") from None


@dataclass(frozen=True)
class ImagePlaneSpec:
    scale: float = DEFAULT_SCALE
    width_px: int = DEFAULT_SIZE_PX
    height_px: int = DEFAULT_SIZE_PX

    def __post_init__(self):
        if not self.scale > 0 or int(self.width_px) < 1 or int(self.height_px) < 1:
            raise InvalidSpec(f"invalid image plane {self}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    def pixel_coords(self, samples) -> tuple[np.ndarray, np.ndarray]:
        """Continuous (column, row) coordinates in pixel units; pixel k spans [k, k+1)."""
        z = np.asarray(samples, dtype=np.complex128).ravel()
        u = (z.real + self.scale) * self.width_px / (2.0 * self.scale)
        v = (self.scale - z.imag) * self.height_px / (2.0 * self.scale)
        return u, v

    def bins(self, samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer (row, col) bins and the in-window mask for every sample."""
        u, v = self.pixel_coords(samples)
        col = np.floor(u)
        row = np.floor(v)
        inside = (col >= 0) & (col < self.width_px) & (row >= 0) & (row < self.height_px)
        return row, col, inside


@dataclass(frozen=True)
class DecayParams:
    alpha: float = 1.0
    cutoff_radius_px: float = DEFAULT_CUTOFF_PX
    power_mode: PowerMode = PowerMode.UNIT

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidSpec("decay rate alpha must be positive")
        if not self.cutoff_radius_px >= 1:
            raise InvalidSpec("cutoff_radius_px must be at least 1")


@dataclass
class GrayGrid:
    """Non-negative intensity grid; ``dropped`` counts samples that fell outside the window."""

    values: np.ndarray
    plane: ImagePlaneSpec
    dropped: int = 0


@dataclass
class RgbImage:
    pixels: np.ndarray
    plane: ImagePlaneSpec | None = None

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise InvalidSpec(f"RgbImage needs an H x W x 3 uint8 array, got {self.pixels.dtype} {self.pixels.shape}")

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)


def rasterize_gray(samples, plane: ImagePlaneSpec) -> GrayGrid:
    """Per-pixel sample counts."""
    row, col, inside = plane.bins(samples)
    flat = (row[inside] * plane.width_px + col[inside]).astype(np.intp)
    counts = np.bincount(flat, minlength=plane.height_px * plane.width_px).astype(np.float64)
    return GrayGrid(counts.reshape(plane.shape), plane, int(inside.size - inside.sum()))


def rasterize_binary(samples, plane: ImagePlaneSpec) -> GrayGrid:
    """1.0 where at least one sample landed, else 0.0."""
    gray = rasterize_gray(samples, plane)
    gray.values = np.minimum(gray.values, 1.0)
    return gray


def _influence(samples, plane: ImagePlaneSpec, cutoff: float, power_mode: PowerMode):
    """Sample-major list of (pixel index, distance, power) pairs within ``cutoff``.

    Pairs are ordered by ascending sample index, so accumulating them in list
    order sums each pixel's contributions in sample order.
    """
    z = np.asarray(samples, dtype=np.complex128).ravel()
    u, v = plane.pixel_coords(z)
    row, col, inside = plane.bins(z)
    dropped = int(inside.size - inside.sum())
    z, u, v = z[inside], u[inside], v[inside]
    row, col = row[inside].astype(np.intp), col[inside].astype(np.intp)
    h, w = plane.shape

    reach = math.ceil(cutoff + 0.5) if math.isfinite(cutoff) else max(h, w)
    if (2 * reach + 1) ** 2 >= h * w:
        # candidate set = every pixel
        rr, cc = np.divmod(np.arange(h * w), w)
        rows = np.broadcast_to(rr, (z.size, h * w))
        cols = np.broadcast_to(cc, (z.size, h * w))
    else:
        dr, dc = np.divmod(np.arange((2 * reach + 1) ** 2), 2 * reach + 1)
        rows = row[:, None] + (dr - reach)[None, :]
        cols = col[:, None] + (dc - reach)[None, :]

    du = u[:, None] - (cols + 0.5)
    dv = v[:, None] - (rows + 0.5)
    dist = np.sqrt(du * du + dv * dv)
    keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w) & (dist <= cutoff)
    if power_mode is PowerMode.UNIT:
        power = np.ones(z.size)
    else:
        power = z.real * z.real + z.imag * z.imag
    power = np.broadcast_to(power[:, None], dist.shape)
    return (rows * w + cols)[keep], dist[keep], power[keep], dropped


def _accumulate(index, dist, power, alpha: float, plane: ImagePlaneSpec) -> np.ndarray:
    contrib = power * np.exp(-alpha * dist)
    # bincount adds weights in input order starting from 0.0
    grid = np.bincount(index, weights=contrib, minlength=plane.height_px * plane.width_px)
    return grid.reshape(plane.shape)


def enhance_gray(samples, plane: ImagePlaneSpec, decay: DecayParams) -> GrayGrid:
    """Enhanced gray image: each pixel sums ``P_i * exp(-alpha * d_ij)`` over samples within the cutoff."""
    index, dist, power, dropped = _influence(samples, plane, decay.cutoff_radius_px, decay.power_mode)
    return GrayGrid(_accumulate(index, dist, power, decay.alpha, plane), plane, dropped)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Scale so the maximum maps to 255, rounding half up; an all-zero grid stays zero."""
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.floor(255.0 * values / peak + 0.5).astype(np.uint8)


def compose_three_channel(
    samples,
    plane: ImagePlaneSpec,
    alphas=DEFAULT_ALPHAS,
    power_mode: PowerMode = PowerMode.UNIT,
    cutoff: float = DEFAULT_CUTOFF_PX,
) -> RgbImage:
    """Stack three enhanced gray images with increasing decay rates as R, G, B."""
    alphas = tuple(float(a) for a in alphas)
    if len(alphas) != 3:
        raise InvalidSpec(f"exactly three decay rates are needed, got {len(alphas)}")
    if not all(a > 0 for a in alphas):
        raise InvalidSpec("decay rates must be positive")
    if not alphas[0] < alphas[1] < alphas[2]:
        raise NonDistinctAlphas(f"decay rates must be strictly increasing, got {alphas}")
    DecayParams(alphas[0], cutoff, power_mode)  # validates cutoff

    index, dist, power, _ = _influence(samples, plane, cutoff, power_mode)
    channels = [to_uint8(_accumulate(index, dist, power, a, plane)) for a in alphas]
    return RgbImage(np.stack(channels, axis=-1), plane)


def gray_to_rgb(grid: GrayGrid) -> RgbImage:
    """Render a single gray grid as an 8-bit image with equal channels."""
    g = to_uint8(grid.values)
    return RgbImage(np.repeat(g[:, :, None], 3, axis=2), grid.plane)


def upscale(img: RgbImage, factor: int) -> RgbImage:
    """Nearest-neighbour integer replication: each pixel becomes a ``factor x factor`` block."""
    factor = int(factor)
    if factor < 1:
        raise InvalidSpec(f"upscale factor must be >= 1, got {factor}")
    pixels = np.repeat(np.repeat(img.pixels, factor, axis=0), factor, axis=1)
    plane = None
    if img.plane is not None:
        plane = ImagePlaneSpec(img.plane.scale, img.plane.width_px * factor, img.plane.height_px * factor)
    return RgbImage(pixels, plane)


def encode_png(img: RgbImage) -> bytes:
    """Lossless 8-bit RGB PNG with fixed encoder settings (identical images give identical bytes)."""
    buf = io.BytesIO()
    try:
        Image.fromarray(np.ascontiguousarray(img.pixels)).save(buf, format="PNG", compress_level=6)
    except (OSError, ValueError) as exc:
        raise EncodingFailure(str(exc)) from exc
    return buf.getvalue()


def decode_png(data: bytes) -> RgbImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise EncodingFailure(f"cannot decode PNG: {exc}") from exc
    return RgbImage(pixels.copy())
