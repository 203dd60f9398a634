"""HOG+LUV feature channels.

A channel stack holds ten planes at input resolution:

* 0-2: CIE LUV (D65), rescaled to [0, 1] with fixed constants
  ``L/100``, ``(u + 134)/354`` and ``(v + 140)/262``;
* 3: gradient magnitude ``sqrt(dx² + dy²)`` with the ``[-1, 0, 1]`` stencil
  and replicated borders, no normalisation or clamping;
* 4-9: magnitude soft-binned by orientation into six bins centred at
  ``k·30°`` over ``[0°, 180°)``. The six bins sum to plane 3.

For colour inputs the gradient of the plane with the largest magnitude is
kept per pixel.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2luv

from fcf.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

N_CHANNELS = 10
N_ORIENTATIONS = 6
CHANNEL_NAMES = ("L", "U", "V", "|G|") + tuple(f"G{k * 30}" for k in range(N_ORIENTATIONS))

LUV_OFFSETS = np.array([0.0, 134.0, 140.0])
LUV_RANGES = np.array([100.0, 354.0, 262.0])

GRADIENT_STENCIL = np.array([-1.0, 0.0, 1.0])
TRIANGLE_1 = np.array([1.0, 2.0, 1.0]) / 4.0


@dataclass(frozen=True)
class ChannelOptions:
    pre_smooth: str = "off"


@dataclass(frozen=True, eq=False)
class ChannelStack:
    """Ten planes, shape (10, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != N_CHANNELS:
            raise InvalidInputError(f"channel stack must be (10, H, W), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def plane(self, channel: int) -> np.ndarray:
        return self.data[channel]


def as_image(img) -> np.ndarray:
    """Validate an image array: (H, W) or (H, W, 3), finite, float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise InvalidInputError(f"image must be (H, W) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite pixels")
    return arr


def rgb_to_luv(img) -> np.ndarray:
    """CIE LUV of an RGB (or grayscale) image, each plane rescaled to [0, 1]."""
    arr = as_image(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    luv = rgb2luv(np.clip(arr, 0.0, 1.0))
    return ((luv - LUV_OFFSETS) / LUV_RANGES).transpose(2, 0, 1)


def _plane_gradients(plane: np.ndarray):
    dx = ndimage.correlate1d(plane, GRADIENT_STENCIL, axis=1, mode="nearest")
    dy = ndimage.correlate1d(plane, GRADIENT_STENCIL, axis=0, mode="nearest")
    return dx, dy


def orientation_bins(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Soft-bin the gradient magnitude into six orientation planes."""
    magnitude = np.sqrt(dx * dx + dy * dy)
    theta = np.mod(np.arctan2(dy, dx), np.pi)
    position = theta / (np.pi / N_ORIENTATIONS)
    lower = np.floor(position)
    frac = position - lower
    lower = lower.astype(np.int64) % N_ORIENTATIONS
    upper = (lower + 1) % N_ORIENTATIONS

    bins = np.zeros((N_ORIENTATIONS,) + magnitude.shape)
    rows, cols = np.indices(magnitude.shape)
    np.add.at(bins, (lower, rows, cols), magnitude * (1.0 - frac))
    np.add.at(bins, (upper, rows, cols), magnitude * frac)
    return np.concatenate([magnitude[None], bins], axis=0)


def gradient_channels(img) -> np.ndarray:
    """Magnitude plus six orientation bins, shape (7, H, W)."""
    arr = as_image(img)
    planes = [arr] if arr.ndim == 2 else [arr[:, :, k] for k in range(arr.shape[2])]

    best_dx, best_dy = _plane_gradients(planes[0])
    best_mag = best_dx * best_dx + best_dy * best_dy
    for plane in planes[1:]:
        dx, dy = _plane_gradients(plane)
        mag = dx * dx + dy * dy
        wins = mag > best_mag
        best_dx = np.where(wins, dx, best_dx)
        best_dy = np.where(wins, dy, best_dy)
        best_mag = np.where(wins, mag, best_mag)

    return orientation_bins(best_dx, best_dy)


def smooth_triangle(img) -> np.ndarray:
    """Separable [1, 2, 1]/4 smoothing with replicated borders."""
    arr = as_image(img)
    out = ndimage.correlate1d(arr, TRIANGLE_1, axis=0, mode="nearest")
    return ndimage.correlate1d(out, TRIANGLE_1, axis=1, mode="nearest")


def compute_channels(img, opts: ChannelOptions = ChannelOptions()) -> ChannelStack:
    arr = as_image(img)
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise InvalidInputError(f"image {arr.shape[1]}x{arr.shape[0]} is smaller than 3x3")
    if opts.pre_smooth == "triangle1":
        arr = smooth_triangle(arr)
    elif opts.pre_smooth != "off":
        raise InvalidInputError(f"unknown pre_smooth option {opts.pre_smooth!r}")

    data = np.concatenate([rgb_to_luv(arr), gradient_channels(arr)], axis=0)
    return ChannelStack(data=data)


def sample_bilinear(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    # half-sample mirror: the edge pixel repeats first, like the stencil borders
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([grid_y, grid_x])
    if arr.ndim == 2:
        return ndimage.map_coordinates(arr, coords, order=1, mode="reflect")
    return np.stack(
        [ndimage.map_coordinates(arr[:, :, k], coords, order=1, mode="reflect") for k in range(arr.shape[2])],
        axis=2,
    )


def resize_image(img, width: int, height: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres."""
    arr = as_image(img)
    if width < 1 or height < 1:
        raise InvalidInputError(f"cannot resize to {width}x{height}")
    src_h, src_w = arr.shape[:2]
    if (src_w, src_h) == (width, height):
        return arr.copy()

    ys = (np.arange(height) + 0.5) * (src_h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (src_w / width) - 0.5
    return sample_bilinear(arr, ys, xs)
