"""Filter responses over a channel stack and flat feature addressing.

Responses are valid-region correlations of each pixel-expanded filter with
each channel, sampled every ``eval_stride_px`` pixels. Response grid point
``(gy, gx)`` has its filter's top-left corner at pixel
``(gx·stride, gy·stride)``; a placement is valid only when the whole
support lies inside the plane.

Integer filters are evaluated through one integral image per channel
(each cell is a rectangle sum); real filters by direct dot products.
"""
import logging
from dataclasses import dataclass, field
from typing import Collection, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fcf.exceptions import InvalidInputError
from fcf.services.channels import N_CHANNELS, ChannelStack
from fcf.services.filterbank import Filter, FilterBank

logger = logging.getLogger(__name__)

N_BINS = 256


class FeatureIndex(NamedTuple):
    channel: int
    filter: int
    cell_x: int
    cell_y: int


@dataclass(frozen=True, eq=False)
class ResponseStack:
    planes: Dict[Tuple[int, int], np.ndarray]
    stride: int
    image_id: str = ""
    scale: float = 1.0

    def plane(self, channel: int, filter_index: int) -> np.ndarray:
        try:
            return self.planes[(channel, filter_index)]
        except KeyError:
            raise InvalidInputError(f"no response plane for channel {channel}, filter {filter_index}")

    def __len__(self) -> int:
        return len(self.planes)


def integral_image(plane: np.ndarray) -> np.ndarray:
    """Summed-area table with a zero first row and column."""
    table = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1))
    table[1:, 1:] = np.cumsum(np.cumsum(plane, axis=0), axis=1)
    return table


def rect_sums(table: np.ndarray, ys: np.ndarray, xs: np.ndarray, h: int, w: int) -> np.ndarray:
    """Sums over [y, y+h) x [x, x+w) for every (y, x) in the grid ys x xs."""
    y0 = ys[:, None]
    x0 = xs[None, :]
    return table[y0 + h, x0 + w] - table[y0, x0 + w] - table[y0 + h, x0] + table[y0, x0]


def _grid(size: int, support: int, stride: int) -> np.ndarray:
    if support > size:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, size - support + 1, stride)


def _integral_response(table: np.ndarray, f: Filter, cell_px: int, stride: int, shape) -> np.ndarray:
    fh, fw = f.support_px(cell_px)
    ys = _grid(shape[0], fh, stride)
    xs = _grid(shape[1], fw, stride)
    out = np.zeros((len(ys), len(xs)))
    for r in range(f.rows):
        for c in range(f.cols):
            weight = f.weights[r, c]
            if weight == 0:
                continue
            out += weight * rect_sums(table, ys + r * cell_px, xs + c * cell_px, cell_px, cell_px)
    return out


def _direct_response(plane: np.ndarray, f: Filter, cell_px: int, stride: int) -> np.ndarray:
    kernel = f.expanded(cell_px)
    windows = sliding_window_view(plane, kernel.shape)[::stride, ::stride]
    return np.einsum("ijkl,kl->ij", windows, kernel)


def apply_bank(
    stack: ChannelStack,
    bank: FilterBank,
    method: str = "auto",
    image_id: str = "",
    scale: float = 1.0,
    pairs: Optional[Collection[Tuple[int, int]]] = None,
) -> ResponseStack:
    """Response planes for every (channel, filter) pair, or only those in `pairs`."""
    fh, fw = bank.max_support_px
    if stack.height < fh or stack.width < fw:
        raise InvalidInputError(
            f"channel stack {stack.width}x{stack.height} is smaller than the largest filter {fw}x{fh}"
        )
    if method not in ("auto", "direct", "integral"):
        raise InvalidInputError(f"unknown method {method!r}")

    planes: Dict[Tuple[int, int], np.ndarray] = {}
    for channel in range(N_CHANNELS):
        plane = stack.plane(channel)
        table: Optional[np.ndarray] = None
        for index in bank.channel_filters(channel):
            if pairs is not None and (channel, index) not in pairs:
                continue
            f = bank.filters[index]
            use_integral = method == "integral" or (method == "auto" and f.is_integer)
            if use_integral:
                if table is None:
                    table = integral_image(plane)
                planes[(channel, index)] = _integral_response(
                    table, f, bank.cell_px, bank.eval_stride_px, plane.shape
                )
            else:
                planes[(channel, index)] = _direct_response(plane, f, bank.cell_px, bank.eval_stride_px)
    return ResponseStack(planes=planes, stride=bank.eval_stride_px, image_id=image_id, scale=scale)


def _check_window(bank: FilterBank, window: Tuple[int, int]) -> None:
    width, height = window
    if width % bank.eval_stride_px or height % bank.eval_stride_px:
        raise InvalidInputError(
            f"window {width}x{height} is not divisible by the evaluation stride {bank.eval_stride_px}"
        )


def placements(bank: FilterBank, filter_index: int, window: Tuple[int, int]) -> Tuple[int, int]:
    """Number of valid (cells_x, cells_y) placements of one filter inside the window."""
    width, height = window
    fh, fw = bank.filters[filter_index].support_px(bank.cell_px)
    nx = len(_grid(width, fw, bank.eval_stride_px))
    ny = len(_grid(height, fh, bank.eval_stride_px))
    return nx, ny


def feature_count(bank: FilterBank, window: Tuple[int, int]) -> int:
    """Number of valid feature indices for a (width, height) model window."""
    _check_window(bank, window)
    total = 0
    for channel in range(N_CHANNELS):
        for index in bank.channel_filters(channel):
            nx, ny = placements(bank, index, window)
            total += nx * ny
    return total


def feature_indices(bank: FilterBank, window: Tuple[int, int]) -> List[FeatureIndex]:
    """All valid indices ordered by (channel, filter, cell_y, cell_x)."""
    _check_window(bank, window)
    out: List[FeatureIndex] = []
    for channel in range(N_CHANNELS):
        for index in bank.channel_filters(channel):
            nx, ny = placements(bank, index, window)
            out.extend(FeatureIndex(channel, index, cx, cy) for cy in range(ny) for cx in range(nx))
    return out


def read_feature(resp: ResponseStack, idx: FeatureIndex, origin: Tuple[int, int] = (0, 0)) -> float:
    """Stored response at a feature index, relative to a window origin in grid cells."""
    plane = resp.plane(idx.channel, idx.filter)
    gy = origin[1] + idx.cell_y
    gx = origin[0] + idx.cell_x
    if not (0 <= gy < plane.shape[0] and 0 <= gx < plane.shape[1]) or idx.cell_x < 0 or idx.cell_y < 0:
        raise InvalidInputError(f"feature index {tuple(idx)} at origin {origin} is outside the response grid")
    return float(plane[gy, gx])


@dataclass
class FeatureLayout:
    """Column layout of a flat feature vector, grouped by response plane."""

    indices: List[FeatureIndex]
    groups: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def build(cls, bank: FilterBank, window: Tuple[int, int]) -> "FeatureLayout":
        indices = feature_indices(bank, window)
        buckets: Dict[Tuple[int, int], List[int]] = {}
        for column, idx in enumerate(indices):
            buckets.setdefault((idx.channel, idx.filter), []).append(column)
        groups = {}
        for key, columns in buckets.items():
            cols = np.array(columns)
            cy = np.array([indices[c].cell_y for c in columns])
            cx = np.array([indices[c].cell_x for c in columns])
            groups[key] = (cols, cy, cx)
        return cls(indices=indices, groups=groups)

    def __len__(self) -> int:
        return len(self.indices)

    def gather(self, resp: ResponseStack, origins: np.ndarray) -> np.ndarray:
        """Feature matrix (n_windows, n_features) for window origins given as (gx, gy) grid cells."""
        origins = np.asarray(origins, dtype=np.int64).reshape(-1, 2)
        out = np.empty((len(origins), len(self.indices)))
        for key, (cols, cy, cx) in self.groups.items():
            plane = resp.plane(*key)
            gy = origins[:, 1:2] + cy[None, :]
            gx = origins[:, 0:1] + cx[None, :]
            if gy.size and (gy.max() >= plane.shape[0] or gx.max() >= plane.shape[1] or origins.min() < 0):
                raise InvalidInputError(f"window origin outside the response grid of plane {key}")
            out[:, cols] = plane[gy, gx]
        return out


def window_features(resp: ResponseStack, layout: FeatureLayout, origin: Tuple[int, int] = (0, 0)) -> np.ndarray:
    return layout.gather(resp, np.array([origin]))[0]


@dataclass(frozen=True, eq=False)
class Quantizer:
    """256 equal-width bins per feature with bounds from a training matrix."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Quantizer":
        return cls(
            lo=features.min(axis=0).astype(np.float64),
            hi=features.max(axis=0).astype(np.float64),
        )

    @property
    def scale(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, N_BINS / np.where(span > 0, span, 1.0), 0.0)

    def transform(self, features: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """uint8 bins, shape (n_features, n_samples) for column-wise split search."""
        n_samples, n_features = features.shape
        out = np.empty((n_features, n_samples), dtype=np.uint8)
        scale = self.scale
        for start in range(0, n_features, chunk):
            stop = min(start + chunk, n_features)
            block = (features[:, start:stop].astype(np.float64) - self.lo[start:stop]) * scale[start:stop]
            out[start:stop] = np.clip(np.floor(block), 0, N_BINS - 1).astype(np.uint8).T
        return out

    def bin_upper_edge(self, feature: int, bin_index: int) -> float:
        span = self.hi[feature] - self.lo[feature]
        return float(self.lo[feature] + (bin_index + 1) * span / N_BINS)
