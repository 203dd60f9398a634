"""Filter banks over cell grids.

A filter is a small matrix of cell weights. At evaluation time every cell
is replicated over a ``cell_px x cell_px`` pixel block and the result is
correlated with a feature channel, then sampled every ``eval_stride_px``
pixels.

Generated families use weights in {-1, 0, +1}:

* uniform: a single all-ones cell (a 4 px cell reproduces ACF);
* squares: uniform squares of side 1..n cells;
* checkerboards: for every size (m, n) up to the maximum, one uniform
  filter when m == n, a two-band horizontal gradient for each column
  split, a two-band vertical gradient for each row split, and one
  checkerboard (top-left +1) when both sides are >= 2. Negations are
  never emitted. Maxima 2x2 / 3x3 / 4x3 / 4x4 give 7 / 25 / 39 / 61;
* random: sizes uniform over the maximum, cells +-1 with p = 1/2,
  constant draws resampled.

PCA families hold real 10x10 one-pixel-cell filters, one list per
channel, evaluated every 2 pixels.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fcf.exceptions import InsufficientDataError, InvalidInputError
from fcf.utils.numeric import round_sig
from fcf.utils.rng import make_rng

logger = logging.getLogger(__name__)

MAX_FILTER_CELLS = 64
DEFAULT_CELL_PX = 6
PCA_PATCH_PX = 10
PCA_STRIDE_PX = 2
PCA_DIGITS = 9


class FilterFamily(str, Enum):
    UNIFORM = "uniform"
    SQUARES = "squares"
    CHECKERBOARDS = "checkerboards"
    RANDOM = "random"
    INFORMED = "informed"
    PCA_ALL = "pca_all"
    PCA_FOREGROUND = "pca_foreground"

    @property
    def is_pca(self) -> bool:
        return self in (FilterFamily.PCA_ALL, FilterFamily.PCA_FOREGROUND)


@dataclass(frozen=True, eq=False)
class Filter:
    id: str
    weights: np.ndarray
    channel: Optional[int] = None

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise InvalidInputError(f"filter {self.id}: weights must be a 2-D matrix")
        rows, cols = weights.shape
        if not (1 <= rows <= MAX_FILTER_CELLS and 1 <= cols <= MAX_FILTER_CELLS):
            raise InvalidInputError(f"filter {self.id}: size {rows}x{cols} outside 1..{MAX_FILTER_CELLS}")
        if not np.any(weights):
            raise InvalidInputError(f"filter {self.id}: all-zero filter")
        if not np.all(np.isfinite(weights)):
            raise InvalidInputError(f"filter {self.id}: non-finite weight")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @property
    def is_integer(self) -> bool:
        return bool(np.all(self.weights == np.round(self.weights)))

    def expanded(self, cell_px: int) -> np.ndarray:
        """Pixel kernel: every cell weight replicated over cell_px x cell_px."""
        return np.kron(self.weights, np.ones((cell_px, cell_px)))

    def support_px(self, cell_px: int) -> Tuple[int, int]:
        return self.rows * cell_px, self.cols * cell_px

    def __eq__(self, other) -> bool:
        if not isinstance(other, Filter):
            return NotImplemented
        return (
            self.id == other.id
            and self.channel == other.channel
            and self.weights.shape == other.weights.shape
            and bool(np.array_equal(self.weights, other.weights))
        )

    def __hash__(self) -> int:
        return hash((self.id, self.channel, self.weights.shape, self.weights.tobytes()))


@dataclass(frozen=True)
class FilterBank:
    family: FilterFamily
    filters: Tuple[Filter, ...]
    cell_px: int = DEFAULT_CELL_PX
    eval_stride_px: int = DEFAULT_CELL_PX
    per_channel: bool = False
    eigenvalues: Dict[int, Tuple[float, ...]] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", FilterFamily(self.family))
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.filters:
            raise InvalidInputError("filter bank is empty")
        if self.eval_stride_px < 1 or self.cell_px < 1:
            raise InvalidInputError("cell_px and eval_stride_px must be >= 1")
        if self.per_channel and any(f.channel is None for f in self.filters):
            raise InvalidInputError("per-channel bank has filters without a channel")
        if not self.per_channel and any(f.channel is not None for f in self.filters):
            raise InvalidInputError("shared bank has channel-tagged filters")
        if self.family.is_pca:
            for f in self.filters:
                if abs(np.linalg.norm(f.weights) - 1.0) > 1e-6:
                    raise InvalidInputError(f"filter {f.id}: PCA filters must be unit-norm")

    def __len__(self) -> int:
        return len(self.filters)

    @property
    def max_support_px(self) -> Tuple[int, int]:
        return (
            max(f.rows for f in self.filters) * self.cell_px,
            max(f.cols for f in self.filters) * self.cell_px,
        )

    def applies_to(self, filter_index: int, channel: int) -> bool:
        f = self.filters[filter_index]
        return f.channel is None or f.channel == channel

    def channel_filters(self, channel: int) -> List[int]:
        return [i for i in range(len(self.filters)) if self.applies_to(i, channel)]

    def index_of(self, filter_id: str) -> int:
        for i, f in enumerate(self.filters):
            if f.id == filter_id:
                return i
        raise InvalidInputError(f"bank has no filter {filter_id!r}")

    @property
    def bank_id(self) -> str:
        from fcf.storage.banks import dump_bank

        return hashlib.sha1(dump_bank(self).encode("utf-8")).hexdigest()[:12]


def _uniform_filter(rows: int, cols: int, fid: str) -> Filter:
    return Filter(id=fid, weights=np.ones((rows, cols)))


def make_uniform(cell_px: int = DEFAULT_CELL_PX) -> FilterBank:
    return FilterBank(
        family=FilterFamily.UNIFORM,
        filters=(_uniform_filter(1, 1, "u1x1"),),
        cell_px=cell_px,
        eval_stride_px=cell_px,
    )


def make_squares(n_sizes: int = 16, cell_px: int = DEFAULT_CELL_PX) -> FilterBank:
    if n_sizes < 1:
        raise InvalidInputError("n_sizes must be >= 1")
    filters = tuple(_uniform_filter(s, s, f"u{s}x{s}") for s in range(1, n_sizes + 1))
    return FilterBank(
        family=FilterFamily.SQUARES, filters=filters, cell_px=cell_px, eval_stride_px=cell_px
    )


def checkerboard_filters(max_rows: int, max_cols: int) -> List[Filter]:
    filters: List[Filter] = []
    for m in range(1, max_rows + 1):
        for n in range(1, max_cols + 1):
            if m == n:
                filters.append(_uniform_filter(m, n, f"u{m}x{n}"))
            for k in range(1, n):
                w = np.ones((m, n))
                w[:, k:] = -1
                filters.append(Filter(id=f"h{m}x{n}s{k}", weights=w))
            for k in range(1, m):
                w = np.ones((m, n))
                w[k:, :] = -1
                filters.append(Filter(id=f"v{m}x{n}s{k}", weights=w))
            if m >= 2 and n >= 2:
                i, j = np.indices((m, n))
                filters.append(Filter(id=f"c{m}x{n}", weights=np.where((i + j) % 2 == 0, 1.0, -1.0)))
    return filters


def checkerboards_count(max_rows: int, max_cols: int) -> int:
    """Closed form of the checkerboards generation rule."""
    total = 0
    for m in range(1, max_rows + 1):
        for n in range(1, max_cols + 1):
            total += int(m == n) + (n - 1) + (m - 1) + int(m >= 2 and n >= 2)
    return total


def make_checkerboards(max_rows: int = 4, max_cols: int = 4, cell_px: int = DEFAULT_CELL_PX) -> FilterBank:
    if max_rows < 1 or max_cols < 1:
        raise InvalidInputError("checkerboard maxima must be >= 1")
    return FilterBank(
        family=FilterFamily.CHECKERBOARDS,
        filters=tuple(checkerboard_filters(max_rows, max_cols)),
        cell_px=cell_px,
        eval_stride_px=cell_px,
    )


def make_random(
    n: int = 50,
    max_rows: int = 4,
    max_cols: int = 4,
    seed: int = 0,
    cell_px: int = DEFAULT_CELL_PX,
) -> FilterBank:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if max_rows * max_cols < 2:
        raise InvalidInputError("random filters need at least two cells to be non-constant")
    rng = make_rng(seed, "filterbank.random")
    seen = set()
    filters: List[Filter] = []
    while len(filters) < n:
        rows = int(rng.integers(1, max_rows + 1))
        cols = int(rng.integers(1, max_cols + 1))
        weights = np.where(rng.random((rows, cols)) < 0.5, 1.0, -1.0)
        if np.all(weights == weights.flat[0]):
            continue
        key = (weights.shape, weights.tobytes())
        neg_key = (weights.shape, (-weights).tobytes())
        if key in seen or neg_key in seen:
            continue
        seen.add(key)
        filters.append(Filter(id=f"r{len(filters):03d}", weights=weights))
    return FilterBank(
        family=FilterFamily.RANDOM, filters=tuple(filters), cell_px=cell_px, eval_stride_px=cell_px
    )


def pca_eigenpairs(patches: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of the centred patch covariance."""
    flat = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    centred = flat - flat.mean(axis=0)
    covariance = centred.T @ centred / len(flat)
    values, vectors = np.linalg.eigh(covariance)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    nonzero = np.flatnonzero(np.abs(vector) > 1e-12)
    if nonzero.size and vector[nonzero[0]] < 0:
        return -vector
    return vector


def _pca_filters(patches: np.ndarray, k: int, channel: int, tag: str) -> Tuple[List[Filter], Tuple[float, ...]]:
    dim = PCA_PATCH_PX * PCA_PATCH_PX
    if patches is None or len(patches) < 10 * dim:
        found = 0 if patches is None else len(patches)
        raise InsufficientDataError(
            f"channel {channel}: {tag} split has {found} patches, need at least {10 * dim}"
        )
    if patches.shape[1:] != (PCA_PATCH_PX, PCA_PATCH_PX):
        raise InvalidInputError(f"channel {channel}: patches must be {PCA_PATCH_PX}x{PCA_PATCH_PX}")
    values, vectors = pca_eigenpairs(patches)
    filters = []
    for i in range(k):
        vec = _fix_sign(vectors[:, i])
        weights = round_sig(vec.reshape(PCA_PATCH_PX, PCA_PATCH_PX), PCA_DIGITS)
        filters.append(Filter(id=f"pca{tag[0]}{i}c{channel}", weights=weights, channel=channel))
    return filters, tuple(float(v) for v in values[:k])


def learn_pca(
    patches: Dict[str, Dict[int, np.ndarray]],
    k: int = 4,
    split: str = "all",
) -> FilterBank:
    """Per-channel PCA filters.

    `patches` maps a split name ("all", "foreground", "background") to
    per-channel arrays of shape (n, 10, 10). With ``split="foreground"``
    k/2 filters come from the background set and k/2 from the foreground
    set, in that order.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if split == "all":
        sources = [("all", k)]
        family = FilterFamily.PCA_ALL
    elif split == "foreground":
        if k % 2:
            raise InvalidInputError("foreground/background split needs an even k")
        sources = [("background", k // 2), ("foreground", k // 2)]
        family = FilterFamily.PCA_FOREGROUND
    else:
        raise InvalidInputError(f"unknown PCA split {split!r}")

    channels = sorted(patches[sources[0][0]].keys()) if sources[0][0] in patches else []
    if not channels:
        raise InsufficientDataError(f"no patches for split {sources[0][0]!r}")

    filters: List[Filter] = []
    eigenvalues: Dict[int, Tuple[float, ...]] = {}
    for channel in channels:
        values: Tuple[float, ...] = ()
        for tag, count in sources:
            channel_patches = patches.get(tag, {}).get(channel)
            learned, learned_values = _pca_filters(channel_patches, count, channel, tag)
            filters.extend(learned)
            values += learned_values
        eigenvalues[channel] = values
        logger.debug(f"PCA channel {channel}: eigenvalues {values}")

    return FilterBank(
        family=family,
        filters=tuple(filters),
        cell_px=1,
        eval_stride_px=PCA_STRIDE_PX,
        per_channel=True,
        eigenvalues=eigenvalues,
    )


def select_filters(bank: FilterBank, chosen: Sequence[Tuple[int, Optional[int]]]) -> FilterBank:
    """Sub-bank from (filter index, channel) picks; channel None keeps a shared filter."""
    per_channel = any(ch is not None for _, ch in chosen)
    filters = []
    for index, channel in chosen:
        f = bank.filters[index]
        filters.append(Filter(id=f.id, weights=f.weights, channel=channel if per_channel else None))
    return FilterBank(
        family=bank.family,
        filters=tuple(filters),
        cell_px=bank.cell_px,
        eval_stride_px=bank.eval_stride_px,
        per_channel=per_channel,
    )
