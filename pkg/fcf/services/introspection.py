"""What a trained forest looks at: filter usage, reduced banks, spatial influence."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from fcf.exceptions import InvalidInputError
from fcf.services.channels import N_CHANNELS
from fcf.services.filterbank import FilterBank, select_filters
from fcf.services.forest import BoostedForest

logger = logging.getLogger(__name__)

ACROSS_CHANNELS = "across-channels"
PER_CHANNEL = "per-channel"

Forests = Union[BoostedForest, Sequence[BoostedForest]]


def _as_list(forests: Forests) -> List[BoostedForest]:
    if isinstance(forests, BoostedForest):
        return [forests]
    return list(forests)


def filter_usage(forests: Forests, n_filters: int, per_channel: bool = False) -> np.ndarray:
    """Split-node counts per filter, shape (n_filters,) or (10, n_filters) with `per_channel`."""
    counts = np.zeros((N_CHANNELS, n_filters), dtype=np.int64)
    for forest in _as_list(forests):
        for node in forest.split_nodes():
            f = node.feature
            if not 0 <= f.filter < n_filters:
                raise InvalidInputError(f"split node uses filter {f.filter}, bank has {n_filters}")
            counts[f.channel, f.filter] += 1
    return counts if per_channel else counts.sum(axis=0)


def _ranked(counts: np.ndarray, ids: Sequence[str]) -> List[int]:
    used = [i for i in range(len(counts)) if counts[i] > 0]
    return sorted(used, key=lambda i: (-counts[i], ids[i], i))


def reduce_bank(
    forests: Forests,
    bank: FilterBank,
    n: int,
    mode: str = ACROSS_CHANNELS,
) -> FilterBank:
    """Keep the n most used filters; ties go to the lexicographically smaller id.

    In per-channel mode n filters are kept for every channel and the result
    is a per-channel bank.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    ids = [f.id for f in bank.filters]

    if mode == ACROSS_CHANNELS:
        counts = filter_usage(forests, len(bank))
        ranked = _ranked(counts, ids)
        if not ranked:
            raise InvalidInputError("the forest has no split nodes to rank filters by")
        if n > len(ranked):
            logger.warning(f"Requested {n} filters but only {len(ranked)} are used; keeping all of them")
        chosen: List[Tuple[int, Optional[int]]] = [(i, bank.filters[i].channel) for i in ranked[:n]]
        reduced = select_filters(bank, chosen)

    elif mode == PER_CHANNEL:
        counts = filter_usage(forests, len(bank), per_channel=True)
        chosen = []
        for channel in range(N_CHANNELS):
            ranked = _ranked(counts[channel], ids)
            if n > len(ranked):
                logger.warning(f"Channel {channel}: requested {n} filters but only {len(ranked)} are used")
            chosen.extend((i, channel) for i in ranked[:n])
        if not chosen:
            raise InvalidInputError("the forest has no split nodes to rank filters by")
        reduced = select_filters(bank, chosen)

    else:
        raise InvalidInputError(f"unknown reduction mode {mode!r}")

    logger.info(f"Reduced {len(bank)}-filter bank to {len(reduced)} filters ({mode})")
    return reduced


@dataclass(frozen=True, eq=False)
class InfluenceMaps:
    per_channel: np.ndarray
    total: np.ndarray


def spatial_influence(forest: BoostedForest, bank: Optional[FilterBank] = None) -> InfluenceMaps:
    """Per-channel count of split nodes whose filter support covers each window pixel."""
    bank = bank or forest.bank
    if bank is None:
        raise InvalidInputError("spatial influence needs the forest's filter bank")
    width, height = forest.window
    maps = np.zeros((N_CHANNELS, height, width), dtype=np.int64)
    for node in forest.split_nodes():
        idx = node.feature
        mask = bank.filters[idx.filter].expanded(bank.cell_px) != 0
        y0 = idx.cell_y * bank.eval_stride_px
        x0 = idx.cell_x * bank.eval_stride_px
        fh, fw = mask.shape
        if y0 + fh > height or x0 + fw > width:
            raise InvalidInputError(f"split node feature {tuple(idx)} falls outside the {width}x{height} window")
        maps[idx.channel, y0:y0 + fh, x0:x0 + fw] += mask
    return InfluenceMaps(per_channel=maps, total=maps.sum(axis=0))
