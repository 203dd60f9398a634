from typing import Optional

import numpy as np

from fcf.services.channels import CHANNEL_NAMES
from fcf.services.filterbank import FilterBank
from fcf.services.forest import BoostedForest


def format_bank_table(bank: FilterBank) -> str:
    """One row per filter: id, size in cells, weight sum and channel."""
    parts = [
        f"# family={bank.family.value} filters={len(bank)} cell_px={bank.cell_px} eval_stride_px={bank.eval_stride_px}",
        f"{'id':<16} {'size':>7} {'weight_sum':>12} {'channel':>7}",
    ]
    for f in bank.filters:
        weight_sum = float(f.weights.sum())
        shown = str(int(weight_sum)) if weight_sum == int(weight_sum) and f.is_integer else f"{weight_sum:.6g}"
        channel = "-" if f.channel is None else str(f.channel)
        parts.append(f"{f.id:<16} {f'{f.rows}x{f.cols}':>7} {shown:>12} {channel:>7}")
    return "\n".join(parts)


def format_usage_table(bank: FilterBank, counts: np.ndarray, per_channel: Optional[np.ndarray] = None) -> str:
    """Filters by descending split-node count; per-channel counts follow when given."""
    total = int(counts.sum())
    header = f"{'rank':>4} {'id':<16} {'count':>7} {'share':>7}"
    if per_channel is not None:
        header += " " + " ".join(f"{name:>5}" for name in CHANNEL_NAMES)
    parts = [f"# split_nodes={total}", header]
    order = sorted(range(len(bank)), key=lambda i: (-counts[i], bank.filters[i].id, i))
    for rank, i in enumerate(order, start=1):
        share = counts[i] / total if total else 0.0
        row = f"{rank:>4} {bank.filters[i].id:<16} {int(counts[i]):>7} {share:>7.2%}"
        if per_channel is not None:
            row += " " + " ".join(f"{int(per_channel[c, i]):>5}" for c in range(per_channel.shape[0]))
        parts.append(row)
    return "\n".join(parts)


def format_model_summary(forest: BoostedForest) -> str:
    n_splits = sum(1 for _ in forest.split_nodes())
    bank = forest.bank
    return (
        f"trees={len(forest)} variant={forest.variant} depth={forest.depth} "
        f"window={forest.window[0]}x{forest.window[1]} split_nodes={n_splits} "
        f"bank={bank.family.value if bank else '-'}:{len(bank) if bank else 0} "
        f"cascade={'on' if forest.cascade is not None else 'off'}"
    )


def format_summary_line(protocol: str, value: float) -> str:
    """Machine-parsable result line, e.g. ``caltech-mr 0.0``."""
    return f"{protocol} {round(float(value), 6)!r}"
