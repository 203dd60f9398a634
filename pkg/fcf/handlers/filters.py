import argparse
import logging
from pathlib import Path

from fcf.exceptions import InvalidInputError
from fcf.handlers.common import (
    Router,
    arg,
    bank_for,
    generate_bank,
    header_lines,
    learn_bank,
    load_split,
    parse_size,
    resolve_config,
)
from fcf.services.filterbank import FilterFamily
from fcf.services.introspection import ACROSS_CHANNELS, PER_CHANNEL, reduce_bank
from fcf.storage.banks import dump_bank, load_bank, save_bank
from fcf.storage.models import load_model
from fcf.utils.formatters import format_bank_table
from fcf.utils.plotting import create_bank_preview_svg

logger = logging.getLogger(__name__)

router = Router(group="filters", help="filter-bank tooling")

GENERATED = [f.value for f in (FilterFamily.UNIFORM, FilterFamily.SQUARES, FilterFamily.CHECKERBOARDS, FilterFamily.RANDOM)]


@router.command(
    "generate",
    arguments=[
        arg("--family", choices=GENERATED, help="bank family (default: FILTERBANK_FAMILY, checkerboards)"),
        arg("--max", type=parse_size, metavar="ROWSxCOLS", help="largest filter in cells (default 4x4)"),
        arg("--sizes", type=int, help="number of square sizes for the squares family (default 16)"),
        arg("--n", type=int, help="number of random filters (default 50)"),
        arg("--cell-px", type=int, help="pixels per cell side (default 6)"),
        arg("-o", "--output", type=Path, help="bank file to write; stdout when omitted"),
    ],
)
def cmd_generate(args: argparse.Namespace) -> int:
    """Generate a uniform, squares, checkerboards or random bank."""
    rows, cols = args.max if args.max else (None, None)
    config = resolve_config(
        args,
        {
            "FILTERBANK_FAMILY": args.family,
            "FILTERBANK_MAX_ROWS": rows,
            "FILTERBANK_MAX_COLS": cols,
            "FILTERBANK_N_SIZES": args.sizes,
            "FILTERBANK_N_RANDOM": args.n,
            "FILTERBANK_CELL_PX": args.cell_px,
        },
    )
    bank = generate_bank(config)
    if args.output is None:
        print(dump_bank(bank), end="")
    else:
        save_bank(bank, args.output, header_lines(config, "filters generate"))
    return 0


@router.command(
    "learn",
    arguments=[
        arg("--family", choices=[FilterFamily.PCA_ALL.value, FilterFamily.PCA_FOREGROUND.value], default="pca_all"),
        arg("--manifest", help="training manifest (default: DATA_TRAIN_MANIFEST, else synthetic)"),
        arg("--k", type=int, help="filters per channel (default 4)"),
        arg("--patches", type=int, help="patches per channel and split (default 2000)"),
        arg("-o", "--output", type=Path, required=True, help="bank file to write"),
    ],
)
def cmd_learn(args: argparse.Namespace) -> int:
    """Learn a per-channel PCA bank from corpus patches."""
    config = resolve_config(
        args,
        {
            "FILTERBANK_FAMILY": args.family,
            "FILTERBANK_PCA_K": args.k,
            "FILTERBANK_PCA_PATCHES": args.patches,
            "DATA_TRAIN_MANIFEST": args.manifest,
        },
    )
    bank = learn_bank(config, load_split(config, "train"))
    save_bank(bank, args.output, header_lines(config, "filters learn"))
    for channel, values in sorted(bank.eigenvalues.items()):
        logger.info(f"Channel {channel} eigenvalues: {', '.join(f'{v:.4g}' for v in values)}")
    return 0


@router.command("inspect", arguments=[arg("bank", type=Path, help="bank file")], uses_config=False)
def cmd_inspect(args: argparse.Namespace) -> int:
    """Print id, size, weight sum and channel of every filter."""
    print(format_bank_table(load_bank(args.bank)))
    return 0


@router.command(
    "reduce",
    arguments=[
        arg("--model", nargs="+", type=Path, required=True, help="trained model(s) whose usage is pooled"),
        arg("--n", type=int, default=16, help="filters to keep (per channel in per-channel mode; default 16)"),
        arg("--mode", choices=[ACROSS_CHANNELS, PER_CHANNEL], default=ACROSS_CHANNELS),
        arg("-o", "--output", type=Path, required=True, help="bank file to write"),
    ],
)
def cmd_reduce(args: argparse.Namespace) -> int:
    """Keep the N filters the trained model(s) split on most often."""
    config = resolve_config(args)
    forests = [load_model(path) for path in args.model]
    bank = forests[0].bank
    if any(f.bank.bank_id != bank.bank_id for f in forests[1:]):
        raise InvalidInputError("pooled models must share one filter bank")
    reduced = reduce_bank(forests, bank, args.n, args.mode)
    save_bank(reduced, args.output, header_lines(config, f"filters reduce --n {args.n} --mode {args.mode}"))
    return 0


@router.command(
    "preview",
    arguments=[
        arg("bank", type=Path, nargs="?", help="bank file (default: the configured bank)"),
        arg("--columns", type=int, default=10, help="filters per row (default 10)"),
        arg("-o", "--output", type=Path, required=True, help="svg file to write"),
    ],
)
def cmd_preview(args: argparse.Namespace) -> int:
    """Render every filter of a bank as an SVG grid."""
    config = resolve_config(args)
    bank = load_bank(args.bank) if args.bank else bank_for(config)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_bytes(create_bank_preview_svg(bank, columns=args.columns))
    logger.info(f"Wrote preview of {len(bank)} filters to {args.output}")
    return 0
