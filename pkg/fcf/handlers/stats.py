import argparse
import logging
from pathlib import Path

from fcf.handlers.common import Router, arg, header_lines, resolve_config
from fcf.services.channels import CHANNEL_NAMES
from fcf.services.introspection import filter_usage, spatial_influence
from fcf.storage.grids import save_grid
from fcf.storage.models import load_model
from fcf.utils.formatters import format_model_summary, format_usage_table
from fcf.utils.plotting import create_channel_maps_svg, create_heatmap_svg

logger = logging.getLogger(__name__)

router = Router()


@router.command(
    "stats",
    arguments=[
        arg("--model", type=Path, required=True, help="trained model file"),
        arg("--out-dir", type=Path, required=True, help="directory for the usage table, grids and heatmaps"),
    ],
)
def cmd_stats(args: argparse.Namespace) -> int:
    """Filter usage frequency and spatial influence of a trained model."""
    config = resolve_config(args)
    forest = load_model(args.model)
    bank = forest.bank
    header = header_lines(config, "stats") + [f"MODEL={args.model.as_posix()}"]
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)

    counts = filter_usage(forest, len(bank))
    per_channel = filter_usage(forest, len(bank), per_channel=True)
    table = format_usage_table(bank, counts, per_channel)
    (out / "usage.txt").write_text("".join(f"# {line}\n" for line in header) + table + "\n", encoding="utf-8")

    maps = spatial_influence(forest)
    for channel, plane in enumerate(maps.per_channel):
        save_grid(plane, out / f"influence_c{channel}.grid", header + [f"CHANNEL={CHANNEL_NAMES[channel]}"])
    save_grid(maps.total, out / "influence_total.grid", header)
    (out / "influence_channels.svg").write_bytes(create_channel_maps_svg(maps.per_channel, CHANNEL_NAMES))
    (out / "influence_total.svg").write_bytes(create_heatmap_svg(maps.total, "all channels"))
    logger.info(f"Wrote usage table and influence maps to {out}")

    print(format_model_summary(forest))
    return 0
