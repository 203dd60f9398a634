import argparse
import logging
from pathlib import Path

from fcf.handlers.common import (
    Router,
    arg,
    bank_for,
    channel_options,
    header_lines,
    load_split,
    resolve_config,
)
from fcf.services.detector import PyramidSpec
from fcf.services.forest import BoostedForest
from fcf.services.training import MiningOptions, train_staged
from fcf.storage.models import save_model
from fcf.utils.formatters import format_model_summary

logger = logging.getLogger(__name__)

router = Router()


@router.command(
    "train",
    arguments=[
        arg("--manifest", help="training manifest (default: DATA_TRAIN_MANIFEST, else synthetic)"),
        arg("--bank", help="bank file (default: FILTERBANK_BANK_PATH, else generated from FILTERBANK_*)"),
        arg("--schedule", type=lambda s: [int(v) for v in s.split(",")], help="trees per stage (default 32,512,1024,2048,4096)"),
        arg("--depth", type=int, help="tree depth (default 2)"),
        arg("--variant", choices=["discrete", "real"], help="boosting variant (default discrete)"),
        arg("--cascade", action="store_const", const="true", help="calibrate a soft cascade after training"),
        arg("--stage-dir", type=Path, help="also save the model of every stage here"),
        arg("-o", "--output", type=Path, required=True, help="model file to write"),
    ],
)
def cmd_train(args: argparse.Namespace) -> int:
    """Train a boosted forest with staged hard negative mining."""
    config = resolve_config(
        args,
        {
            "DATA_TRAIN_MANIFEST": args.manifest,
            "FILTERBANK_BANK_PATH": args.bank,
            "TRAINING_SCHEDULE": args.schedule,
            "TRAINING_DEPTH": args.depth,
            "TRAINING_VARIANT": args.variant,
            "TRAINING_CASCADE": args.cascade,
        },
    )
    corpus = load_split(config, "train")
    bank = bank_for(config, corpus)
    header = header_lines(config, "train") + [f"BANK_ID={bank.bank_id}"]
    logger.info(f"Training on {corpus.id} with {len(bank)} {bank.family.value} filters")

    def on_stage(stage: int, forest: BoostedForest) -> None:
        if args.stage_dir is not None:
            save_model(forest, args.stage_dir / f"stage{stage}.model", header)

    forest = train_staged(
        corpus,
        bank,
        config.training.schedule,
        mining=MiningOptions.from_config(config.training, config.detector),
        spec=PyramidSpec.from_config(config.detector, config.training),
        depth=config.training.depth,
        variant=config.training.variant,
        opts=channel_options(config),
        seed=config.seed,
        mirror=config.training.mirror,
        cascade=config.training.cascade,
        on_stage=on_stage,
    )
    save_model(forest, args.output, header)
    logger.info(format_model_summary(forest))
    return 0
