import argparse
import logging
from pathlib import Path

from fcf.handlers.common import Router, arg, header_lines, resolve_config
from fcf.services.synthetic import SynthSpec, make_synthetic, save_synthetic

logger = logging.getLogger(__name__)

router = Router()


@router.command(
    "synth",
    arguments=[
        arg("--out-dir", type=Path, required=True, help="directory for the images and manifests"),
        arg("--train-images", type=int, help="training images (default 300)"),
        arg("--test-images", type=int, help="test images (default 100)"),
    ],
)
def cmd_synth(args: argparse.Namespace) -> int:
    """Render a synthetic train/test corpus with train.manifest and test.manifest."""
    config = resolve_config(args, {"SYNTH_N_IMAGES": args.train_images, "SYNTH_TEST_IMAGES": args.test_images})
    header = header_lines(config, "synth")
    for split, n_images in (("train", config.synth.n_images), ("test", config.synth.test_images)):
        corpus = make_synthetic(SynthSpec.from_config(config.synth, n_images), seed=config.seed, split=split)
        manifest = save_synthetic(corpus, args.out_dir, header)
        logger.info(f"Wrote {len(corpus)} {split} images and {manifest}")
    return 0
