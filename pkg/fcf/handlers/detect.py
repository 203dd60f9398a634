import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Tuple

from fcf.handlers.common import Router, arg, channel_options, header_lines, resolve_config
from fcf.services.detector import Detection, PyramidSpec, detect, nms
from fcf.storage.detections import save_detections
from fcf.storage.images import read_image
from fcf.storage.manifests import image_id_for, load_corpus
from fcf.storage.models import load_model

logger = logging.getLogger(__name__)

router = Router()


@router.command(
    "detect",
    arguments=[
        arg("--model", type=Path, required=True, help="trained model file"),
        arg("--manifest", help="run on every image of this manifest (default: DATA_TEST_MANIFEST)"),
        arg("images", nargs="*", type=Path, help="image files; ids are the paths without suffix"),
        arg("--stride", type=int, help="detection stride in pixels (default 6)"),
        arg("--score-min", type=float, help="lowest reported score (default -1)"),
        arg("--no-nms", action="store_true", help="report every window above the score cutoff"),
        arg("--use-cascade", action="store_true", help="stop scoring windows that fall below the cascade trace"),
        arg("-o", "--output", type=Path, required=True, help="detection file to write"),
    ],
)
def cmd_detect(args: argparse.Namespace) -> int:
    """Run a trained model over images and write the detections."""
    config = resolve_config(
        args,
        {
            "DATA_TEST_MANIFEST": args.manifest,
            "DETECTOR_STRIDE": args.stride,
            "DETECTOR_SCORE_MIN": args.score_min,
        },
    )
    forest = load_model(args.model)
    spec = PyramidSpec.from_config(config.detector, config.training)
    if tuple(spec.window) != tuple(forest.window):
        spec = replace(spec, window=tuple(forest.window))

    targets: List[Tuple[str, object]] = []
    if args.images:
        targets = [(image_id_for(path.as_posix()), path) for path in args.images]
    elif config.data.test_manifest:
        corpus = load_corpus(config.data.test_manifest, config.data.subsample)
        targets = [(entry.image_id, corpus.root / entry.path) for entry in corpus.entries]
    else:
        logger.error("No images given: pass image files, --manifest or DATA_TEST_MANIFEST")
        return 1

    opts = channel_options(config)
    found: List[Detection] = []
    for image_id, path in targets:
        dets = detect(
            read_image(path),
            forest,
            spec,
            stride=config.detector.stride,
            score_min=config.detector.score_min,
            opts=opts,
            use_cascade=args.use_cascade,
            image_id=image_id,
        )
        if not args.no_nms:
            dets = nms(dets, config.detector.nms_overlap)
        logger.debug(f"{image_id}: {len(dets)} detections")
        found.extend(dets)

    save_detections(found, args.output, header_lines(config, "detect") + [f"MODEL={args.model.as_posix()}"])
    logger.info(f"Detected {len(found)} objects in {len(targets)} images")
    return 0
