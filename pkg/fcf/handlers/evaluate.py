import argparse
import logging
from pathlib import Path

from fcf.handlers.common import Router, arg, resolve_config
from fcf.services.evaluation import CALTECH_MR, KITTI_AP, apply_subset, evaluate, export_curve, match_all, recall_at_fppi
from fcf.storage.detections import load_detections
from fcf.storage.manifests import load_corpus
from fcf.utils.formatters import format_summary_line

logger = logging.getLogger(__name__)

router = Router()


@router.command(
    "eval",
    arguments=[
        arg("--detections", type=Path, required=True, help="detection file"),
        arg("--manifest", help="ground-truth manifest (default: DATA_TEST_MANIFEST)"),
        arg("--protocol", choices=[CALTECH_MR, KITTI_AP], help="metric (default caltech-mr)"),
        arg("--subset", choices=["reasonable", "moderate", "all"], help="annotation subset (default reasonable)"),
        arg("--out-dir", type=Path, help="write curve.csv and curve.svg here"),
    ],
)
def cmd_eval(args: argparse.Namespace) -> int:
    """Score detections against ground truth and print one summary line."""
    config = resolve_config(
        args,
        {
            "DATA_TEST_MANIFEST": args.manifest,
            "EVAL_PROTOCOL": args.protocol,
            "EVAL_SUBSET": args.subset,
        },
    )
    if not config.data.test_manifest:
        logger.error("No ground truth: pass --manifest or set DATA_TEST_MANIFEST")
        return 1
    corpus = load_corpus(config.data.test_manifest, config.data.subsample)
    annos = {}
    for entry in corpus.entries:
        if config.eval.subset == "all":
            annos[entry.image_id] = list(entry.annotations)
        else:
            annos[entry.image_id] = apply_subset(entry.annotations, config.eval.subset, config.eval)

    dets = load_detections(args.detections)
    unknown = sorted(set(dets) - set(annos))
    if unknown:
        logger.warning(f"Ignoring detections for {len(unknown)} images not in the manifest, e.g. {unknown[0]}")

    results = match_all(dets, annos, config.eval.iou_min)
    curve = evaluate(results, config.eval.protocol, config.eval.recall_points)
    if curve.protocol == CALTECH_MR:
        logger.info(f"Recall at 1 FPPI: {recall_at_fppi(results, 1.0):.4f}")

    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        export_curve(curve, args.out_dir / "curve.csv")
        export_curve(curve, args.out_dir / "curve.svg")

    print(format_summary_line(curve.protocol, curve.summary))
    return 0
