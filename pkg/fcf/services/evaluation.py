"""Detection evaluation: greedy matching, log-average miss rate and average precision.

Matching follows the Caltech convention. Detections are visited by
descending score; each one takes the unmatched non-ignore annotation with
the highest IoU >= ``iou_min``. A detection left unmatched that covers an
ignore region (intersection over the detection's own area >= ``iou_min``)
is dropped from the count instead of becoming a false positive; ignore
regions absorb any number of detections.

The score sweep steps over groups of equal scores, starting at the point
where nothing is accepted.
"""
import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from fcf.config import EvalConfig
from fcf.exceptions import InsufficientDataError, InvalidInputError, ParseError
from fcf.services.detector import BoundingBox, Detection

logger = logging.getLogger(__name__)

CALTECH_MR = "caltech-mr"
KITTI_AP = "kitti-ap"

MR_REFERENCE_POINTS = 10.0 ** np.linspace(-2.0, 0.0, 9)
MR_FLOOR = 1e-10

TP = 1
FP = 0
IGNORED = -1

CSV_HEADERS = {CALTECH_MR: ("fppi", "miss_rate"), KITTI_AP: ("recall", "precision")}


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    ignore: bool = False
    occlusion: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.occlusion <= 1.0:
            raise InvalidInputError(f"occlusion must be a fraction in [0, 1], got {self.occlusion}")

    @property
    def height(self) -> float:
        return self.box.h


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Per-image outcome: one status per detection, one flag per annotation."""

    scores: np.ndarray
    status: np.ndarray
    matched: np.ndarray
    n_ground_truth: int

    @property
    def true_positives(self) -> int:
        return int(np.sum(self.status == TP))

    @property
    def false_positives(self) -> int:
        return int(np.sum(self.status == FP))


@dataclass(frozen=True)
class EvalCurve:
    protocol: str
    points: Tuple[Tuple[float, float], ...]
    summary: float
    recall_points: int = 41


def match(
    dets: Sequence[Detection],
    annos: Sequence[Annotation],
    iou_min: float = 0.5,
) -> MatchResult:
    ordered = sorted(dets, key=lambda d: -d.score)
    status = np.full(len(ordered), FP, dtype=np.int64)
    matched = np.zeros(len(annos), dtype=bool)
    regular = [i for i, a in enumerate(annos) if not a.ignore]
    ignored = [i for i, a in enumerate(annos) if a.ignore]

    for k, det in enumerate(ordered):
        best, best_iou = -1, iou_min
        for i in regular:
            if matched[i]:
                continue
            iou = det.box.iou(annos[i].box)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = i, iou
        if best >= 0:
            matched[best] = True
            status[k] = TP
            continue
        for i in ignored:
            if det.box.intersection(annos[i].box) / det.box.area >= iou_min:
                matched[i] = True
                status[k] = IGNORED
                break

    return MatchResult(
        scores=np.array([d.score for d in ordered], dtype=np.float64),
        status=status,
        matched=matched,
        n_ground_truth=len(regular),
    )


def match_all(
    dets_by_image: Mapping[str, Sequence[Detection]],
    annos_by_image: Mapping[str, Sequence[Annotation]],
    iou_min: float = 0.5,
) -> List[MatchResult]:
    """Match every annotated image; images without detections count with no detections."""
    return [match(dets_by_image.get(image_id, ()), annos, iou_min) for image_id, annos in annos_by_image.items()]


def _sweep(results: Sequence[MatchResult]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Cumulative (tp, fp) per score group, starting at (0, 0)."""
    n_gt = sum(r.n_ground_truth for r in results)
    if n_gt == 0:
        raise InsufficientDataError("no non-ignored annotations to evaluate against")
    scores = np.concatenate([r.scores[r.status != IGNORED] for r in results]) if results else np.zeros(0)
    hits = np.concatenate([r.status[r.status != IGNORED] == TP for r in results]) if results else np.zeros(0, bool)
    order = np.argsort(-scores, kind="stable")
    scores, hits = scores[order], hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True)) if scores.size else np.zeros(0, dtype=int)
    tp = np.concatenate([[0], tp[ends]]).astype(np.float64)
    fp = np.concatenate([[0], fp[ends]]).astype(np.float64)
    return tp, fp, n_gt


def _mr_summary(points: Sequence[Tuple[float, float]]) -> float:
    fppi = np.array([p[0] for p in points])
    miss = np.array([p[1] for p in points])
    refs = []
    for ref in MR_REFERENCE_POINTS:
        under = miss[fppi <= ref]
        refs.append(under.min() if under.size else 1.0)
    refs = np.array(refs)
    if np.all(refs == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(np.maximum(refs, MR_FLOOR)))))


def _ap_summary(points: Sequence[Tuple[float, float]], recall_points: int) -> float:
    recall = np.array([p[0] for p in points])
    precision = np.array([p[1] for p in points])
    values = []
    for r in np.linspace(0.0, 1.0, recall_points):
        above = precision[recall >= r]
        values.append(above.max() if above.size else 0.0)
    return float(np.mean(values))


def log_avg_miss_rate(results: Sequence[MatchResult]) -> EvalCurve:
    tp, fp, n_gt = _sweep(results)
    n_images = max(len(results), 1)
    points = tuple(zip((fp / n_images).tolist(), (1.0 - tp / n_gt).tolist()))
    return EvalCurve(protocol=CALTECH_MR, points=points, summary=_mr_summary(points))


def average_precision(results: Sequence[MatchResult], recall_points: int = 41) -> EvalCurve:
    if recall_points < 2:
        raise InvalidInputError("recall_points must be >= 2")
    tp, fp, n_gt = _sweep(results)
    accepted = tp[1:] + fp[1:]
    points = tuple(zip((tp[1:] / n_gt).tolist(), (tp[1:] / accepted).tolist()))
    return EvalCurve(
        protocol=KITTI_AP,
        points=points,
        summary=_ap_summary(points, recall_points),
        recall_points=recall_points,
    )


def recall_at_fppi(results: Sequence[MatchResult], fppi: float = 1.0) -> float:
    """Highest recall reached while false positives per image stay within `fppi`."""
    curve = log_avg_miss_rate(results)
    return float(max(1.0 - miss for f, miss in curve.points if f <= fppi))


def evaluate(results: Sequence[MatchResult], protocol: str = CALTECH_MR, recall_points: int = 41) -> EvalCurve:
    if protocol == CALTECH_MR:
        return log_avg_miss_rate(results)
    if protocol == KITTI_AP:
        return average_precision(results, recall_points)
    raise InvalidInputError(f"unknown protocol {protocol!r}")


def apply_subset(
    annos: Sequence[Annotation],
    subset: str = "reasonable",
    config: EvalConfig = EvalConfig(),
    min_height: Optional[float] = None,
    max_occlusion: Optional[float] = None,
) -> List[Annotation]:
    """Mark annotations outside the subset as ignore; existing ignore flags stay set."""
    if subset == "reasonable":
        lo, occ = config.reasonable_min_height, config.reasonable_max_occlusion
    elif subset == "moderate":
        lo, occ = config.moderate_min_height, config.moderate_max_occlusion
    elif subset == "custom":
        if min_height is None or max_occlusion is None:
            raise InvalidInputError("custom subset needs min_height and max_occlusion")
        lo, occ = min_height, max_occlusion
    else:
        raise InvalidInputError(f"unknown subset {subset!r}")
    return [replace(a, ignore=a.ignore or a.height < lo or a.occlusion > occ) for a in annos]


def export_curve(curve: EvalCurve, path, fmt: Optional[str] = None) -> None:
    """Write a curve as csv (header plus one point per line) or svg."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADERS[curve.protocol])
            for x, y in curve.points:
                writer.writerow([repr(float(x)), repr(float(y))])
    elif fmt == "svg":
        from fcf.utils.plotting import create_curve_svg

        path.write_bytes(create_curve_svg(curve))
    else:
        raise InvalidInputError(f"unknown curve format {fmt!r}")
    logger.info(f"Wrote {curve.protocol} curve to {path}")


def read_curve_csv(path, recall_points: int = 41) -> EvalCurve:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty curve file", path=str(path))
    header = tuple(rows[0])
    protocol = next((p for p, h in CSV_HEADERS.items() if h == header), None)
    if protocol is None:
        raise ParseError(f"unknown curve header {','.join(header)!r}", path=str(path), line=1)
    points = tuple((float(x), float(y)) for x, y in rows[1:])
    if protocol == CALTECH_MR:
        return EvalCurve(protocol=protocol, points=points, summary=_mr_summary(points))
    return EvalCurve(
        protocol=protocol,
        points=points,
        summary=_ap_summary(points, recall_points),
        recall_points=recall_points,
    )


def annotations_by_image(entries) -> Dict[str, List[Annotation]]:
    return {entry.image_id: list(entry.annotations) for entry in entries}
