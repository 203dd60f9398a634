"""Multi-scale sliding-window detection and greedy non-maximum suppression.

The pyramid starts at the scale that maps ``min_object_height`` onto the
object height inside the model window and shrinks by
``2^(-1/scales_per_octave)`` per level down to ``max_object_height``.
Every level is resized, turned into channels and filtered from scratch.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from fcf.config import DetectorConfig, TrainingConfig, settings
from fcf.exceptions import InvalidInputError
from fcf.services.channels import ChannelOptions, as_image, compute_channels, resize_image
from fcf.services.featuremap import apply_bank
from fcf.services.forest import BoostedForest, response_fetch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidInputError(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def intersection(self, other: "BoundingBox") -> float:
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        return max(iw, 0.0) * max(ih, 0.0)

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection(other)
        return inter / (self.area + other.area - inter)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    scale: float = 1.0
    image_id: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInputError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class PyramidSpec:
    scales_per_octave: int = 8
    min_object_height: float = 50.0
    max_object_height: float = 480.0
    window: Tuple[int, int] = (60, 120)
    object_width_frac: float = 0.5
    object_height_frac: float = 1.0

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise InvalidInputError("scales_per_octave must be >= 1")
        if not 0 < self.min_object_height <= self.max_object_height:
            raise InvalidInputError("object height range must satisfy 0 < min <= max")
        if not (0 < self.object_width_frac <= 1 and 0 < self.object_height_frac <= 1):
            raise InvalidInputError("object fractions must lie in (0, 1]")

    @classmethod
    def from_config(cls, detector: DetectorConfig, training: TrainingConfig) -> "PyramidSpec":
        return cls(
            scales_per_octave=detector.scales_per_octave,
            min_object_height=detector.min_object_height,
            max_object_height=detector.max_object_height,
            window=(training.window_width, training.window_height),
            object_width_frac=detector.object_width_frac,
            object_height_frac=detector.object_height_frac,
        )

    @property
    def object_height_px(self) -> float:
        return self.object_height_frac * self.window[1]

    def object_box(self, window: BoundingBox) -> BoundingBox:
        """Object box centred inside a window box."""
        w = self.object_width_frac * window.w
        h = self.object_height_frac * window.h
        return BoundingBox(window.x + (window.w - w) / 2, window.y + (window.h - h) / 2, w, h)

    def window_box(self, obj: BoundingBox) -> BoundingBox:
        """Window at model aspect around an object box, anchored on its height."""
        h = obj.h / self.object_height_frac
        w = h * self.window[0] / self.window[1]
        cx = obj.x + obj.w / 2
        cy = obj.y + obj.h / 2
        return BoundingBox(cx - w / 2, cy - h / 2, w, h)


def pyramid_scales(spec: PyramidSpec, width: int, height: int) -> List[float]:
    """Scales (largest first) at which the resized image still holds the model window."""
    s_max = spec.object_height_px / spec.min_object_height
    s_min = spec.object_height_px / spec.max_object_height
    win_w, win_h = spec.window
    scales = []
    k = 0
    while True:
        s = s_max * 2.0 ** (-k / spec.scales_per_octave)
        if s < s_min * (1 - 1e-12):
            break
        if round(width * s) < win_w or round(height * s) < win_h:
            break
        scales.append(s)
        k += 1
    return scales


@dataclass(frozen=True, eq=False)
class ScaleScores:
    """Raw window scores at one pyramid level; window (i, j) sits at (j·stride, i·stride) in the resized image."""

    scale: float
    scores: np.ndarray
    stride: int
    ratio_x: float
    ratio_y: float


def _score_scale(
    arr: np.ndarray,
    forest: BoostedForest,
    scale: float,
    stride: int,
    opts: ChannelOptions,
    use_cascade: bool,
    image_id: str,
) -> ScaleScores:
    bank = forest.bank
    height, width = arr.shape[:2]
    new_w, new_h = int(round(width * scale)), int(round(height * scale))
    resized = resize_image(arr, new_w, new_h)
    stack = compute_channels(resized, opts)
    pairs = {(node.feature.channel, node.feature.filter) for node in forest.split_nodes()}
    resp = apply_bank(stack, bank, image_id=image_id, scale=scale, pairs=pairs)

    win_w, win_h = forest.window
    xs = np.arange(0, new_w - win_w + 1, stride)
    ys = np.arange(0, new_h - win_h + 1, stride)
    gy, gx = np.meshgrid(ys // bank.eval_stride_px, xs // bank.eval_stride_px, indexing="ij")
    origins = np.stack([gx.ravel(), gy.ravel()], axis=1)
    scores = forest.score(response_fetch(resp, origins), len(origins), use_cascade=use_cascade)
    return ScaleScores(
        scale=scale,
        scores=scores.reshape(len(ys), len(xs)),
        stride=stride,
        ratio_x=new_w / width,
        ratio_y=new_h / height,
    )


def score_map(
    img,
    forest: BoostedForest,
    spec: PyramidSpec,
    stride: int = 6,
    opts: ChannelOptions = ChannelOptions(),
    use_cascade: bool = False,
    image_id: str = "",
) -> List[ScaleScores]:
    """Every stride-aligned window score at every pyramid level."""
    if forest.bank is None:
        raise InvalidInputError("the forest carries no filter bank")
    if stride % forest.bank.eval_stride_px:
        raise InvalidInputError(
            f"detection stride {stride} is not a multiple of the evaluation stride {forest.bank.eval_stride_px}"
        )
    if tuple(spec.window) != tuple(forest.window):
        raise InvalidInputError(f"pyramid window {spec.window} differs from the model window {forest.window}")
    arr = as_image(img)
    scales = pyramid_scales(spec, arr.shape[1], arr.shape[0])
    if not scales:
        return []

    def run(scale: float) -> ScaleScores:
        return _score_scale(arr, forest, scale, stride, opts, use_cascade, image_id)

    if settings.workers > 1 and len(scales) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(run, scales))
    return [run(s) for s in scales]


def detect(
    img,
    forest: BoostedForest,
    spec: PyramidSpec,
    stride: int = 6,
    score_min: float = -1.0,
    opts: ChannelOptions = ChannelOptions(),
    use_cascade: bool = False,
    image_id: str = "",
) -> List[Detection]:
    """Windows scoring at least `score_min`, mapped to object boxes in image coordinates."""
    win_w, win_h = forest.window
    found = []
    for level in score_map(img, forest, spec, stride, opts, use_cascade, image_id):
        iy, ix = np.nonzero(level.scores >= score_min)
        for i, j in zip(iy.tolist(), ix.tolist()):
            window = BoundingBox(
                j * level.stride / level.ratio_x,
                i * level.stride / level.ratio_y,
                win_w / level.ratio_x,
                win_h / level.ratio_y,
            )
            found.append(
                (
                    -float(level.scores[i, j]),
                    level.scale,
                    i * level.stride,
                    j * level.stride,
                    Detection(spec.object_box(window), float(level.scores[i, j]), level.scale, image_id),
                )
            )
    found.sort(key=lambda item: item[:4])
    logger.debug(f"{image_id or 'image'}: {len(found)} windows above {score_min}")
    return [item[4] for item in found]


def _min_area_overlap(a: BoundingBox, b: BoundingBox) -> float:
    return a.intersection(b) / min(a.area, b.area)


def nms(dets: Sequence[Detection], overlap_max: float = 0.65) -> List[Detection]:
    """Greedy suppression by descending score; overlap is intersection over the smaller area."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    if not order:
        return []
    boxes = np.array([[d.box.x, d.box.y, d.box.x2, d.box.y2] for d in dets])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    order = np.array(order)
    keep: List[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        overlap = inter / np.minimum(areas[i], areas[rest])
        order = rest[overlap <= overlap_max]
    return [dets[i] for i in keep]


def group_by_image(dets: Sequence[Detection]) -> Dict[str, List[Detection]]:
    out: Dict[str, List[Detection]] = {}
    for d in dets:
        out.setdefault(d.image_id, []).append(d)
    return out
