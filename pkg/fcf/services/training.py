"""Staged training with hard negative mining.

Stage 0 boosts the first schedule size on every positive window and a
random negative pool. Each later stage runs the current detector over the
training images, keeps the top-scoring windows that stay clear of every
annotation (after NMS), adds them to the negatives and retrains from
scratch at the next schedule size.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from fcf.config import DetectorConfig, TrainingConfig, settings
from fcf.exceptions import InsufficientDataError, InvalidInputError
from fcf.services.channels import ChannelOptions
from fcf.services.data import (
    NEGATIVE,
    Corpus,
    WindowSample,
    extract_features,
    sample_negatives,
    sample_positives,
)
from fcf.services.detector import PyramidSpec, detect, nms
from fcf.services.featuremap import FeatureLayout
from fcf.services.filterbank import FilterBank
from fcf.services.forest import (
    BoostedForest,
    TrainData,
    boost,
    calibrate_cascade,
    initial_weights,
    matrix_fetch,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningOptions:
    initial_negatives: int = 10000
    negatives_per_round: int = 10000
    score_min: float = -1.0
    nms_overlap: float = 0.65
    stride: int = 6
    exclusion_iou: float = 0.1

    @classmethod
    def from_config(cls, training: TrainingConfig, detector: DetectorConfig) -> "MiningOptions":
        return cls(
            initial_negatives=training.initial_negatives,
            negatives_per_round=training.negatives_per_round,
            score_min=training.mining_score_min,
            nms_overlap=detector.nms_overlap,
            stride=detector.stride,
            exclusion_iou=training.exclusion_iou,
        )


@dataclass
class TrainSet:
    """Window samples with their cached float32 features, positives first."""

    positives: List[WindowSample]
    negatives: List[WindowSample]
    features: np.ndarray
    layout: FeatureLayout

    def __post_init__(self):
        if self.features.shape != (len(self.positives) + len(self.negatives), len(self.layout)):
            raise InvalidInputError("feature matrix does not match the samples and layout")

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([np.ones(len(self.positives)), -np.ones(len(self.negatives))])

    @property
    def weights(self) -> np.ndarray:
        """Initial boosting weights: class-balanced, summing to one."""
        w = initial_weights(self.labels)
        return w / w.sum()

    @property
    def positive_features(self) -> np.ndarray:
        return self.features[: len(self.positives)]

    def with_negatives(self, samples: Sequence[WindowSample], features: np.ndarray) -> "TrainSet":
        return TrainSet(
            positives=self.positives,
            negatives=self.negatives + list(samples),
            features=np.concatenate([self.features, features.astype(np.float32)]),
            layout=self.layout,
        )

    def train_data(self) -> TrainData:
        if not self.positives or not self.negatives:
            raise InsufficientDataError(
                f"training needs both classes, got {len(self.positives)} positives and {len(self.negatives)} negatives"
            )
        return TrainData.from_matrix(self.features, self.labels, self.layout.indices)


def build_train_set(
    corpus: Corpus,
    bank: FilterBank,
    positives: Sequence[WindowSample],
    negatives: Sequence[WindowSample],
    window: Tuple[int, int],
    opts: ChannelOptions = ChannelOptions(),
) -> TrainSet:
    layout = FeatureLayout.build(bank, window)
    samples = list(positives) + list(negatives)
    logger.info(f"Extracting {len(layout)} features for {len(samples)} windows")
    features = extract_features(corpus, samples, bank, layout, window, opts)
    return TrainSet(positives=list(positives), negatives=list(negatives), features=features, layout=layout)


def mine_negatives(
    forest: BoostedForest,
    corpus: Corpus,
    spec: PyramidSpec,
    mining: MiningOptions,
    opts: ChannelOptions = ChannelOptions(),
) -> List[WindowSample]:
    """Top-scoring detections that stay clear of every annotation, as negative windows."""

    def run(index: int):
        entry = corpus.entries[index]
        dets = detect(
            corpus.image(entry),
            forest,
            spec,
            stride=mining.stride,
            score_min=mining.score_min,
            opts=opts,
            image_id=entry.image_id,
        )
        kept = nms(dets, mining.nms_overlap)
        return [
            (-d.score, index, rank, d)
            for rank, d in enumerate(kept)
            if all(d.box.iou(a.box) <= mining.exclusion_iou for a in entry.annotations)
        ]

    indices = range(len(corpus.entries))
    if settings.workers > 1 and len(corpus.entries) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            found = [item for part in pool.map(run, indices) for item in part]
    else:
        found = [item for index in indices for item in run(index)]

    found.sort(key=lambda item: item[:3])
    chosen = found[: mining.negatives_per_round]
    if len(chosen) < mining.negatives_per_round:
        logger.warning(f"Mining found {len(chosen)} of {mining.negatives_per_round} requested hard negatives")
    return [WindowSample(d.image_id, spec.window_box(d.box), NEGATIVE) for _, _, _, d in chosen]


def train_staged(
    corpus: Corpus,
    bank: FilterBank,
    schedule: Sequence[int],
    mining: MiningOptions = MiningOptions(),
    spec: PyramidSpec = PyramidSpec(),
    depth: int = 2,
    variant: str = "discrete",
    opts: ChannelOptions = ChannelOptions(),
    seed: int = 0,
    mirror: bool = True,
    cascade: bool = False,
    on_stage: Optional[Callable[[int, BoostedForest], None]] = None,
) -> BoostedForest:
    schedule = list(schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise InvalidInputError(f"schedule must be strictly increasing positive tree counts, got {schedule}")
    if mining.stride % bank.eval_stride_px:
        raise InvalidInputError(
            f"mining stride {mining.stride} is not a multiple of the evaluation stride {bank.eval_stride_px}"
        )

    positives = sample_positives(corpus, spec, mirror=mirror)
    if not positives:
        raise InsufficientDataError("the corpus yields no positive windows")
    negatives = sample_negatives(corpus, mining.initial_negatives, spec, seed=seed, exclusion_iou=mining.exclusion_iou)
    train_set = build_train_set(corpus, bank, positives, negatives, spec.window, opts)

    forest: Optional[BoostedForest] = None
    for stage, n_trees in enumerate(schedule):
        if stage > 0:
            mined = mine_negatives(forest, corpus, spec, mining, opts)
            if mined:
                features = extract_features(corpus, mined, bank, train_set.layout, spec.window, opts)
                train_set = train_set.with_negatives(mined, features)
            logger.info(f"Stage {stage}: mined {len(mined)} hard negatives, {len(train_set.negatives)} in total")
        forest = boost(train_set.train_data(), n_trees, depth=depth, variant=variant, bank=bank, window=spec.window)
        logger.info(
            f"Stage {stage}: trained {len(forest)} trees on {len(train_set.positives)} positives "
            f"and {len(train_set.negatives)} negatives"
        )
        if on_stage is not None:
            on_stage(stage, forest)

    if cascade:
        pos = train_set.positive_features
        forest = calibrate_cascade(
            forest,
            matrix_fetch(pos, {idx: col for col, idx in enumerate(train_set.layout.indices)}),
            len(pos),
        )
    return forest
