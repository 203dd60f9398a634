"""Corpora and window sampling.

A positive window is the model-aspect window around a non-ignore
annotation, anchored on its height and centred. Windows may stick out of
the image by up to a quarter of their size; the missing part is filled by
mirroring the image. Negative windows are drawn uniformly over
(image, pyramid scale, position) and rejected when their object box
overlaps any annotation by more than ``exclusion_iou``.

Window features are computed on a crop that carries a margin around the
window, so channels inside the window match a full-image pass, also for
windows that touch the image edge.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fcf.config import settings
from fcf.exceptions import InsufficientDataError, InvalidInputError
from fcf.services.channels import N_CHANNELS, ChannelOptions, ChannelStack, as_image, compute_channels, sample_bilinear
from fcf.services.detector import BoundingBox, PyramidSpec, pyramid_scales
from fcf.services.evaluation import Annotation
from fcf.services.featuremap import FeatureLayout, apply_bank
from fcf.services.filterbank import PCA_PATCH_PX, FilterBank
from fcf.storage.images import image_size, read_image
from fcf.utils.rng import make_rng

logger = logging.getLogger(__name__)

MAX_PAD_FRAC = 0.25
PROPOSALS_PER_SAMPLE = 20
POSITIVE = 1
NEGATIVE = -1
PATCH_ORIGINS = ("all", "foreground", "background")


@dataclass(frozen=True)
class CorpusEntry:
    image_id: str
    path: str
    annotations: Tuple[Annotation, ...] = ()
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def load(self, root: Optional[Path] = None) -> np.ndarray:
        if self.pixels is not None:
            return self.pixels
        return read_image(Path(root or ".") / self.path)

    @property
    def positives(self) -> List[Annotation]:
        return [a for a in self.annotations if not a.ignore]


@dataclass(frozen=True)
class Corpus:
    id: str
    split: str
    entries: Tuple[CorpusEntry, ...] = ()
    root: Optional[Path] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, image_id: str) -> CorpusEntry:
        for e in self.entries:
            if e.image_id == image_id:
                return e
        raise InvalidInputError(f"corpus {self.id} has no image {image_id!r}")

    def image(self, entry: CorpusEntry) -> np.ndarray:
        return entry.load(self.root)

    @property
    def annotation_count(self) -> int:
        return sum(len(e.annotations) for e in self.entries)

    def subsample(self, k: int) -> "Corpus":
        """Every k-th entry, starting with the first."""
        if k < 1:
            raise InvalidInputError("subsample factor must be >= 1")
        return replace(self, entries=self.entries[::k])


@dataclass(frozen=True, eq=False)
class WindowSample:
    image_id: str
    window: BoundingBox
    label: int
    mirrored: bool = False


def crop_window(img, box: BoundingBox, out_w: int, out_h: int, margin: int = 0) -> np.ndarray:
    """Bilinear resample of `box` onto out_w x out_h pixels plus `margin` on every side."""
    arr = as_image(img)
    xs = box.x + (np.arange(-margin, out_w + margin) + 0.5) * (box.w / out_w) - 0.5
    ys = box.y + (np.arange(-margin, out_h + margin) + 0.5) * (box.h / out_h) - 0.5
    return sample_bilinear(arr, ys, xs)


def _fits_with_padding(box: BoundingBox, width: int, height: int, pad_frac: float) -> bool:
    return (
        max(0.0, -box.x, box.x2 - width) <= pad_frac * box.w
        and max(0.0, -box.y, box.y2 - height) <= pad_frac * box.h
    )


def _entry_size(corpus: Corpus, entry: CorpusEntry) -> Tuple[int, int]:
    if entry.pixels is not None:
        return entry.pixels.shape[1], entry.pixels.shape[0]
    return image_size(Path(corpus.root or ".") / entry.path)


def sample_positives(
    corpus: Corpus,
    spec: PyramidSpec,
    mirror: bool = True,
    pad_frac: float = MAX_PAD_FRAC,
) -> List[WindowSample]:
    """One window per non-ignore annotation, plus its mirror image when `mirror` is set."""
    samples: List[WindowSample] = []
    skipped = 0
    for entry in corpus.entries:
        width, height = _entry_size(corpus, entry)
        for anno in entry.positives:
            window = spec.window_box(anno.box)
            if not _fits_with_padding(window, width, height, pad_frac):
                skipped += 1
                logger.debug(f"{entry.image_id}: positive at ({anno.box.x:.1f}, {anno.box.y:.1f}) is too close to the border")
                continue
            samples.append(WindowSample(entry.image_id, window, POSITIVE))
            if mirror:
                samples.append(WindowSample(entry.image_id, window, POSITIVE, mirrored=True))
    if skipped:
        logger.warning(f"Skipped {skipped} positives beyond the {pad_frac:.0%} padding limit")
    logger.info(f"Sampled {len(samples)} positive windows from {len(corpus)} images")
    return samples


def sample_negatives(
    corpus: Corpus,
    n: int,
    spec: PyramidSpec,
    seed: int = 0,
    exclusion_iou: float = 0.1,
    purpose: str = "data.negatives",
) -> List[WindowSample]:
    """`n` random windows whose object box stays clear of every annotation."""
    if n <= 0 or not corpus.entries:
        return []
    rng = make_rng(seed, purpose)
    sizes = [_entry_size(corpus, e) for e in corpus.entries]
    scales = [pyramid_scales(spec, w, h) for w, h in sizes]
    usable = [i for i, s in enumerate(scales) if s]
    if not usable:
        logger.warning("No corpus image holds the model window at any scale")
        return []

    win_w, win_h = spec.window
    samples: List[WindowSample] = []
    for _ in range(PROPOSALS_PER_SAMPLE * n + 100):
        if len(samples) == n:
            break
        i = usable[int(rng.integers(len(usable)))]
        s = scales[i][int(rng.integers(len(scales[i])))]
        w, h = win_w / s, win_h / s
        width, height = sizes[i]
        window = BoundingBox(rng.uniform(0, max(width - w, 0)), rng.uniform(0, max(height - h, 0)), w, h)
        obj = spec.object_box(window)
        if any(obj.iou(a.box) > exclusion_iou for a in corpus.entries[i].annotations):
            continue
        samples.append(WindowSample(corpus.entries[i].image_id, window, NEGATIVE))
    if len(samples) < n:
        logger.warning(f"Sampled only {len(samples)} of {n} negative windows")
    return samples


def window_margin(bank: FilterBank) -> int:
    return max(bank.cell_px, 2)


def window_stack(
    img,
    sample: WindowSample,
    window: Tuple[int, int],
    margin: int,
    opts: ChannelOptions = ChannelOptions(),
) -> ChannelStack:
    """Channels of one window resampled to model size, margin cropped away."""
    win_w, win_h = window
    patch = crop_window(img, sample.window, win_w, win_h, margin)
    if sample.mirrored:
        patch = patch[:, ::-1]
    stack = compute_channels(patch, opts)
    return ChannelStack(data=np.ascontiguousarray(stack.data[:, margin:margin + win_h, margin:margin + win_w]))


def extract_features(
    corpus: Corpus,
    samples: Sequence[WindowSample],
    bank: FilterBank,
    layout: FeatureLayout,
    window: Tuple[int, int],
    opts: ChannelOptions = ChannelOptions(),
) -> np.ndarray:
    """float32 feature matrix (n_samples, n_features) in `layout` column order."""
    out = np.empty((len(samples), len(layout)), dtype=np.float32)
    by_image: Dict[str, List[int]] = {}
    for k, s in enumerate(samples):
        by_image.setdefault(s.image_id, []).append(k)
    margin = window_margin(bank)
    origin = np.zeros((1, 2), dtype=np.int64)

    def run(image_id: str) -> None:
        img = corpus.image(corpus.entry(image_id))
        for k in by_image[image_id]:
            stack = window_stack(img, samples[k], window, margin, opts)
            out[k] = layout.gather(apply_bank(stack, bank), origin)[0]

    if settings.workers > 1 and len(by_image) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            list(pool.map(run, by_image))
    else:
        for image_id in by_image:
            run(image_id)
    return out


def _patch_positions(
    rng: np.random.Generator,
    count: int,
    origin: str,
    entry: CorpusEntry,
    width: int,
    height: int,
    patch_px: int,
) -> List[Tuple[int, int]]:
    positions: List[Tuple[int, int]] = []
    if origin == "all":
        for _ in range(count):
            positions.append((int(rng.integers(0, width - patch_px + 1)), int(rng.integers(0, height - patch_px + 1))))
    elif origin == "foreground":
        boxes = _foreground_boxes(entry, width, height, patch_px)
        for _ in range(count):
            x0, y0, x1, y1 = boxes[int(rng.integers(len(boxes)))]
            positions.append((int(rng.integers(x0, x1 - patch_px + 1)), int(rng.integers(y0, y1 - patch_px + 1))))
    else:
        boxes = [a.box for a in entry.annotations]
        for _ in range(PROPOSALS_PER_SAMPLE * count):
            if len(positions) == count:
                break
            x = int(rng.integers(0, width - patch_px + 1))
            y = int(rng.integers(0, height - patch_px + 1))
            patch = BoundingBox(x, y, patch_px, patch_px)
            if all(patch.intersection(b) == 0 for b in boxes):
                positions.append((x, y))
    return positions


def _foreground_boxes(entry: CorpusEntry, width: int, height: int, patch_px: int) -> List[Tuple[int, int, int, int]]:
    """Integer pixel extents of the annotations that can hold a patch."""
    out = []
    for a in entry.positives:
        x0 = max(int(np.ceil(a.box.x)), 0)
        y0 = max(int(np.ceil(a.box.y)), 0)
        x1 = min(int(np.floor(a.box.x2)), width)
        y1 = min(int(np.floor(a.box.y2)), height)
        if x1 - x0 >= patch_px and y1 - y0 >= patch_px:
            out.append((x0, y0, x1, y1))
    return out


def extract_patches(
    corpus: Corpus,
    n: int,
    origin: str = "all",
    seed: int = 0,
    patch_px: int = PCA_PATCH_PX,
    opts: ChannelOptions = ChannelOptions(),
) -> Dict[int, np.ndarray]:
    """Up to `n` patch_px x patch_px patches per channel, cut at shared positions.

    "foreground" restricts patches to non-ignore annotation boxes,
    "background" to pixels outside every annotation, "all" to none.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if origin not in PATCH_ORIGINS:
        raise InvalidInputError(f"unknown patch origin {origin!r}")

    sizes = [_entry_size(corpus, e) for e in corpus.entries]
    eligible = [i for i, (w, h) in enumerate(sizes) if w >= patch_px and h >= patch_px]
    if origin == "foreground":
        eligible = [i for i in eligible if _foreground_boxes(corpus.entries[i], *sizes[i], patch_px)]
        if not eligible:
            raise InsufficientDataError("no annotation box is large enough for foreground patches")
    if not eligible:
        raise InsufficientDataError("no corpus image is large enough for patches")

    rng = make_rng(seed, f"data.patches.{origin}")
    picks = np.bincount(rng.integers(len(eligible), size=n), minlength=len(eligible))

    def run(k: int) -> np.ndarray:
        i = eligible[k]
        entry = corpus.entries[i]
        width, height = sizes[i]
        positions = _patch_positions(
            make_rng(seed, f"data.patches.{origin}", i + 1), int(picks[k]), origin, entry, width, height, patch_px
        )
        if not positions:
            return np.zeros((N_CHANNELS, 0, patch_px, patch_px))
        stack = compute_channels(corpus.image(entry), opts)
        return np.stack(
            [stack.data[:, y:y + patch_px, x:x + patch_px] for x, y in positions], axis=1
        )

    jobs = [k for k in range(len(eligible)) if picks[k]]
    if settings.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(k) for k in jobs]
    patches = np.concatenate(parts, axis=1)
    if patches.shape[1] < n:
        logger.warning(f"Extracted {patches.shape[1]} of {n} {origin} patches")
    return {channel: patches[channel] for channel in range(N_CHANNELS)}
