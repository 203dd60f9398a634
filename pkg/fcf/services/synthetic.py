"""Synthetic pedestrian-like corpora for desk-scale runs.

A target is a filled rounded-rectangle torso under a disc head, drawn in a
warm colour on a cool, smoothly shaded background with noise. Distractors
are plain rectangles and discs in background-like colours, so colour and
oriented gradients both matter. An occluded target has its lower part
covered by a background-coloured block; the covered fraction becomes the
annotation's occlusion.

Pixels are quantized to 8 bits, so a corpus rendered in memory equals the
one read back from its PNG files.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from fcf.config import SynthConfig
from fcf.exceptions import InvalidInputError
from fcf.services.data import Corpus, CorpusEntry
from fcf.services.detector import BoundingBox
from fcf.services.evaluation import Annotation
from fcf.utils.rng import make_rng

logger = logging.getLogger(__name__)

PLACEMENT_ATTEMPTS = 50
TARGET_COLOUR = np.array([0.75, 0.3, 0.2])
HEAD_FRAC = 0.2


@dataclass(frozen=True)
class SynthSpec:
    width: int = 256
    height: int = 192
    n_images: int = 300
    targets_min: int = 1
    targets_max: int = 3
    min_height: float = 100.0
    max_height: float = 160.0
    aspect: float = 0.25
    noise: float = 0.03
    distractors: int = 4
    occlusion_prob: float = 0.1

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise InvalidInputError("synthetic images must be at least 3x3")
        if self.n_images < 0 or not 0 <= self.targets_min <= self.targets_max:
            raise InvalidInputError("need n_images >= 0 and 0 <= targets_min <= targets_max")
        if not 0 < self.min_height <= self.max_height:
            raise InvalidInputError("target heights must satisfy 0 < min <= max")
        if self.max_height > self.height or self.max_height * self.aspect > self.width:
            raise InvalidInputError("the tallest target does not fit in the image")
        if not 0 <= self.occlusion_prob <= 1:
            raise InvalidInputError("occlusion_prob must lie in [0, 1]")

    @classmethod
    def from_config(cls, config: SynthConfig, n_images: Optional[int] = None) -> "SynthSpec":
        return cls(
            width=config.width,
            height=config.height,
            n_images=config.n_images if n_images is None else n_images,
            targets_min=config.targets_min,
            targets_max=config.targets_max,
            min_height=config.min_height,
            max_height=config.max_height,
            aspect=config.aspect,
            noise=config.noise,
            distractors=config.distractors,
            occlusion_prob=config.occlusion_prob,
        )


def _background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    base = np.array([0.35, 0.45, 0.55]) + rng.uniform(-0.1, 0.1, size=3)
    tilt = rng.uniform(-0.15, 0.15, size=(2, 3))
    ys = np.linspace(0.0, 1.0, spec.height)[:, None, None]
    xs = np.linspace(0.0, 1.0, spec.width)[None, :, None]
    return np.clip(base + tilt[0] * ys + tilt[1] * xs, 0.0, 1.0) * np.ones((spec.height, spec.width, 3))


def _mask(size: Tuple[int, int], draw) -> np.ndarray:
    canvas = Image.new("L", size, 0)
    draw(ImageDraw.Draw(canvas))
    return np.asarray(canvas, dtype=np.float64) > 0


def _paint(img: np.ndarray, mask: np.ndarray, colour: np.ndarray) -> None:
    img[mask] = colour


def _draw_distractor(img: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> None:
    w = float(rng.uniform(8, spec.width / 3))
    h = float(rng.uniform(8, spec.height / 3))
    x = float(rng.uniform(0, spec.width - w))
    y = float(rng.uniform(0, spec.height - h))
    colour = np.clip(np.array([0.3, 0.45, 0.6]) + rng.uniform(-0.25, 0.25, size=3), 0, 1)
    if rng.random() < 0.5:
        mask = _mask((spec.width, spec.height), lambda d: d.rectangle([x, y, x + w, y + h], fill=255))
    else:
        r = min(w, h) / 2
        mask = _mask((spec.width, spec.height), lambda d: d.ellipse([x, y, x + 2 * r, y + 2 * r], fill=255))
    _paint(img, mask, colour)


def target_mask(spec: SynthSpec, box: BoundingBox) -> np.ndarray:
    """Pixels covered by a target whose annotation is `box`."""
    head = HEAD_FRAC * box.h
    radius = min(head / 2, box.w / 2)
    cx = box.x + box.w / 2

    def draw(d: ImageDraw.ImageDraw) -> None:
        d.ellipse([cx - radius, box.y, cx + radius, box.y + 2 * radius], fill=255)
        d.rounded_rectangle(
            [box.x, box.y + head, box.x2 - 1, box.y2 - 1],
            radius=max(int(box.w / 4), 1),
            fill=255,
        )

    return _mask((spec.width, spec.height), draw)


def _place(spec: SynthSpec, rng: np.random.Generator, taken: List[BoundingBox]) -> Optional[BoundingBox]:
    for _ in range(PLACEMENT_ATTEMPTS):
        h = float(rng.uniform(spec.min_height, spec.max_height))
        w = h * spec.aspect
        box = BoundingBox(
            float(np.floor(rng.uniform(0, spec.width - w))),
            float(np.floor(rng.uniform(0, spec.height - h))),
            w,
            h,
        )
        if all(box.intersection(other) == 0 for other in taken):
            return box
    return None


def render_image(spec: SynthSpec, seed: int, index: int, split: str = "train") -> Tuple[np.ndarray, List[Annotation]]:
    rng = make_rng(seed, f"synthetic.{split}", index)
    img = _background(spec, rng)
    for _ in range(spec.distractors):
        _draw_distractor(img, spec, rng)

    annos: List[Annotation] = []
    taken: List[BoundingBox] = []
    wanted = int(rng.integers(spec.targets_min, spec.targets_max + 1))
    for _ in range(wanted):
        box = _place(spec, rng, taken)
        if box is None:
            logger.warning(f"{split} image {index}: placed {len(taken)} of {wanted} targets")
            break
        taken.append(box)
        colour = np.clip(TARGET_COLOUR + rng.uniform(-0.1, 0.1, size=3), 0, 1)
        _paint(img, target_mask(spec, box), colour)

        occlusion = 0.0
        if rng.random() < spec.occlusion_prob:
            occlusion = float(np.round(rng.uniform(0.1, 0.6), 2))
            top = box.y2 - occlusion * box.h
            block = _mask(
                (spec.width, spec.height),
                lambda d: d.rectangle([box.x - 2, top, box.x2 + 2, box.y2 + 2], fill=255),
            )
            _paint(img, block, np.clip(np.array([0.35, 0.45, 0.55]) + rng.uniform(-0.1, 0.1, size=3), 0, 1))
        annos.append(Annotation(box=box, occlusion=occlusion))

    img = img + rng.normal(0.0, spec.noise, size=img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img, annos


def make_synthetic(spec: SynthSpec, seed: int = 0, split: str = "train") -> Corpus:
    """An in-memory corpus; every image has its own PRNG stream."""
    entries = []
    for index in range(spec.n_images):
        img, annos = render_image(spec, seed, index, split)
        image_id = f"{split}/{index:05d}"
        entries.append(CorpusEntry(image_id=image_id, path=f"{image_id}.png", annotations=tuple(annos), pixels=img))
    logger.info(f"Rendered {spec.n_images} synthetic {split} images with {sum(len(e.annotations) for e in entries)} targets")
    return Corpus(id=f"synth-{split}-{seed}", split=split, entries=tuple(entries))


def save_synthetic(corpus: Corpus, out_dir, header=()) -> Path:
    """Write the images as PNG next to a manifest; returns the manifest path."""
    from fcf.storage.images import write_image
    from fcf.storage.manifests import save_manifest

    out_dir = Path(out_dir)
    for entry in corpus.entries:
        write_image(out_dir / entry.path, entry.pixels)
    manifest = out_dir / f"{corpus.split}.manifest"
    save_manifest(corpus, manifest, header=header)
    return manifest
