"""Corpus manifests.

::

    fcf-manifest 1
    id caltech-train
    split train
    image set00/V000/I00029.png
    box 512 180 21 52 0 0
    image set00/V000/I00059.png

Each ``box`` line (``x y w h occlusion ignore``) belongs to the image line
above it. Image paths are relative to the manifest's directory and must not
contain whitespace; the image id is the path without its suffix.
"""
import logging
from pathlib import Path, PurePosixPath
from typing import Iterable, List, Optional, Tuple

from fcf.exceptions import FcfError, ParseError
from fcf.services.data import Corpus, CorpusEntry
from fcf.services.detector import BoundingBox
from fcf.services.evaluation import Annotation
from fcf.storage.banks import _content_lines
from fcf.storage.images import image_size

logger = logging.getLogger(__name__)

MANIFEST_MAGIC = "fcf-manifest 1"
SPLITS = ("train", "val", "test")


def image_id_for(path: str) -> str:
    return str(PurePosixPath(path).with_suffix(""))


def _number(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def dump_manifest(corpus: Corpus) -> str:
    lines = [MANIFEST_MAGIC, f"id {corpus.id}", f"split {corpus.split}"]
    for entry in corpus.entries:
        lines.append(f"image {entry.path}")
        for a in entry.annotations:
            b = a.box
            fields = [b.x, b.y, b.w, b.h, a.occlusion]
            lines.append("box " + " ".join(_number(v) for v in fields) + f" {int(a.ignore)}")
    return "\n".join(lines) + "\n"


def save_manifest(corpus: Corpus, path, header: Iterable[str] = ()) -> None:
    text = "".join(f"# {line}\n" for line in header) + dump_manifest(corpus)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"Saved manifest with {len(corpus)} images to {path}")


def _header_value(lines, pos: int, key: str, path) -> str:
    if pos >= len(lines):
        raise ParseError(f"missing '{key}' line", path=path)
    number, line = lines[pos]
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise ParseError(f"expected '{key} <value>', got {line!r}", path=path, line=number)
    return parts[1]


def _parse_box(parts: List[str], path, number: int) -> Annotation:
    if len(parts) != 7:
        raise ParseError(f"expected 'box x y w h occlusion ignore', got {' '.join(parts)!r}", path=path, line=number)
    try:
        x, y, w, h, occlusion = (float(v) for v in parts[1:6])
        ignore = int(parts[6])
    except ValueError:
        raise ParseError(f"non-numeric box field in {' '.join(parts)!r}", path=path, line=number)
    if ignore not in (0, 1):
        raise ParseError(f"ignore flag must be 0 or 1, got {ignore}", path=path, line=number)
    try:
        return Annotation(box=BoundingBox(x, y, w, h), ignore=bool(ignore), occlusion=occlusion)
    except FcfError as e:
        raise ParseError(str(e), path=path, line=number)


def parse_manifest(text: str, path: Optional[str] = None) -> Tuple[Corpus, List[int]]:
    """Corpus plus the line number of every image line."""
    lines = _content_lines(text)
    if not lines or lines[0][1] != MANIFEST_MAGIC:
        raise ParseError(f"missing '{MANIFEST_MAGIC}' header", path=path, line=lines[0][0] if lines else None)
    corpus_id = _header_value(lines, 1, "id", path)
    split = _header_value(lines, 2, "split", path)
    if split not in SPLITS:
        raise ParseError(f"split must be one of {', '.join(SPLITS)}, got {split!r}", path=path, line=lines[2][0])

    entries: List[Tuple[str, List[Annotation]]] = []
    numbers: List[int] = []
    seen = set()
    for number, line in lines[3:]:
        parts = line.split()
        if parts[0] == "image":
            if len(parts) != 2:
                raise ParseError("expected 'image <relative path>'", path=path, line=number)
            image_id = image_id_for(parts[1])
            if image_id in seen:
                raise ParseError(f"duplicate image {parts[1]!r}", path=path, line=number)
            seen.add(image_id)
            entries.append((parts[1], []))
            numbers.append(number)
        elif parts[0] == "box":
            if not entries:
                raise ParseError("'box' line before any 'image' line", path=path, line=number)
            entries[-1][1].append(_parse_box(parts, path, number))
        else:
            raise ParseError(f"unknown line {line!r}", path=path, line=number)

    corpus = Corpus(
        id=corpus_id,
        split=split,
        entries=tuple(CorpusEntry(image_id_for(p), p, tuple(annos)) for p, annos in entries),
    )
    return corpus, numbers


def _clamped(anno: Annotation, width: int, height: int) -> Annotation:
    b = anno.box
    x0, y0 = min(max(b.x, 0.0), width), min(max(b.y, 0.0), height)
    x1, y1 = min(max(b.x2, 0.0), width), min(max(b.y2, 0.0), height)
    if (x0, y0, x1, y1) == (b.x, b.y, b.x2, b.y2):
        return anno
    if x1 <= x0 or y1 <= y0:
        return Annotation(box=BoundingBox(b.x, b.y, b.w, b.h), ignore=True, occlusion=anno.occlusion)
    return Annotation(box=BoundingBox(x0, y0, x1 - x0, y1 - y0), ignore=anno.ignore, occlusion=anno.occlusion)


def load_corpus(path, subsample: int = 1) -> Corpus:
    """Parse a manifest, check every image exists and clamp boxes to the image bounds.

    With `subsample` k only entries 0, k, 2k, ... are kept.
    """
    path = Path(path)
    corpus, numbers = parse_manifest(path.read_text(encoding="utf-8"), path=str(path))
    if subsample < 1:
        raise ParseError(f"subsample factor must be >= 1, got {subsample}", path=str(path))
    root = path.parent
    entries = []
    for entry, number in list(zip(corpus.entries, numbers))[::subsample]:
        image_path = root / entry.path
        if not image_path.is_file():
            raise ParseError(f"missing image {entry.path}", path=str(path), line=number)
        width, height = image_size(image_path)
        entries.append(
            CorpusEntry(entry.image_id, entry.path, tuple(_clamped(a, width, height) for a in entry.annotations))
        )
    loaded = Corpus(id=corpus.id, split=corpus.split, entries=tuple(entries), root=root)
    logger.info(f"Loaded corpus {loaded.id}: {len(loaded)} images, {loaded.annotation_count} annotations")
    return loaded
