"""Detection files: one ``image_id x y w h score`` line per detection, 6 significant digits."""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from fcf.exceptions import FcfError, ParseError
from fcf.services.detector import BoundingBox, Detection
from fcf.storage.banks import _content_lines
from fcf.utils.numeric import format_sig

logger = logging.getLogger(__name__)

DETECTION_DIGITS = 6


def dump_detections(dets: Iterable[Detection]) -> str:
    lines = []
    for d in dets:
        values = (d.box.x, d.box.y, d.box.w, d.box.h, d.score)
        lines.append(d.image_id + " " + " ".join(format_sig(v, DETECTION_DIGITS) for v in values))
    return "".join(line + "\n" for line in lines)


def save_detections(dets: Iterable[Detection], path, header: Iterable[str] = ()) -> None:
    dets = list(dets)
    text = "".join(f"# {line}\n" for line in header) + dump_detections(dets)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"Wrote {len(dets)} detections to {path}")


def parse_detections(text: str, path: Optional[str] = None) -> Dict[str, List[Detection]]:
    """Detections grouped by image id, in file order."""
    out: Dict[str, List[Detection]] = {}
    for number, line in _content_lines(text):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"expected 'image_id x y w h score', got {line!r}", path=path, line=number)
        try:
            x, y, w, h, score = (float(v) for v in parts[1:])
            det = Detection(box=BoundingBox(x, y, w, h), score=score, image_id=parts[0])
        except ValueError as e:
            raise ParseError(f"bad detection: {e}", path=path, line=number)
        except FcfError as e:
            raise ParseError(str(e), path=path, line=number)
        out.setdefault(parts[0], []).append(det)
    return out


def load_detections(path) -> Dict[str, List[Detection]]:
    dets = parse_detections(Path(path).read_text(encoding="utf-8"), path=str(path))
    logger.info(f"Loaded detections for {len(dets)} images from {path}")
    return dets
