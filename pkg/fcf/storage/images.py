"""Image files through Pillow: float arrays in [0, 1], RGB or grayscale."""
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from fcf.exceptions import InvalidInputError, ParseError
from fcf.services.channels import as_image

logger = logging.getLogger(__name__)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "F", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except UnidentifiedImageError:
        raise ParseError("not a readable image", path=str(path))
    return arr / 255.0


def image_size(path) -> Tuple[int, int]:
    """(width, height) without decoding the pixels."""
    try:
        with Image.open(path) as im:
            return im.size
    except UnidentifiedImageError:
        raise ParseError("not a readable image", path=str(path))


def to_uint8(img) -> np.ndarray:
    arr = as_image(img)
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img) -> None:
    """PNG or PPM by suffix; values are quantized to 8 bits."""
    path = Path(path)
    if path.suffix.lower() not in (".png", ".ppm", ".pgm"):
        raise InvalidInputError(f"unsupported image format {path.suffix!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
