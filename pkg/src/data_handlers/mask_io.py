"""
Blueprint: Data Handlers - Body Masks

Ingestion of person masks as binary PGM (P5, values > 127 are foreground)
or run-length JSON {"h": H, "w": W, "rle": [...]}. Runs are row-major and
alternate background / foreground, starting with background.
"""

import json
import re
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from ..core.exceptions import MaskFormatError
from ..occlusion.visibility import BodyMask
from .feature_io import atomic_write_bytes
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

_PGM_HEADER = re.compile(rb"^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path: Path) -> BodyMask:
    data = Path(path).read_bytes()
    match = _PGM_HEADER.match(data)
    if not match:
        raise MaskFormatError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval > 255:
        raise MaskFormatError(f"{path}: 16-bit PGM is not supported")
    pixels = data[match.end():match.end() + width * height]
    if len(pixels) != width * height:
        raise MaskFormatError(f"{path}: truncated pixel data")
    values = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    return BodyMask(bitmap=values > 127)


def write_pgm(mask: BodyMask, path: Path) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    body = np.where(mask.bitmap, 255, 0).astype(np.uint8).tobytes()
    atomic_write_bytes(Path(path), header + body)


def encode_rle(mask: BodyMask) -> Dict[str, Union[int, List[int]]]:
    flat = mask.bitmap.reshape(-1).astype(np.int8)
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs: List[int] = np.diff(bounds).astype(int).tolist()
    if flat.size and flat[0] == 1:
        runs.insert(0, 0)
    return {"h": mask.height, "w": mask.width, "rle": runs}


def decode_rle(doc: Dict) -> BodyMask:
    try:
        height, width, runs = int(doc["h"]), int(doc["w"]), [int(r) for r in doc["rle"]]
    except (KeyError, TypeError, ValueError) as e:
        raise MaskFormatError(f"RLE mask needs integer 'h', 'w' and 'rle' fields ({e})") from e
    if any(r < 0 for r in runs) or sum(runs) != height * width:
        raise MaskFormatError(f"RLE runs sum to {sum(runs)}, expected {height * width}")
    values = np.repeat(np.arange(len(runs)) % 2 == 1, runs)
    return BodyMask(bitmap=values.reshape(height, width))


def read_mask(path: Union[str, Path]) -> BodyMask:
    """Load a mask, choosing the codec from the suffix"""
    try:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        if path.suffix.lower() == ".json":
            try:
                return decode_rle(json.loads(path.read_text()))
            except json.JSONDecodeError as e:
                raise MaskFormatError(f"{path}: invalid JSON") from e
        return read_pgm(path)

    except Exception as e:
        logger.error(f"Mask loading failed: {str(e)}")
        raise


def write_mask(mask: BodyMask, path: Union[str, Path]) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        atomic_write_bytes(path, json.dumps(encode_rle(mask)).encode("utf-8"))
    else:
        write_pgm(mask, path)
