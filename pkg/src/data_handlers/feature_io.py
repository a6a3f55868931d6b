"""
Blueprint: Data Handlers - Feature Files

This module handles loading and saving of part-feature datasets in the
OCCREC1 container (text header, JSON record lines, raw little-endian f32
payloads) and its pure-JSON variant for small fixtures.

Key Components:
1. Format dispatch by suffix
2. Binary reader / writer
3. JSON reader / writer
4. Atomic writes (no partial files, no partial datasets)
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..core.exceptions import FeatureFileError
from ..core.types import SPLITS, Dataset, PartFeatureSet
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

FEATURE_MAGIC = "OCCREC1"
_F32 = np.dtype("<f4")


def infer_split(path: Path) -> str:
    stem = path.stem.lower()
    return stem if stem in SPLITS else "gallery"


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write to a temp file in the same directory, then rename over the target"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _record_meta(item: PartFeatureSet) -> Dict[str, Any]:
    return {
        "image_id": item.image_id,
        "person_id": item.person_id,
        "camera_id": item.camera_id,
        "visibility": [float(s) for s in item.visibility_scores],
    }


def _item_from_meta(meta: Dict[str, Any], features: np.ndarray, num_parts: int) -> PartFeatureSet:
    try:
        image_id = meta["image_id"]
        visibility = meta["visibility"]
    except (KeyError, TypeError) as e:
        raise FeatureFileError(f"record is missing field {e}") from e
    if not isinstance(image_id, str):
        raise FeatureFileError(f"image_id must be a string, got {image_id!r}")
    if len(visibility) != num_parts:
        raise FeatureFileError(f"{image_id}: {len(visibility)} visibility values, header says M={num_parts}")
    person_id = meta.get("person_id")
    camera_id = meta.get("camera_id")
    try:
        return PartFeatureSet(
            image_id=image_id,
            features=features,
            visibility_scores=np.asarray(visibility, dtype=np.float64),
            person_id=None if person_id is None else int(person_id),
            camera_id=None if camera_id is None else int(camera_id),
        )
    except FeatureFileError:
        raise
    except ValueError as e:
        raise FeatureFileError(str(e)) from e


class FeatureFileHandler:
    """Reads and writes part-feature datasets"""

    def __init__(self):
        self.readers: Dict[str, Callable[..., Dataset]] = {
            '.json': self._read_json,
        }
        self.writers: Dict[str, Callable[[Dataset, Path], None]] = {
            '.json': self._write_json,
        }

    def read(self, file_path: Union[str, Path], split: Optional[str] = None,
             expect_shape: Optional[Tuple[int, int]] = None) -> Dataset:
        """
        Load a dataset

        Args:
            file_path: Feature file (binary unless the suffix is .json)
            split: Split name; inferred from the file stem when omitted
            expect_shape: Optional (M, D) the header must match

        Returns:
            Dataset: Fully parsed dataset (nothing is returned on error)
        """
        try:
            path = Path(file_path)
            if not path.exists():
                raise FileNotFoundError(f"File not found: {file_path}")
            reader = self.readers.get(path.suffix.lower(), self._read_binary)
            dataset = reader(path, split or infer_split(path))
            if expect_shape is not None and (dataset.num_parts, dataset.feature_dim) != tuple(expect_shape):
                raise FeatureFileError(
                    f"{path}: header M={dataset.num_parts} D={dataset.feature_dim}, expected "
                    f"M={expect_shape[0]} D={expect_shape[1]}"
                )
            logger.debug(f"Loaded {len(dataset)} records from {path}")
            return dataset

        except Exception as e:
            logger.error(f"Feature file loading failed: {str(e)}")
            raise

    def write(self, dataset: Dataset, file_path: Union[str, Path]) -> Path:
        try:
            path = Path(file_path)
            writer = self.writers.get(path.suffix.lower(), self._write_binary)
            writer(dataset, path)
            logger.debug(f"Wrote {len(dataset)} records to {path}")
            return path

        except Exception as e:
            logger.error(f"Feature file writing failed: {str(e)}")
            raise

    def _read_binary(self, path: Path, split: str) -> Dataset:
        data = path.read_bytes()
        end = data.find(b"\n")
        if end < 0:
            raise FeatureFileError(f"{path}: missing header line")
        tokens = data[:end].decode("ascii", errors="replace").split()
        if len(tokens) != 5 or tokens[0] != FEATURE_MAGIC:
            raise FeatureFileError(f"{path}: bad header, expected '{FEATURE_MAGIC} <M> <D> <count> <has_labels>'")
        try:
            num_parts, dim, count, has_labels = (int(t) for t in tokens[1:])
        except ValueError as e:
            raise FeatureFileError(f"{path}: non-integer header field") from e
        if num_parts < 1 or dim < 1 or count < 0 or has_labels not in (0, 1):
            raise FeatureFileError(f"{path}: invalid header values {tokens[1:]}")

        payload_size = num_parts * dim * _F32.itemsize
        pos = end + 1
        items: List[PartFeatureSet] = []
        for index in range(count):
            line_end = data.find(b"\n", pos)
            if line_end < 0:
                raise FeatureFileError(f"{path}: truncated at record {index} of {count}")
            try:
                meta = json.loads(data[pos:line_end].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise FeatureFileError(f"{path}: record {index} has invalid JSON metadata") from e
            pos = line_end + 1
            chunk = data[pos:pos + payload_size]
            if len(chunk) != payload_size:
                raise FeatureFileError(f"{path}: truncated payload in record {index} of {count}")
            pos += payload_size
            features = np.frombuffer(chunk, dtype=_F32).reshape(num_parts, dim)
            item = _item_from_meta(meta, features, num_parts)
            if has_labels and item.person_id is None:
                raise FeatureFileError(f"{path}: header declares labels but '{item.image_id}' has none")
            items.append(item)
        if pos != len(data):
            raise FeatureFileError(f"{path}: {len(data) - pos} trailing bytes after {count} records")
        return Dataset(items=tuple(items), split=split, num_parts=num_parts, feature_dim=dim)

    def _write_binary(self, dataset: Dataset, path: Path) -> None:
        has_labels = 1 if dataset.has_labels else 0
        chunks = [f"{FEATURE_MAGIC} {dataset.num_parts} {dataset.feature_dim} {len(dataset)} {has_labels}\n".encode("ascii")]
        for item in dataset:
            chunks.append(json.dumps(_record_meta(item), separators=(",", ":")).encode("utf-8") + b"\n")
            chunks.append(np.ascontiguousarray(item.features, dtype=_F32).tobytes())
        atomic_write_bytes(path, b"".join(chunks))

    def _read_json(self, path: Path, split: str) -> Dataset:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise FeatureFileError(f"{path}: invalid JSON ({e.msg})") from e
        if not isinstance(doc, dict) or doc.get("format") != FEATURE_MAGIC:
            raise FeatureFileError(f"{path}: not an {FEATURE_MAGIC} JSON feature file")
        num_parts, dim, records = int(doc["M"]), int(doc["D"]), doc.get("items", [])
        if int(doc.get("count", len(records))) != len(records):
            raise FeatureFileError(f"{path}: count {doc.get('count')} but {len(records)} items")
        items = []
        for record in records:
            features = np.asarray(record.get("features", []), dtype=np.float32)
            if features.shape != (num_parts, dim):
                raise FeatureFileError(f"{path}: {record.get('image_id')} features shape {features.shape}")
            items.append(_item_from_meta(record, features, num_parts))
        return Dataset(items=tuple(items), split=split, num_parts=num_parts, feature_dim=dim)

    def _write_json(self, dataset: Dataset, path: Path) -> None:
        doc = {
            "format": FEATURE_MAGIC,
            "M": dataset.num_parts,
            "D": dataset.feature_dim,
            "count": len(dataset),
            "has_labels": dataset.has_labels,
            "items": [
                {**_record_meta(item), "features": item.features.astype(np.float64).tolist()}
                for item in dataset
            ],
        }
        atomic_write_bytes(path, json.dumps(doc).encode("utf-8"))


_default_handler = FeatureFileHandler()


def read_feature_file(path: Union[str, Path], split: Optional[str] = None,
                      expect_shape: Optional[Tuple[int, int]] = None) -> Dataset:
    return _default_handler.read(path, split=split, expect_shape=expect_shape)


def write_feature_file(dataset: Dataset, path: Union[str, Path]) -> Path:
    return _default_handler.write(dataset, path)
