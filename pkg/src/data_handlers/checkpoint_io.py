"""
Blueprint: Data Handlers - Parameter Checkpoints

Binary containers for trained parameters: an ASCII header line, one JSON line
(label ids, aggregation mode), then raw little-endian f32 payload.

  OCCENC1 <M> <D_raw> <D> <num_ids>   per part: projection (D_raw x D), classifier (num_ids x D)
  OCCGNN1 <M> <D> <T> <num_ids>       per part: per layer W (D x D), V (D), b (1); then C (num_ids x D)
"""

import json
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..core.exceptions import CheckpointError
from ..encoder.trainer import EncoderParams
from ..orgnn.graph import AggregationMode
from ..orgnn.model import ORGNNParams
from .feature_io import atomic_write_bytes
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

ENCODER_MAGIC = "OCCENC1"
ORGNN_MAGIC = "OCCGNN1"
_F32 = np.dtype("<f4")


def _f32(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=_F32).tobytes()


def _split_header(data: bytes, magic: str, path: Path) -> Tuple[List[int], dict, int]:
    first = data.find(b"\n")
    second = data.find(b"\n", first + 1) if first >= 0 else -1
    if first < 0 or second < 0:
        raise CheckpointError(f"{path}: missing header")
    tokens = data[:first].decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != magic:
        found = tokens[0] if tokens else "nothing"
        raise CheckpointError(f"{path}: expected a {magic} checkpoint, found {found}")
    try:
        dims = [int(t) for t in tokens[1:]]
        meta = json.loads(data[first + 1:second].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: malformed header ({e})") from e
    if len(dims) != 4 or min(dims) < 1:
        raise CheckpointError(f"{path}: header needs four positive integers, got {tokens[1:]}")
    return dims, meta, second + 1


def _payload(data: bytes, offset: int, expected: int, path: Path) -> np.ndarray:
    body = data[offset:]
    if len(body) != expected * _F32.itemsize:
        raise CheckpointError(f"{path}: payload holds {len(body)} bytes, header implies {expected * _F32.itemsize}")
    return np.frombuffer(body, dtype=_F32).astype(np.float64)


def _label_ids(meta: dict, num_ids: int, path: Path) -> Tuple[int, ...]:
    label_ids = tuple(int(i) for i in meta.get("label_ids", []))
    if len(label_ids) != num_ids:
        raise CheckpointError(f"{path}: {len(label_ids)} label ids for num_ids={num_ids}")
    return label_ids


def save_encoder(params: EncoderParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    m, d_raw, d = params.projections.shape
    chunks = [f"{ENCODER_MAGIC} {m} {d_raw} {d} {len(params.label_ids)}\n".encode("ascii"),
              json.dumps({"label_ids": list(params.label_ids)}).encode("utf-8") + b"\n"]
    for p in range(m):
        chunks.append(_f32(params.projections[p]))
        chunks.append(_f32(params.classifiers[p]))
    atomic_write_bytes(path, b"".join(chunks))
    logger.debug(f"Saved encoder checkpoint to {path}")
    return path


def load_encoder(path: Union[str, Path]) -> EncoderParams:
    """Read an OCCENC1 checkpoint"""
    try:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        data = path.read_bytes()
        (m, d_raw, d, num_ids), meta, offset = _split_header(data, ENCODER_MAGIC, path)
        label_ids = _label_ids(meta, num_ids, path)
        per_part = d_raw * d + num_ids * d
        flat = _payload(data, offset, m * per_part, path).reshape(m, per_part)
        projections = flat[:, :d_raw * d].reshape(m, d_raw, d)
        classifiers = flat[:, d_raw * d:].reshape(m, num_ids, d)
        return EncoderParams(projections.copy(), classifiers.copy(), label_ids)

    except Exception as e:
        logger.error(f"Encoder checkpoint loading failed: {str(e)}")
        raise


def save_orgnn(params: ORGNNParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    m, t, d = params.num_parts, params.num_layers, params.dim
    meta = {"label_ids": list(params.label_ids), "mode": AggregationMode(params.mode).value}
    chunks = [f"{ORGNN_MAGIC} {m} {d} {t} {params.num_ids}\n".encode("ascii"),
              json.dumps(meta).encode("utf-8") + b"\n"]
    for k in range(m):
        for layer in range(t):
            chunks.append(_f32(params.W[k, layer]))
            chunks.append(_f32(params.V[k, layer]))
            chunks.append(_f32(params.b[k, layer:layer + 1]))
        chunks.append(_f32(params.C[k]))
    atomic_write_bytes(path, b"".join(chunks))
    logger.debug(f"Saved graph network checkpoint to {path}")
    return path


def load_orgnn(path: Union[str, Path]) -> ORGNNParams:
    """Read an OCCGNN1 checkpoint"""
    try:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        data = path.read_bytes()
        (m, d, t, num_ids), meta, offset = _split_header(data, ORGNN_MAGIC, path)
        label_ids = _label_ids(meta, num_ids, path)
        try:
            mode = AggregationMode(meta.get("mode", AggregationMode.ORGNN.value))
        except ValueError as e:
            raise CheckpointError(f"{path}: unknown aggregation mode {meta.get('mode')!r}") from e
        layer_size = d * d + d + 1
        per_part = t * layer_size + num_ids * d
        flat = _payload(data, offset, m * per_part, path).reshape(m, per_part)
        layers = flat[:, :t * layer_size].reshape(m, t, layer_size)
        W = layers[:, :, :d * d].reshape(m, t, d, d).copy()
        V = layers[:, :, d * d:d * d + d].copy()
        b = layers[:, :, -1].copy()
        C = flat[:, t * layer_size:].reshape(m, num_ids, d).copy()
        if not all(np.all(np.isfinite(x)) for x in (W, V, b, C)):
            raise CheckpointError(f"{path}: non-finite parameters")
        return ORGNNParams(W, V, b, C, label_ids, mode)

    except Exception as e:
        logger.error(f"Graph network checkpoint loading failed: {str(e)}")
        raise
