"""
Blueprint: Core - Feature Operations

Normalization and the fixed-order representations every retrieval variant
starts from.

Components:
1. Per-part L2 normalization
2. Baseline representation (concatenation of all parts)
3. Visible-only representation (occluded parts zero-filled)
"""

import numpy as np

from .exceptions import NonFiniteFeatureError
from .types import Dataset, PartFeatureSet
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

_ZERO_NORM = 1e-12


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize the last axis; all-zero rows stay zero"""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    safe = np.where(norms > _ZERO_NORM, norms, 1.0)
    return np.where(norms > _ZERO_NORM, matrix / safe, 0.0)


def l2_normalize_parts(fs: PartFeatureSet) -> PartFeatureSet:
    """
    Normalize every part vector to unit length.

    All-zero parts stay zero and are forced occluded (their visibility score
    drops to 0 so the mask invariant keeps holding).

    Args:
        fs: Image features

    Returns:
        PartFeatureSet: Normalized copy
    """
    feats = np.asarray(fs.features, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise NonFiniteFeatureError(fs.image_id)

    normalized = normalize_rows(feats)
    zero_parts = np.linalg.norm(feats, axis=1) <= _ZERO_NORM
    scores = np.array(fs.visibility_scores, dtype=np.float64)
    if np.any(zero_parts & fs.visibility_mask):
        logger.debug(f"{fs.image_id}: zero part vectors {np.flatnonzero(zero_parts).tolist()} marked occluded")
    scores[zero_parts] = 0.0
    return fs.with_features(normalized.astype(np.float32), scores)


def normalize_dataset(ds: Dataset) -> Dataset:
    return ds.map_items(l2_normalize_parts)


def baseline_representation(fs: PartFeatureSet) -> np.ndarray:
    """Concatenate the M part vectors in canonical part order (M*D vector)"""
    return np.asarray(fs.features, dtype=np.float64).reshape(-1)


def visible_representation(fs: PartFeatureSet) -> np.ndarray:
    """Per-part normalized concatenation with occluded parts zero-filled"""
    feats = normalize_rows(fs.features)
    feats[~fs.visibility_mask] = 0.0
    return feats.reshape(-1)


def concat_normalized(parts: np.ndarray) -> np.ndarray:
    """Final retrieval vector from M reconstructed part vectors"""
    return normalize_rows(parts).reshape(-1)
