"""
Blueprint: Core - Domain Types

Per-image part features and the datasets built from them.

Components:
1. Part ordering (global constant)
2. PartFeatureSet
3. Dataset
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import FeatureFileError, MissingLabelError, NonFiniteFeatureError

VISIBILITY_THRESHOLD = 0.5
DEFAULT_NUM_PARTS = 6
SPLITS = ("train", "query", "gallery")

# Horizontal stripes top to bottom, then vertical halves left to right
PART_NAMES: Tuple[str, ...] = ("h1", "h2", "h3", "h4", "v1", "v2")


def part_names(num_parts: int) -> Tuple[str, ...]:
    """Names of the first num_parts parts in canonical order"""
    if num_parts == DEFAULT_NUM_PARTS:
        return PART_NAMES
    return tuple(f"p{i + 1}" for i in range(num_parts))


def binarize_visibility(scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64) >= VISIBILITY_THRESHOLD


@dataclass(frozen=True, eq=False)
class PartFeatureSet:
    """One image: M part vectors of dimension D plus per-part visibility.

    features are stored in float32 (the on-disk precision); numerical
    stages promote to float64.
    """
    image_id: str
    features: np.ndarray
    visibility_scores: np.ndarray
    person_id: Optional[int] = None
    camera_id: Optional[int] = None
    visibility_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValueError(f"features of {self.image_id} must be M x D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise NonFiniteFeatureError(self.image_id)
        scores = np.array(self.visibility_scores, dtype=np.float64).reshape(-1)
        if scores.shape[0] != feats.shape[0]:
            raise ValueError(f"{self.image_id}: {scores.shape[0]} visibility scores for {feats.shape[0]} parts")
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise ValueError(f"{self.image_id}: visibility scores must lie in [0, 1]")
        mask = binarize_visibility(scores)
        feats.setflags(write=False)
        scores.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "visibility_scores", scores)
        object.__setattr__(self, "visibility_mask", mask)

    @property
    def num_parts(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def visible_parts(self) -> List[int]:
        return [int(p) for p in np.flatnonzero(self.visibility_mask)]

    def with_features(self, features: np.ndarray, visibility_scores: Optional[np.ndarray] = None) -> "PartFeatureSet":
        scores = self.visibility_scores if visibility_scores is None else visibility_scores
        return replace(self, features=features, visibility_scores=scores, visibility_mask=None)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.features)))

    def equals(self, other: "PartFeatureSet") -> bool:
        """Field-for-field, bit-exact comparison"""
        return (
            self.image_id == other.image_id
            and self.person_id == other.person_id
            and self.camera_id == other.camera_id
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.visibility_scores, other.visibility_scores)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """A split of PartFeatureSets sharing M and D"""
    items: Tuple[PartFeatureSet, ...]
    split: str = "gallery"
    num_parts: int = DEFAULT_NUM_PARTS
    feature_dim: int = 0
    num_identities: int = field(default=0)

    def __post_init__(self):
        items = tuple(self.items)
        if self.split not in SPLITS:
            raise ValueError(f"Unknown split '{self.split}', expected one of {SPLITS}")
        seen = set()
        for item in items:
            if item.num_parts != self.num_parts or item.dim != self.feature_dim:
                raise FeatureFileError(
                    f"{item.image_id} has shape {item.features.shape}, dataset expects "
                    f"({self.num_parts}, {self.feature_dim})"
                )
            if item.image_id in seen:
                raise FeatureFileError(f"duplicate image_id '{item.image_id}'")
            seen.add(item.image_id)
            if self.split == "train" and item.person_id is None:
                raise MissingLabelError(f"train item '{item.image_id}' has no person_id")
        ids = {item.person_id for item in items if item.person_id is not None}
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "num_identities", len(ids))

    @classmethod
    def from_items(cls, items, split: str = "gallery",
                   num_parts: Optional[int] = None, feature_dim: Optional[int] = None) -> "Dataset":
        items = tuple(items)
        if num_parts is None or feature_dim is None:
            if not items:
                raise ValueError("num_parts and feature_dim are required for an empty dataset")
            num_parts, feature_dim = items[0].features.shape
        return cls(items=items, split=split, num_parts=num_parts, feature_dim=feature_dim)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def image_ids(self) -> List[str]:
        return [item.image_id for item in self.items]

    @property
    def has_labels(self) -> bool:
        return bool(self.items) and all(item.person_id is not None for item in self.items)

    def by_id(self) -> Dict[str, PartFeatureSet]:
        return {item.image_id: item for item in self.items}

    def stacked_features(self) -> np.ndarray:
        """N x M x D float64 array"""
        if not self.items:
            return np.zeros((0, self.num_parts, self.feature_dim))
        return np.stack([item.features for item in self.items]).astype(np.float64)

    def stacked_masks(self) -> np.ndarray:
        if not self.items:
            return np.zeros((0, self.num_parts), dtype=bool)
        return np.stack([item.visibility_mask for item in self.items])

    def person_ids(self) -> np.ndarray:
        return np.array([-1 if item.person_id is None else item.person_id for item in self.items], dtype=np.int64)

    def camera_ids(self) -> np.ndarray:
        return np.array([-1 if item.camera_id is None else item.camera_id for item in self.items], dtype=np.int64)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.split == other.split
            and self.num_parts == other.num_parts
            and self.feature_dim == other.feature_dim
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.items, other.items))
        )

    def with_split(self, split: str) -> "Dataset":
        return Dataset(items=self.items, split=split, num_parts=self.num_parts, feature_dim=self.feature_dim)

    def map_items(self, fn) -> "Dataset":
        items = tuple(fn(item) for item in self.items)
        dim = items[0].dim if items else self.feature_dim
        return Dataset(items=items, split=self.split, num_parts=self.num_parts, feature_dim=dim)
