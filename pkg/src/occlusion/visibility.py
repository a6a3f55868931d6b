"""
Blueprint: Occlusion - Visibility Estimation

Mask-based per-part occlusion state m(I), replacing a learned estimator with
a deterministic coverage rule while keeping its output contract: one score per
part in [0, 1], binarized at 0.5.

Components:
1. BodyMask / PartLayout / OcclusionState
2. Coverage-based estimate_visibility
3. Binary cross-entropy loss (for training a learned visibility head)
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core.exceptions import MaskFormatError
from ..core.types import VISIBILITY_THRESHOLD
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

BCE_EPS = 1e-7

# (row_start, row_stop, col_start, col_stop)
Region = Tuple[int, int, int, int]


@dataclass(frozen=True, eq=False)
class BodyMask:
    """H x W boolean bitmap, True = person foreground"""
    bitmap: np.ndarray

    def __post_init__(self):
        bitmap = np.array(self.bitmap, dtype=bool)
        if bitmap.ndim != 2 or bitmap.size == 0:
            raise MaskFormatError(f"mask must be a non-empty 2-D bitmap, got shape {bitmap.shape}")
        bitmap.setflags(write=False)
        object.__setattr__(self, "bitmap", bitmap)

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]


def _split_bounds(length: int, pieces: int) -> List[Tuple[int, int]]:
    edges = np.linspace(0, length, pieces + 1).round().astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(pieces)]


@dataclass(frozen=True)
class PartLayout:
    """Part regions over an H x W frame: horizontal stripes then vertical stripes"""
    height: int
    width: int
    num_horizontal: int = 4
    num_vertical: int = 2
    regions: Tuple[Region, ...] = field(default=())

    def __post_init__(self):
        if self.height < self.num_horizontal or self.width < self.num_vertical:
            raise MaskFormatError(
                f"{self.height}x{self.width} frame is too small for "
                f"{self.num_horizontal} horizontal / {self.num_vertical} vertical parts"
            )
        rows = [(r0, r1, 0, self.width) for r0, r1 in _split_bounds(self.height, self.num_horizontal)]
        cols = [(0, self.height, c0, c1) for c0, c1 in _split_bounds(self.width, self.num_vertical)]
        object.__setattr__(self, "regions", tuple(rows + cols))

    @classmethod
    def for_mask(cls, mask: BodyMask, num_horizontal: int = 4, num_vertical: int = 2) -> "PartLayout":
        return cls(mask.height, mask.width, num_horizontal, num_vertical)

    @property
    def num_parts(self) -> int:
        return len(self.regions)

    def area(self, part: int) -> int:
        r0, r1, c0, c1 = self.regions[part]
        return (r1 - r0) * (c1 - c0)


@dataclass(frozen=True, eq=False)
class OcclusionState:
    scores: np.ndarray
    labels: Optional[np.ndarray] = None
    empty_mask: bool = False
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "mask", scores >= VISIBILITY_THRESHOLD)


def part_coverage(mask: BodyMask, layout: PartLayout) -> np.ndarray:
    """Fraction of foreground pixels in each part region"""
    if (mask.height, mask.width) != (layout.height, layout.width):
        raise MaskFormatError(
            f"mask is {mask.height}x{mask.width} but layout frame is {layout.height}x{layout.width}"
        )
    coverage = np.empty(layout.num_parts)
    for p, (r0, r1, c0, c1) in enumerate(layout.regions):
        coverage[p] = mask.bitmap[r0:r1, c0:c1].sum() / layout.area(p)
    return coverage


def estimate_visibility(mask: BodyMask, layout: Optional[PartLayout] = None) -> OcclusionState:
    """
    Per-part visibility from mask coverage, max-normalized across parts.

    Args:
        mask: Person foreground bitmap
        layout: Part regions (default 4 horizontal + 2 vertical over the mask frame)

    Returns:
        OcclusionState: scores y, binarized mask m, empty_mask diagnostic flag
    """
    layout = layout or PartLayout.for_mask(mask)
    coverage = part_coverage(mask, layout)
    peak = coverage.max()
    if peak <= 0.0:
        logger.warning("Empty body mask: every part marked occluded")
        return OcclusionState(scores=np.zeros(layout.num_parts), empty_mask=True)
    return OcclusionState(scores=coverage / peak)


def occlusion_bce_loss(scores: np.ndarray, labels: np.ndarray, eps: float = BCE_EPS) -> Tuple[float, np.ndarray]:
    """
    Mean binary cross-entropy over parts (the negative log-likelihood form).

    Args:
        scores: Predicted visibility y, clamped to [eps, 1 - eps]
        labels: Ground-truth visibility (0/1)

    Returns:
        Tuple[float, np.ndarray]: loss and d loss / d scores (zero where clamping is active)
    """
    y = np.asarray(scores, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"scores shape {y.shape} does not match labels shape {t.shape}")
    clamped = np.clip(y, eps, 1.0 - eps)
    loss = -np.mean(t * np.log(clamped) + (1.0 - t) * np.log(1.0 - clamped))
    grad = (clamped - t) / (clamped * (1.0 - clamped)) / y.size
    grad = np.where((y > eps) & (y < 1.0 - eps), grad, 0.0)
    return float(loss), grad
