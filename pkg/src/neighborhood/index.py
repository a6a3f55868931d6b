"""
Blueprint: Neighborhood - Gallery Index and Search

Exact cosine k-NN per part over visible gallery parts, intersected across the
visible parts of the target image.

Components:
1. GalleryIndex (per-part matrices, immutable after build)
2. part_neighbors (thresholded top-K for one part)
3. image_neighborhood / batch_neighborhoods (intersection over visible parts;
   fully visible targets search a configurable upper-body subset)
4. oracle_filter (drop members with a different ground-truth identity)
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import EmptyGalleryError, FullyOccludedQueryError, MissingLabelError
from ..core.features import normalize_rows
from ..core.types import Dataset, PartFeatureSet
from ..utils.logger import setup_logger
from ..utils.parallel import ordered_map

logger = setup_logger(__name__)

_QUERY_CHUNK = 256


@dataclass(frozen=True, eq=False)
class PartIndex:
    """Rows are gallery images with this part visible, sorted by image_id"""
    matrix: np.ndarray
    image_ids: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(frozen=True, eq=False)
class GalleryIndex:
    parts: Tuple[PartIndex, ...]
    items: Mapping[str, PartFeatureSet]
    use_visibility: bool = True

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.items


@dataclass(frozen=True)
class NeighborSet:
    """Neighborhood of one target image

    members are ordered by descending minimum per-part similarity, then image_id.
    """
    target_id: str
    members: Tuple[str, ...] = ()
    member_scores: Tuple[float, ...] = ()
    part_candidates: Mapping[int, Tuple[str, ...]] = field(default_factory=dict)
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.members)


def build_index(gallery: Dataset, use_visibility: bool = True) -> GalleryIndex:
    """
    Build the per-part search matrices

    Args:
        gallery: Gallery images (normalized features)
        use_visibility: When False every part of every image is indexed

    Returns:
        GalleryIndex: Immutable index
    """
    if len(gallery) == 0:
        raise EmptyGalleryError("cannot build an index over an empty gallery")
    ordered = sorted(gallery.items, key=lambda item: item.image_id)
    parts = []
    for p in range(gallery.num_parts):
        rows = [item for item in ordered if item.visibility_mask[p] or not use_visibility]
        if rows:
            matrix = normalize_rows(np.stack([item.features[p] for item in rows]))
        else:
            matrix = np.zeros((0, gallery.feature_dim))
        matrix.setflags(write=False)
        parts.append(PartIndex(matrix=matrix, image_ids=tuple(item.image_id for item in rows)))
    logger.debug(f"Indexed {len(gallery)} gallery images, rows per part {[len(p) for p in parts]}")
    return GalleryIndex(parts=tuple(parts), items={item.image_id: item for item in ordered},
                        use_visibility=use_visibility)


def _select(part: PartIndex, sims: np.ndarray, k: int, theta: float,
            exclude: Iterable[str] = ()) -> List[Tuple[str, float]]:
    candidates = np.flatnonzero(sims >= theta)
    # Rows are id-sorted, so a stable sort on -similarity breaks ties by ascending id
    candidates = candidates[np.argsort(-sims[candidates], kind="stable")]
    excluded = set(exclude)
    selected = []
    for row in candidates:
        image_id = part.image_ids[row]
        if image_id in excluded:
            continue
        selected.append((image_id, float(sims[row])))
        if len(selected) == k:
            break
    return selected


def part_neighbors(index: GalleryIndex, part: int, query_feature: np.ndarray, k: int, theta: float,
                   exclude: Iterable[str] = ()) -> List[str]:
    """
    Up to K gallery ids whose part `part` has cosine similarity >= theta with the
    query vector, by descending similarity (ties: ascending image_id)
    """
    return [image_id for image_id, _ in part_neighbors_scored(index, part, query_feature, k, theta, exclude)]


def part_neighbors_scored(index: GalleryIndex, part: int, query_feature: np.ndarray, k: int, theta: float,
                          exclude: Iterable[str] = ()) -> List[Tuple[str, float]]:
    if k < 1:
        raise ValueError("K must be >= 1")
    part_index = index.parts[part]
    if len(part_index) == 0:
        return []
    query = normalize_rows(np.asarray(query_feature, dtype=np.float64))
    return _select(part_index, part_index.matrix @ query, k, theta, exclude)


def _query_parts(query: PartFeatureSet, use_visibility: bool,
                 holistic_parts: Optional[Sequence[int]] = None) -> List[int]:
    parts = query.visible_parts if use_visibility else list(range(query.num_parts))
    if not parts:
        raise FullyOccludedQueryError(query.image_id)
    # A fully visible target searches with the configured subset only
    if holistic_parts and len(query.visible_parts) == query.num_parts:
        subset = sorted({p for p in holistic_parts if 0 <= p < query.num_parts})
        if subset:
            return subset
    return parts


def _intersect(target_id: str, scored: Dict[int, List[Tuple[str, float]]]) -> NeighborSet:
    lists = list(scored.values())
    common = set(image_id for image_id, _ in lists[0])
    for other in lists[1:]:
        common &= set(image_id for image_id, _ in other)
    lowest: Dict[str, float] = {}
    for candidates in lists:
        for image_id, sim in candidates:
            if image_id in common:
                lowest[image_id] = min(lowest.get(image_id, np.inf), sim)
    ordered = sorted(common, key=lambda image_id: (-lowest[image_id], image_id))
    return NeighborSet(
        target_id=target_id,
        members=tuple(ordered),
        member_scores=tuple(lowest[image_id] for image_id in ordered),
        part_candidates={p: tuple(image_id for image_id, _ in candidates) for p, candidates in scored.items()},
        fallback=not ordered,
    )


def image_neighborhood(index: GalleryIndex, query: PartFeatureSet, k: int, theta: float,
                       exclude_self: bool = True, holistic_parts: Optional[Sequence[int]] = None) -> NeighborSet:
    """
    Intersection of the per-part neighbor lists over the query's visible parts

    Args:
        index: Gallery index
        query: Target image
        k: Neighbors per part
        theta: Cosine similarity threshold
        exclude_self: Remove the query from its own neighborhood when it is a gallery member
        holistic_parts: Parts searched when every part of the query is visible (None: all of them)

    Returns:
        NeighborSet: fallback is set when the intersection is empty
    """
    parts = _query_parts(query, index.use_visibility, holistic_parts)
    exclude = (query.image_id,) if exclude_self and query.image_id in index else ()
    scored = {p: part_neighbors_scored(index, p, query.features[p], k, theta, exclude) for p in parts}
    return _intersect(query.image_id, scored)


def batch_neighborhoods(index: GalleryIndex, queries: Sequence[PartFeatureSet], k: int, theta: float,
                        exclude_self: bool = True, threads: int = 1,
                        holistic_parts: Optional[Sequence[int]] = None) -> List[NeighborSet]:
    """Neighborhoods for many queries, one matrix product per part and chunk"""
    if k < 1:
        raise ValueError("K must be >= 1")
    queries = list(queries)
    results: List[NeighborSet] = []
    for start in range(0, len(queries), _QUERY_CHUNK):
        chunk = queries[start:start + _QUERY_CHUNK]
        feats = normalize_rows(np.stack([q.features for q in chunk]).astype(np.float64))
        sims = [feats[:, p, :] @ part.matrix.T for p, part in enumerate(index.parts)]

        def one(row: int) -> NeighborSet:
            query = chunk[row]
            exclude = (query.image_id,) if exclude_self and query.image_id in index else ()
            scored = {p: _select(index.parts[p], sims[p][row], k, theta, exclude)
                      for p in _query_parts(query, index.use_visibility, holistic_parts)}
            return _intersect(query.image_id, scored)

        results.extend(ordered_map(one, range(len(chunk)), threads))
    fallbacks = sum(ns.fallback for ns in results)
    if fallbacks:
        logger.debug(f"{fallbacks}/{len(results)} neighborhoods are empty")
    return results


def oracle_filter(ns: NeighborSet, labels: Mapping[str, Optional[int]]) -> NeighborSet:
    """Keep only members whose ground-truth person_id equals the target's"""
    target_label = labels.get(ns.target_id)
    if target_label is None:
        raise MissingLabelError(f"target '{ns.target_id}' has no known person_id")
    keep = []
    for image_id, score in zip(ns.members, ns.member_scores):
        label = labels.get(image_id)
        if label is None:
            raise MissingLabelError(f"neighbor '{image_id}' has no known person_id")
        if label == target_label:
            keep.append((image_id, score))
    return replace(
        ns,
        members=tuple(image_id for image_id, _ in keep),
        member_scores=tuple(score for _, score in keep),
        fallback=not keep,
    )
