"""
Blueprint: Evaluation - Ranking Metrics

Similarity matrices, ranking, and the retrieval metrics (AP / mAP, CMC, mINP).

Components:
1. Similarity: cosine on representations, visible-part mean cosine
2. rank / rank_matrix (descending similarity, ties by gallery id)
3. average_precision, mean_ap, cmc, inverse_negative_penalty
4. evaluate_rankings (junk filtering, re-ranking hook, skipped queries)
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..core.exceptions import EmptyGalleryError
from ..core.features import normalize_rows
from ..utils.logger import setup_logger
from ..utils.parallel import ordered_map

logger = setup_logger(__name__)

DEFAULT_RANKS = (1, 5, 10)

# (similarity matrix, query ids, gallery ids) -> similarity matrix
PostProcess = Callable[[np.ndarray, Sequence[str], Sequence[str]], np.ndarray]


def cosine_similarity_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Q x G cosine similarities between representation rows"""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if queries.shape[1] != gallery.shape[1]:
        raise ValueError(f"query dim {queries.shape[1]} does not match gallery dim {gallery.shape[1]}")
    return normalize_rows(queries) @ normalize_rows(gallery).T


def visible_similarity_matrix(query_feats: np.ndarray, query_masks: np.ndarray,
                              gallery_feats: np.ndarray, gallery_masks: np.ndarray) -> np.ndarray:
    """
    Mean per-part cosine over the parts visible in both images

    Args:
        query_feats: Q x M x D
        query_masks: Q x M visibility
        gallery_feats: G x M x D
        gallery_masks: G x M visibility

    Returns:
        np.ndarray: Q x G similarities; pairs sharing no visible part get -1
    """
    total = np.zeros((query_feats.shape[0], gallery_feats.shape[0]))
    shared = np.zeros_like(total)
    for p in range(query_feats.shape[1]):
        both = np.outer(query_masks[:, p], gallery_masks[:, p]).astype(np.float64)
        sims = normalize_rows(query_feats[:, p, :]) @ normalize_rows(gallery_feats[:, p, :]).T
        total += sims * both
        shared += both
    return np.where(shared > 0, total / np.where(shared > 0, shared, 1.0), -1.0)


def _order(similarities: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    # lexsort keys run last-to-first: similarity descending, then id ascending
    return np.lexsort((id_rank, -similarities))


def rank(query: np.ndarray, gallery: np.ndarray, gallery_ids: Sequence[str]) -> List[str]:
    """
    Gallery ids by descending cosine similarity to the query representation

    Raises:
        EmptyGalleryError: when the gallery is empty
    """
    if len(gallery_ids) == 0:
        raise EmptyGalleryError("cannot rank against an empty gallery")
    sims = cosine_similarity_matrix(query, gallery)[0]
    id_rank = np.argsort(np.argsort(np.asarray(gallery_ids), kind="stable"), kind="stable")
    return [gallery_ids[i] for i in _order(sims, id_rank)]


def rank_matrix(similarity: np.ndarray, gallery_ids: Sequence[str]) -> np.ndarray:
    """Per query row, gallery column indices in ranked order"""
    if similarity.shape[1] == 0:
        raise EmptyGalleryError("cannot rank against an empty gallery")
    id_rank = np.argsort(np.argsort(np.asarray(gallery_ids), kind="stable"), kind="stable")
    return np.stack([_order(row, id_rank) for row in similarity])


def average_precision(relevance: Sequence[bool]) -> float:
    """Mean over relevant positions i of (relevant in top i) / i; 0 when nothing is relevant"""
    flags = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(flags)
    if hits.size == 0:
        return 0.0
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def mean_ap(relevance_lists: Sequence[Sequence[bool]]) -> float:
    if not relevance_lists:
        return 0.0
    return float(np.mean([average_precision(r) for r in relevance_lists]))


def cmc(relevance_lists: Sequence[Sequence[bool]], ranks: Sequence[int] = DEFAULT_RANKS) -> Dict[int, float]:
    """Fraction of queries with a relevant item within the top r, per requested r"""
    if not relevance_lists:
        return {int(r): 0.0 for r in ranks}
    first_hit = []
    for relevance in relevance_lists:
        hits = np.flatnonzero(np.asarray(relevance, dtype=bool))
        first_hit.append(hits[0] if hits.size else np.inf)
    first_hit = np.asarray(first_hit)
    return {int(r): float(np.mean(first_hit < r)) for r in ranks}


def inverse_negative_penalty(relevance: Sequence[bool]) -> float:
    """Relevant count divided by the position of the hardest (last) relevant item"""
    hits = np.flatnonzero(np.asarray(relevance, dtype=bool))
    if hits.size == 0:
        return 0.0
    return float(hits.size / (hits[-1] + 1))


@dataclass
class RankingResult:
    per_query_ap: Dict[str, float] = field(default_factory=dict)
    mean_ap: float = 0.0
    cmc: Dict[int, float] = field(default_factory=dict)
    mean_inp: float = 0.0
    skipped: List[str] = field(default_factory=list)

    @property
    def evaluated(self) -> int:
        return len(self.per_query_ap)


def evaluate_rankings(similarity: np.ndarray, query_ids: Sequence[str], gallery_ids: Sequence[str],
                      query_labels: Sequence[int], gallery_labels: Sequence[int],
                      query_cameras: Optional[Sequence[int]] = None,
                      gallery_cameras: Optional[Sequence[int]] = None,
                      filter_same_camera: bool = False, post_process: Optional[PostProcess] = None,
                      ranks: Sequence[int] = DEFAULT_RANKS, threads: int = 1) -> RankingResult:
    """
    Rank every query and score the rankings

    Args:
        similarity: Q x G similarity matrix
        query_ids / gallery_ids: Row / column identifiers
        query_labels / gallery_labels: person ids defining relevance
        query_cameras / gallery_cameras: Needed when filter_same_camera is on
        filter_same_camera: Drop gallery entries sharing both person and camera with the query
        post_process: Re-ranking hook applied to the similarity matrix before ranking
        ranks: CMC ranks to report
        threads: Worker cap (results are aggregated in query order)

    Returns:
        RankingResult: Queries without any relevant gallery item are skipped and listed
    """
    if len(gallery_ids) == 0:
        raise EmptyGalleryError("cannot evaluate against an empty gallery")
    if post_process is not None:
        similarity = np.asarray(post_process(similarity, list(query_ids), list(gallery_ids)), dtype=np.float64)
        if similarity.shape != (len(query_ids), len(gallery_ids)):
            raise ValueError(f"post_process returned shape {similarity.shape}")
    if filter_same_camera and (query_cameras is None or gallery_cameras is None):
        raise ValueError("same-camera filtering needs camera ids")

    orders = rank_matrix(similarity, gallery_ids)
    gallery_labels = np.asarray(gallery_labels)
    gallery_cams = None if gallery_cameras is None else np.asarray(gallery_cameras)

    def relevance_of(row: int) -> np.ndarray:
        order = orders[row]
        relevant = gallery_labels[order] == query_labels[row]
        if filter_same_camera:
            junk = relevant & (gallery_cams[order] == query_cameras[row])
            return relevant[~junk]
        return relevant

    relevance = ordered_map(relevance_of, range(len(query_ids)), threads)
    result = RankingResult()
    kept = []
    for query_id, flags in zip(query_ids, relevance):
        if not flags.any():
            result.skipped.append(query_id)
            continue
        result.per_query_ap[query_id] = average_precision(flags)
        kept.append(flags)
    if result.skipped:
        logger.warning(f"{len(result.skipped)} queries have no relevant gallery item and were skipped")
    result.mean_ap = float(np.mean(list(result.per_query_ap.values()))) if kept else 0.0
    result.cmc = cmc(kept, ranks)
    result.mean_inp = float(np.mean([inverse_negative_penalty(f) for f in kept])) if kept else 0.0
    return result
