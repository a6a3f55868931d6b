"""
Blueprint: Evaluation - Ablation Variants

Pipeline wiring of every retrieval variant, from plain concatenated features to
the full neighborhood reconstruction with and without ground-truth outlier
removal, and the EvalReport each one produces.

Components:
1. Variant (names, wiring flags)
2. EvalReport / NeighborhoodStats (validated report models)
3. Representations: reconstruct_split, build_representations
4. run_variant / run_ablation
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config_manager.config_handler import PipelineConfig
from ..core.exceptions import MissingLabelError
from ..core.features import baseline_representation, normalize_dataset, visible_representation
from ..core.types import Dataset, PartFeatureSet
from ..neighborhood.index import GalleryIndex, NeighborSet, batch_neighborhoods, build_index, oracle_filter
from ..orgnn.graph import AggregationMode
from ..orgnn.model import ORGNNParams, reconstruct_representation
from .metrics import DEFAULT_RANKS, PostProcess, cosine_similarity_matrix, evaluate_rankings, \
    visible_similarity_matrix
from ..utils.logger import setup_logger
from ..utils.parallel import ordered_map

logger = setup_logger(__name__)


class Variant(str, Enum):
    BASELINE = "baseline"
    OAN = "oan"
    GNN_NO_OAN = "gnn_no_oan"
    OAN_AVGAGG = "oan+avgagg"
    OAN_GNN = "oan+gnn"
    OAN_ORGNN = "oan+orgnn"
    OAN_ORGNN_UB = "oan+orgnn+ub"

    @property
    def reconstructs(self) -> bool:
        return self not in (Variant.BASELINE, Variant.OAN)

    @property
    def occlusion_aware(self) -> bool:
        return self not in (Variant.BASELINE, Variant.GNN_NO_OAN)

    @property
    def oracle(self) -> bool:
        return self is Variant.OAN_ORGNN_UB

    @property
    def mode(self) -> Optional[AggregationMode]:
        return {
            Variant.GNN_NO_OAN: AggregationMode.GNN,
            Variant.OAN_AVGAGG: AggregationMode.AVERAGE,
            Variant.OAN_GNN: AggregationMode.GNN,
            Variant.OAN_ORGNN: AggregationMode.ORGNN,
            Variant.OAN_ORGNN_UB: AggregationMode.ORGNN,
        }.get(self)


ABLATION_ORDER: Tuple[Variant, ...] = (
    Variant.BASELINE, Variant.GNN_NO_OAN, Variant.OAN, Variant.OAN_AVGAGG,
    Variant.OAN_GNN, Variant.OAN_ORGNN, Variant.OAN_ORGNN_UB,
)


class NeighborhoodStats(BaseModel):
    mean_size: float = Field(0.0, ge=0.0, description="Mean query neighborhood size after filtering")
    outlier_rate: Optional[float] = Field(None, ge=0.0, le=1.0,
                                          description="Share of query-neighborhood members of another identity")
    gallery_fallbacks: int = Field(0, ge=0)


class EvalReport(BaseModel):
    """Machine-readable result of one variant run"""
    model_config = ConfigDict(extra="forbid")

    variant: str
    per_query_ap: Dict[str, float]
    mAP: float = Field(ge=0.0, le=1.0)
    cmc: Dict[str, float] = Field(description="CMC keyed by rank ('1', '5', '10')")
    mINP: float = Field(0.0, ge=0.0, le=1.0)
    evaluated_queries: int = Field(ge=0)
    skipped_queries: List[str] = Field(default_factory=list)
    fallback_count: int = Field(0, ge=0, description="Queries evaluated with the fallback representation")
    neighborhood: NeighborhoodStats = Field(default_factory=NeighborhoodStats)
    config: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _cmc_monotone(self) -> "EvalReport":
        values = [self.cmc[k] for k in sorted(self.cmc, key=int)]
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("CMC must be non-decreasing in rank")
        return self

    def rank(self, r: int) -> float:
        return self.cmc[str(r)]


@dataclass(eq=False)
class SplitRepresentation:
    """Representation rows of one split plus the neighborhoods behind them"""
    matrix: np.ndarray
    neighborhoods: List[Optional[NeighborSet]] = field(default_factory=list)
    fallbacks: int = 0


def _fallback_vector(item: PartFeatureSet, occlusion_aware: bool) -> np.ndarray:
    return visible_representation(item) if occlusion_aware else baseline_representation(item)


def reconstruct_split(targets: Dataset, index: GalleryIndex, cfg: PipelineConfig, variant: Variant,
                      params: Optional[ORGNNParams], labels: Optional[Mapping[str, Optional[int]]] = None,
                      exclude_self: bool = True) -> SplitRepresentation:
    """
    Reconstructed representation of every target image

    Args:
        targets: Images to reconstruct (normalized features)
        index: Gallery index searched for neighborhoods
        cfg: K_infer, theta_infer, T, threads, skip_occluded_neighbor_parts, holistic_query_parts
        variant: Wiring (aggregation mode, occlusion awareness, oracle filtering)
        params: Trained parameters for the learned modes
        labels: image_id -> person_id, required by the oracle variant
        exclude_self: Remove each target from its own neighborhood

    Returns:
        SplitRepresentation: Rows in target order; empty neighborhoods use the fallback representation
    """
    searchable = [item for item in targets if item.visible_parts or not variant.occlusion_aware]
    unsearchable = len(targets) - len(searchable)
    if unsearchable:
        logger.warning(f"{unsearchable} fully occluded image(s) use the fallback representation")
    holistic = cfg.holistic_query_parts if variant.occlusion_aware else None
    found = batch_neighborhoods(index, searchable, cfg.K_infer, cfg.theta_infer,
                                exclude_self=exclude_self, threads=cfg.threads, holistic_parts=holistic)
    by_target = {ns.target_id: ns for ns in found}
    if variant.oracle:
        by_target = {image_id: oracle_filter(ns, labels) for image_id, ns in by_target.items()}

    skip_occluded = cfg.skip_occluded_neighbor_parts and variant.occlusion_aware

    def represent(item: PartFeatureSet) -> np.ndarray:
        ns = by_target.get(item.image_id)
        if ns is None or ns.fallback:
            return _fallback_vector(item, variant.occlusion_aware)
        neighbors = [index.items[m] for m in ns.members]
        return reconstruct_representation(item, neighbors, params, num_layers=cfg.T, mode=variant.mode,
                                          skip_occluded=skip_occluded)

    rows = ordered_map(represent, list(targets), cfg.threads)
    neighborhoods = [by_target.get(item.image_id) for item in targets]
    fallbacks = sum(1 for ns in neighborhoods if ns is None or ns.fallback)
    return SplitRepresentation(np.stack(rows), neighborhoods, fallbacks)


def _neighborhood_stats(rep: SplitRepresentation, labels: Optional[Mapping[str, Optional[int]]],
                        gallery_fallbacks: int) -> NeighborhoodStats:
    present = [ns for ns in rep.neighborhoods if ns is not None]
    sizes = [len(ns) for ns in present]
    outlier_rate = None
    if labels is not None:
        members = [(ns.target_id, m) for ns in present for m in ns.members]
        known = [(t, m) for t, m in members if labels.get(t) is not None and labels.get(m) is not None]
        if known:
            outlier_rate = float(np.mean([labels[t] != labels[m] for t, m in known]))
    return NeighborhoodStats(mean_size=float(np.mean(sizes)) if sizes else 0.0,
                             outlier_rate=outlier_rate, gallery_fallbacks=gallery_fallbacks)


def _labels_of(*datasets: Dataset) -> Dict[str, Optional[int]]:
    return {item.image_id: item.person_id for ds in datasets for item in ds}


def build_representations(variant: Variant, query: Dataset, gallery: Dataset, cfg: PipelineConfig,
                          params: Optional[ORGNNParams] = None
                          ) -> Tuple[np.ndarray, int, NeighborhoodStats]:
    """
    Query x gallery similarity matrix of a variant

    Returns:
        Tuple: similarity matrix, query fallback count, neighborhood statistics
    """
    variant = Variant(variant)
    query, gallery = normalize_dataset(query), normalize_dataset(gallery)
    if variant is Variant.BASELINE:
        sims = cosine_similarity_matrix(np.stack([baseline_representation(i) for i in query]),
                                        np.stack([baseline_representation(i) for i in gallery]))
        return sims, 0, NeighborhoodStats()
    if variant is Variant.OAN:
        sims = visible_similarity_matrix(query.stacked_features(), query.stacked_masks(),
                                         gallery.stacked_features(), gallery.stacked_masks())
        return sims, 0, NeighborhoodStats()

    if variant.mode is not AggregationMode.AVERAGE:
        if params is None:
            raise ValueError(f"variant '{variant.value}' needs trained {variant.mode.value} parameters")
        if params.mode is not variant.mode:
            logger.warning(f"variant '{variant.value}' runs {variant.mode.value} aggregation "
                           f"with parameters trained as {params.mode.value}")
    labels = _labels_of(query, gallery)
    if variant.oracle and any(label is None for label in labels.values()):
        raise MissingLabelError("the upper-bound variant needs person_id on every query and gallery item")
    has_labels = all(label is not None for label in labels.values())

    index = build_index(gallery, use_visibility=variant.occlusion_aware)
    queries = reconstruct_split(query, index, cfg, variant, params, labels if variant.oracle else None)
    if cfg.reconstruct_gallery:
        gallery_rep = reconstruct_split(gallery, index, cfg, variant, params,
                                        labels if variant.oracle else None, exclude_self=True)
        gallery_matrix, gallery_fallbacks = gallery_rep.matrix, gallery_rep.fallbacks
    else:
        gallery_matrix = np.stack([_fallback_vector(i, variant.occlusion_aware) for i in gallery])
        gallery_fallbacks = 0
    stats = _neighborhood_stats(queries, labels if has_labels else None, gallery_fallbacks)
    return cosine_similarity_matrix(queries.matrix, gallery_matrix), queries.fallbacks, stats


def reconstruct_dataset(variant: Variant, targets: Dataset, gallery: Dataset, cfg: PipelineConfig,
                        params: Optional[ORGNNParams] = None) -> Tuple[Dataset, SplitRepresentation]:
    """
    Reconstructed part features of every target as a dataset

    Reconstructed items carry full visibility; fallback items keep their
    own scores and their visible-only features.
    """
    variant = Variant(variant)
    if not variant.reconstructs:
        raise ValueError(f"variant '{variant.value}' does not reconstruct features")
    targets, gallery = normalize_dataset(targets), normalize_dataset(gallery)
    labels = _labels_of(targets, gallery) if variant.oracle else None
    if labels is not None and any(label is None for label in labels.values()):
        raise MissingLabelError("the upper-bound variant needs person_id on every item")
    index = build_index(gallery, use_visibility=variant.occlusion_aware)
    rep = reconstruct_split(targets, index, cfg, variant, params, labels)
    items = []
    for item, row, ns in zip(targets, rep.matrix, rep.neighborhoods):
        features = row.reshape(item.num_parts, item.dim).astype(np.float32)
        if ns is None or ns.fallback:
            items.append(item.with_features(features))
        else:
            items.append(item.with_features(features, np.ones(item.num_parts)))
    return Dataset(tuple(items), split=targets.split, num_parts=targets.num_parts,
                   feature_dim=targets.feature_dim), rep


def _config_echo(cfg: PipelineConfig) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.model_dump().items()}


def run_variant(variant: Variant, query: Dataset, gallery: Dataset, cfg: PipelineConfig,
                params: Optional[ORGNNParams] = None, post_process: Optional[PostProcess] = None,
                ranks: Sequence[int] = DEFAULT_RANKS) -> EvalReport:
    """
    Run one variant end to end and score it

    Args:
        variant: Which wiring to run
        query / gallery: Labeled evaluation splits
        cfg: Pipeline configuration
        params: Trained parameters (GNN-mode for gnn variants, OR-GNN for orgnn variants)
        post_process: Optional re-ranking hook on the similarity matrix
        ranks: CMC ranks

    Returns:
        EvalReport: Metrics, fallback count, neighborhood statistics and config echo
    """
    try:
        variant = Variant(variant)
        if not query.has_labels or not gallery.has_labels:
            raise MissingLabelError("evaluation needs person_id on every query and gallery item")
        sims, fallbacks, stats = build_representations(variant, query, gallery, cfg, params)
        result = evaluate_rankings(
            sims, query.image_ids, gallery.image_ids, query.person_ids(), gallery.person_ids(),
            query.camera_ids(), gallery.camera_ids(), filter_same_camera=cfg.filter_same_camera,
            post_process=post_process, ranks=ranks, threads=cfg.threads,
        )
        report = EvalReport(
            variant=variant.value,
            per_query_ap=result.per_query_ap,
            mAP=result.mean_ap,
            cmc={str(r): v for r, v in result.cmc.items()},
            mINP=result.mean_inp,
            evaluated_queries=result.evaluated,
            skipped_queries=result.skipped,
            fallback_count=fallbacks,
            neighborhood=stats,
            config=_config_echo(cfg),
        )
        logger.info(f"{variant.value}: mAP={report.mAP:.4f} rank1={report.cmc.get('1', 0.0):.4f} "
                    f"fallbacks={fallbacks}")
        return report

    except Exception as e:
        logger.error(f"Variant '{variant}' failed: {str(e)}")
        raise


def run_ablation(query: Dataset, gallery: Dataset, cfg: PipelineConfig,
                 params_by_mode: Mapping[AggregationMode, ORGNNParams],
                 variants: Sequence[Variant] = ABLATION_ORDER,
                 post_process: Optional[PostProcess] = None) -> List[EvalReport]:
    """Every variant in order; learned variants take the parameters trained in their mode"""
    reports = []
    for variant in variants:
        variant = Variant(variant)
        params = params_by_mode.get(variant.mode) if variant.mode is not None else None
        reports.append(run_variant(variant, query, gallery, cfg, params, post_process))
    return reports
