"""
Blueprint: OR-GNN - Trainer

Trains the per-part graph networks on neighborhoods precomputed over the
training set (each image excluded from its own neighborhood).

Components:
1. Neighbor-set preparation
2. Held-out identities scored by retrieval mAP to select the returned epoch
3. Identity-balanced batches of neighbor sets
4. Adam with step decay and an L2 pull of W toward the identity;
   divergence aborts with the last good parameters
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config_manager.config_handler import PipelineConfig
from ..core.exceptions import MissingLabelError, TrainingDivergedError
from ..core.features import normalize_dataset, visible_representation
from ..core.optimizer import Adam, StepDecaySchedule
from ..core.sampling import identity_batches
from ..core.types import Dataset, PartFeatureSet
from ..evaluation.metrics import average_precision, cosine_similarity_matrix, rank_matrix
from ..neighborhood.index import GalleryIndex, NeighborSet, batch_neighborhoods, build_index
from .graph import AggregationMode
from .model import ORGNNParams, orgnn_loss, reconstruct_representation, run_graphs
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True, eq=False)
class TrainingSample:
    target: PartFeatureSet
    neighbors: Sequence[PartFeatureSet]
    label: int


def prepare_samples(train: Dataset, cfg: PipelineConfig, label_ids: Sequence[int]) -> List[TrainingSample]:
    """Target images of the training set paired with their (non-empty) neighborhoods"""
    index = build_index(train)
    lookup = index.items
    label_of = {pid: i for i, pid in enumerate(label_ids)}
    eligible = [item for item in train if item.visible_parts]
    neighborhoods = batch_neighborhoods(index, eligible, cfg.K_train, cfg.theta_train, exclude_self=True,
                                        threads=cfg.threads, holistic_parts=cfg.holistic_query_parts)
    samples = [
        TrainingSample(item, tuple(lookup[m] for m in ns.members), label_of[item.person_id])
        for item, ns in zip(eligible, neighborhoods) if not ns.fallback
    ]
    logger.info(f"{len(samples)}/{len(train)} training images have a non-empty neighborhood")
    return samples


def split_validation(train: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """
    Hold out a seeded share of the training identities

    Returns:
        Tuple: fitting set and held-out set; no held-out set when it would
        cover fewer than two identities or leave none to fit on
    """
    ids = sorted({item.person_id for item in train})
    count = int(round(len(ids) * fraction))
    if count < 2 or count >= len(ids):
        return train, None
    held = {int(pid) for pid in np.random.default_rng(seed + 3).choice(ids, size=count, replace=False)}
    fit = Dataset.from_items([item for item in train if item.person_id not in held], split="train",
                             num_parts=train.num_parts, feature_dim=train.feature_dim)
    held_out = Dataset.from_items([item for item in train if item.person_id in held], split="train",
                                  num_parts=train.num_parts, feature_dim=train.feature_dim)
    return fit, held_out


@dataclass(eq=False)
class ValidationSet:
    """Held-out identities; neighborhoods are fixed, only the reconstructions change per epoch"""
    items: Dataset
    index: GalleryIndex
    neighborhoods: List[Optional[NeighborSet]]
    query_rows: np.ndarray

    @classmethod
    def build(cls, held_out: Dataset, cfg: PipelineConfig) -> "ValidationSet":
        items = normalize_dataset(held_out)
        index = build_index(items)
        searchable = [item for item in items if item.visible_parts]
        found = batch_neighborhoods(index, searchable, cfg.K_infer, cfg.theta_infer, exclude_self=True,
                                    threads=cfg.threads, holistic_parts=cfg.holistic_query_parts)
        by_target = {ns.target_id: ns for ns in found}
        neighborhoods = [by_target.get(item.image_id) for item in items]
        occluded = np.array([len(item.visible_parts) < item.num_parts for item in items])
        rows = np.flatnonzero(occluded) if occluded.any() else np.arange(len(items))
        return cls(items, index, neighborhoods, rows)

    def mean_ap(self, params: ORGNNParams, cfg: PipelineConfig) -> float:
        """Retrieval mAP of the occluded held-out images against all others (self excluded)"""
        reps = []
        for item, ns in zip(self.items, self.neighborhoods):
            if ns is None or ns.fallback:
                reps.append(visible_representation(item))
                continue
            neighbors = [self.index.items[m] for m in ns.members]
            reps.append(reconstruct_representation(item, neighbors, params, num_layers=cfg.T, mode=params.mode,
                                                   skip_occluded=cfg.skip_occluded_neighbor_parts))
        reps = np.stack(reps)
        sims = cosine_similarity_matrix(reps[self.query_rows], reps)
        labels = self.items.person_ids()
        ids = np.asarray(self.items.image_ids)
        scores = []
        for row, q in enumerate(self.query_rows):
            others = np.flatnonzero(np.arange(len(ids)) != q)
            order = others[rank_matrix(sims[row:row + 1, others], ids[others])[0]]
            relevance = labels[order] == labels[q]
            if relevance.any():
                scores.append(average_precision(relevance))
        return float(np.mean(scores)) if scores else 0.0


def sample_loss(sample: TrainingSample, params: ORGNNParams, cfg: PipelineConfig):
    runs = run_graphs(sample.neighbors, params, cfg.T, params.mode, cfg.skip_occluded_neighbor_parts)
    return orgnn_loss(runs, sample.label, params)


def _identity_pull(params: ORGNNParams, strength: float) -> np.ndarray:
    return strength * (params.W - np.eye(params.dim)[None, None])


def train_orgnn(train: Dataset, cfg: PipelineConfig, mode: AggregationMode = AggregationMode.ORGNN,
                epochs: Optional[int] = None) -> ORGNNParams:
    """
    Train graph-network parameters

    Args:
        train: Labeled training features (encoder output or ingested features)
        cfg: K_train, theta_train, T, batch shape, learning-rate schedule, weight_decay,
            validation_fraction, seed
        mode: ORGNN or GNN (AVERAGE has nothing to learn)
        epochs: Overrides cfg.epochs

    Returns:
        ORGNNParams: Parameters of the epoch with the best held-out mAP (the last
        epoch when nothing is held out); loss_history holds the mean loss of every
        epoch and validation_history the held-out mAP after each one
    """
    try:
        mode = AggregationMode(mode)
        if mode is AggregationMode.AVERAGE:
            raise ValueError("the average aggregator has no parameters to train")
        if not train.has_labels:
            raise MissingLabelError("graph network training needs person_id on every item")
        epochs = cfg.epochs if epochs is None else epochs
        fit, held_out = split_validation(train, cfg.validation_fraction, cfg.seed)
        label_ids = tuple(sorted({item.person_id for item in fit}))
        params = ORGNNParams.initialize(train.num_parts, train.feature_dim, cfg.T, label_ids, cfg.seed, mode)
        if epochs == 0:
            return params

        samples = prepare_samples(normalize_dataset(fit), cfg, label_ids)
        if not samples:
            logger.warning("No training image has a neighborhood; returning the initialization")
            return params
        validation = ValidationSet.build(held_out, cfg) if held_out is not None else None
        if validation is not None:
            logger.info(f"Holding out {held_out.num_identities} identities ({len(held_out)} images) "
                        f"for epoch selection")

        labels = [sample.label for sample in samples]
        rng = np.random.default_rng(cfg.seed + 2)
        schedule = StepDecaySchedule(cfg.learning_rate, cfg.lr_decay_epochs, cfg.lr_decay_factor)
        optimizer = Adam(params.as_dict(), lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                         beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        last_good = params.copy()
        best: Optional[ORGNNParams] = None
        best_score = -np.inf

        for epoch in range(epochs):
            optimizer.lr = schedule.lr_at(epoch)
            epoch_losses = []
            for batch in identity_batches(labels, cfg.batch_persons, cfg.sets_per_person, rng):
                grads = {name: np.zeros_like(value) for name, value in params.as_dict().items()}
                batch_loss = 0.0
                # Fixed accumulation order keeps runs bit-identical
                for index in batch:
                    loss, sample_grads = sample_loss(samples[index], params, cfg)
                    batch_loss += loss
                    for name in grads:
                        grads[name] += sample_grads[name]
                batch_loss /= len(batch)
                if not np.isfinite(batch_loss):
                    raise TrainingDivergedError(f"graph network loss diverged at epoch {epoch}", last_good, epoch)
                grads = {name: g / len(batch) for name, g in grads.items()}
                if cfg.weight_decay > 0:
                    grads["W"] = grads["W"] + _identity_pull(params, cfg.weight_decay)
                optimizer.step(grads)
                epoch_losses.append(batch_loss)
            params.loss_history.append(float(np.mean(epoch_losses)))
            last_good = params.copy()

            message = f"{mode.value} epoch {epoch + 1}/{epochs} loss={params.loss_history[-1]:.4f} lr={optimizer.lr:.2e}"
            if validation is not None:
                score = validation.mean_ap(params, cfg)
                params.validation_history.append(score)
                message += f" val_mAP={score:.4f}"
                # Ties go to the later epoch
                if score >= best_score:
                    best_score, best = score, params.copy()
                    best.selected_epoch = epoch
            logger.info(message)

        if best is None:
            params.selected_epoch = epochs - 1
            return params
        best.loss_history = list(params.loss_history)
        best.validation_history = list(params.validation_history)
        logger.info(f"{mode.value}: keeping epoch {best.selected_epoch + 1} (held-out mAP {best_score:.4f})")
        return best

    except Exception as e:
        logger.error(f"Graph network training failed: {str(e)}")
        raise
