"""
Blueprint: Encoder - Trainer

Desk-scale part feature extractor: one linear projection per part followed by
L2 normalization, trained with the joint identification + batch-hard triplet
loss averaged over parts.

Components:
1. EncoderParams
2. encoder_batch_loss (forward + manual backward)
3. train_encoder (Adam, step decay, identity-balanced batches)
4. encode / encode_dataset
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config_manager.config_handler import PipelineConfig
from ..core.exceptions import MissingLabelError, TrainingDivergedError
from ..core.features import normalize_rows
from ..core.optimizer import Adam, StepDecaySchedule
from ..core.sampling import identity_batches
from ..core.types import Dataset, PartFeatureSet
from .losses import identification_loss, mine_triplets, triplet_loss
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(eq=False)
class EncoderParams:
    """Per-part projection (M x D_raw x D) and classifier (M x C x D)"""
    projections: np.ndarray
    classifiers: np.ndarray
    label_ids: Tuple[int, ...]
    loss_history: List[float] = field(default_factory=list)

    @property
    def num_parts(self) -> int:
        return self.projections.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.projections.shape[1]

    @property
    def dim(self) -> int:
        return self.projections.shape[2]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"projections": self.projections, "classifiers": self.classifiers}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.projections.copy(), self.classifiers.copy(), self.label_ids, list(self.loss_history))

    @classmethod
    def initialize(cls, num_parts: int, raw_dim: int, dim: int, label_ids, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        projections = rng.normal(0.0, 1.0 / np.sqrt(raw_dim), size=(num_parts, raw_dim, dim))
        classifiers = rng.normal(0.0, 0.01, size=(num_parts, len(label_ids), dim))
        return cls(projections, classifiers, tuple(int(i) for i in label_ids))


def _project(raw: np.ndarray, projection: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = raw @ projection
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z, np.where(norms > 0, norms, 1.0), normalize_rows(z)


def encoder_batch_loss(params: EncoderParams, raw: np.ndarray, labels: np.ndarray,
                       margin: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Joint loss (1/M) sum_p [L_id + L_tri] on one batch

    Args:
        params: Encoder parameters
        raw: B x M x D_raw raw part vectors
        labels: B classifier indices
        margin: Triplet margin

    Returns:
        Tuple: loss and gradients keyed like EncoderParams.as_dict()
    """
    num_parts = params.num_parts
    grads = {name: np.zeros_like(value) for name, value in params.as_dict().items()}
    total = 0.0
    for p in range(num_parts):
        x = raw[:, p, :]
        z, norms, feats = _project(x, params.projections[p])
        id_loss, d_feat_id, d_cls = identification_loss(feats, labels, params.classifiers[p])
        tri_loss, d_feat_tri = triplet_loss(mine_triplets(feats, labels, margin))
        total += id_loss + tri_loss

        d_feat = (d_feat_id + d_feat_tri) / num_parts
        # Backward through row-wise L2 normalization
        d_z = (d_feat - feats * np.sum(feats * d_feat, axis=1, keepdims=True)) / norms
        grads["projections"][p] = x.T @ d_z
        grads["classifiers"][p] = d_cls / num_parts
    return total / num_parts, grads


def _label_indices(dataset: Dataset, label_ids: Tuple[int, ...]) -> np.ndarray:
    lookup = {pid: i for i, pid in enumerate(label_ids)}
    return np.array([lookup[item.person_id] for item in dataset], dtype=np.int64)


def train_encoder(train: Dataset, cfg: PipelineConfig, epochs: Optional[int] = None) -> EncoderParams:
    """
    Train the per-part encoder on raw training vectors

    Args:
        train: Raw vectors (feature_dim = D_raw) with person labels
        cfg: Pipeline configuration (D, eta, learning rate schedule, batch shape, seed)
        epochs: Overrides cfg.epochs

    Returns:
        EncoderParams: Trained parameters; loss_history holds the mean loss per epoch
    """
    try:
        if not train.has_labels:
            raise MissingLabelError("encoder training needs person_id on every item")
        epochs = cfg.epochs if epochs is None else epochs
        label_ids = tuple(sorted({item.person_id for item in train}))
        params = EncoderParams.initialize(train.num_parts, train.feature_dim, cfg.D, label_ids, cfg.seed)
        if epochs == 0:
            return params

        raw = train.stacked_features()
        labels = _label_indices(train, label_ids)
        rng = np.random.default_rng(cfg.seed + 1)
        schedule = StepDecaySchedule(cfg.learning_rate, cfg.lr_decay_epochs, cfg.lr_decay_factor)
        optimizer = Adam(params.as_dict(), lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                         beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        last_good = params.copy()

        for epoch in range(epochs):
            optimizer.lr = schedule.lr_at(epoch)
            losses = []
            for batch in identity_batches(labels, cfg.encoder_batch_persons, cfg.encoder_images_per_person,
                                          rng, min_per_person=2):
                loss, grads = encoder_batch_loss(params, raw[batch], labels[batch], cfg.eta)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"encoder loss diverged at epoch {epoch}", last_good, epoch)
                optimizer.step(grads)
                losses.append(loss)
            params.loss_history.append(float(np.mean(losses)))
            last_good = params.copy()
            logger.info(f"encoder epoch {epoch + 1}/{epochs} loss={params.loss_history[-1]:.4f} lr={optimizer.lr:.2e}")
        return params

    except Exception as e:
        logger.error(f"Encoder training failed: {str(e)}")
        raise


def encode(raw: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Project M x D_raw raw part vectors to M x D unit part features"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (params.num_parts, params.raw_dim):
        raise ValueError(f"raw input shape {raw.shape}, encoder expects ({params.num_parts}, {params.raw_dim})")
    projected = np.einsum("pr,prd->pd", raw, params.projections)
    return normalize_rows(projected)


def encode_item(item: PartFeatureSet, params: EncoderParams) -> PartFeatureSet:
    return item.with_features(encode(item.features, params).astype(np.float32))


def encode_dataset(dataset: Dataset, params: EncoderParams) -> Dataset:
    return dataset.map_items(lambda item: encode_item(item, params))
