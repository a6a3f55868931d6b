"""
Blueprint: Encoder - Losses

Identification (softmax cross-entropy) and batch-hard triplet losses with
analytic gradients.

Components:
1. softmax_cross_entropy / identification_loss
2. Batch-hard mining (farthest positive, nearest negative)
3. Hinge triplet loss, subgradient 0 at the kink
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import log_softmax, softmax

from ..utils.logger import setup_logger

logger = setup_logger(__name__)

DEFAULT_MARGIN = 0.3


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. the logits"""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = np.arange(logits.shape[0])
    loss = -log_softmax(logits, axis=1)[rows, labels].mean()
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return float(loss), grad / logits.shape[0]


def identification_loss(features: np.ndarray, labels: np.ndarray,
                        classifier: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Softmax cross-entropy of a linear classifier, averaged over the batch

    Args:
        features: B x D
        labels: B class indices into the classifier rows
        classifier: C x D

    Returns:
        Tuple: loss, d loss / d features (B x D), d loss / d classifier (C x D)
    """
    features = np.asarray(features, dtype=np.float64)
    classifier = np.asarray(classifier, dtype=np.float64)
    if features.shape[1] != classifier.shape[1]:
        raise ValueError(f"feature dim {features.shape[1]} does not match classifier dim {classifier.shape[1]}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classifier.shape[0]:
        raise ValueError("label outside classifier range")
    loss, dlogits = softmax_cross_entropy(features @ classifier.T, labels)
    return loss, dlogits @ classifier, dlogits.T @ features


@dataclass(frozen=True, eq=False)
class TripletBatch:
    """Anchors with their hardest in-batch positive and negative (-1 = none)"""
    features: np.ndarray
    labels: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    margin: float = DEFAULT_MARGIN

    @property
    def valid(self) -> np.ndarray:
        return (self.positives >= 0) & (self.negatives >= 0)


def mine_triplets(features: np.ndarray, labels: np.ndarray, margin: float = DEFAULT_MARGIN) -> TripletBatch:
    """Batch-hard mining under Euclidean distance"""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    dist = cdist(features, features)
    same = labels[:, None] == labels[None, :]
    not_self = ~np.eye(len(labels), dtype=bool)
    pos_mask = same & not_self
    neg_mask = ~same

    positives = np.where(pos_mask.any(axis=1), np.where(pos_mask, dist, -np.inf).argmax(axis=1), -1)
    negatives = np.where(neg_mask.any(axis=1), np.where(neg_mask, dist, np.inf).argmin(axis=1), -1)
    skipped = int(np.sum((positives < 0) | (negatives < 0)))
    if skipped:
        logger.warning(f"{skipped} anchor(s) without an in-batch positive or negative skipped")
    return TripletBatch(features=features, labels=labels, positives=positives, negatives=negatives, margin=margin)


def _unit_diff(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = a - b
    norm = np.linalg.norm(diff, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    return norm, np.where(norm[:, None] > 0, diff / safe[:, None], 0.0)


def triplet_loss(batch: TripletBatch) -> Tuple[float, np.ndarray]:
    """
    Mean hinge max(psi(a,p) - psi(a,n) + margin, 0) over valid anchors

    Returns:
        Tuple[float, np.ndarray]: loss and d loss / d features (B x D)
    """
    x = batch.features
    grad = np.zeros_like(x)
    anchors = np.flatnonzero(batch.valid)
    if anchors.size == 0:
        return 0.0, grad
    pos, neg = batch.positives[anchors], batch.negatives[anchors]
    d_ap, u_ap = _unit_diff(x[anchors], x[pos])
    d_an, u_an = _unit_diff(x[anchors], x[neg])
    hinge = d_ap - d_an + batch.margin
    active = (hinge > 0).astype(np.float64)[:, None] / anchors.size

    np.add.at(grad, anchors, active * (u_ap - u_an))
    np.add.at(grad, pos, -active * u_ap)
    np.add.at(grad, neg, active * u_an)
    return float(np.maximum(hinge, 0.0).mean()), grad
