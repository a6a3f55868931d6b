"""
Blueprint: OR-GNN - Gradient Checks

Central finite-difference oracles for every hand-written backward pass. A
coordinate is skipped when its +/- perturbation moves the computation across a
non-smooth point (ReLU, confidence clamp, triplet hinge or re-mined triplets).

Components:
1. GradCheckResult
2. finite_difference_check (generic driver)
3. Checks: orgnn, triplet, identification, bce, encoder
4. run_gradchecks
"""

from dataclasses import dataclass
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.types import PartFeatureSet
from ..encoder.losses import identification_loss, mine_triplets, triplet_loss
from ..encoder.trainer import EncoderParams, encoder_batch_loss
from ..occlusion.visibility import occlusion_bce_loss
from .graph import AggregationMode, kink_signature
from .model import ORGNNParams, orgnn_loss, run_graphs
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
CHECK_NAMES = ("orgnn_loss", "gnn_loss", "triplet_loss", "identification_loss", "occlusion_bce_loss", "encoder_loss")
# Below this magnitude both gradients are treated as numerically zero
_ERROR_FLOOR = 1e-5

# Returns (loss, signature of the active set at these parameters)
LossFn = Callable[[], Tuple[float, Hashable]]


@dataclass
class GradCheckResult:
    name: str
    instances: int = 0
    checked: int = 0
    skipped: int = 0
    max_rel_error: float = 0.0
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance

    def merge(self, other: "GradCheckResult") -> None:
        self.instances += other.instances
        self.checked += other.checked
        self.skipped += other.skipped
        self.max_rel_error = max(self.max_rel_error, other.max_rel_error)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), _ERROR_FLOOR)


def finite_difference_check(name: str, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                            loss_fn: LossFn, step: float = DEFAULT_STEP,
                            tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    """
    Compare analytic gradients with central differences, one coordinate at a time

    Args:
        name: Label for the result
        params: Arrays the loss reads; perturbed in place and restored
        grads: Analytic gradients keyed like params
        loss_fn: Evaluates the loss at the current params
        step: Finite-difference step h
        tolerance: Maximum accepted relative error

    Returns:
        GradCheckResult: Coordinates checked/skipped and the worst relative error
    """
    result = GradCheckResult(name=name, instances=1, tolerance=tolerance)
    _, base_signature = loss_fn()
    for key in sorted(params):
        values = params[key]
        for idx in np.ndindex(values.shape):
            original = values[idx]
            values[idx] = original + step
            plus, sig_plus = loss_fn()
            values[idx] = original - step
            minus, sig_minus = loss_fn()
            values[idx] = original
            if sig_plus != base_signature or sig_minus != base_signature:
                result.skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * step)
            error = relative_error(float(grads[key][idx]), numeric)
            if error > result.max_rel_error:
                result.max_rel_error = error
            result.checked += 1
    return result


def _random_part_sets(rng: np.random.Generator, count: int, parts: int, dim: int) -> List[PartFeatureSet]:
    return [
        PartFeatureSet(image_id=f"n{i:02d}", features=rng.normal(size=(parts, dim)),
                       visibility_scores=np.ones(parts))
        for i in range(count)
    ]


def _random_orgnn_params(rng: np.random.Generator, parts: int, dim: int, layers: int, num_ids: int,
                         mode: AggregationMode) -> ORGNNParams:
    # Wider than the training initialization so every term contributes
    W = np.eye(dim)[None, None] + rng.normal(0.0, 0.3, size=(parts, layers, dim, dim))
    V = rng.normal(0.0, 0.5, size=(parts, layers, dim))
    b = rng.normal(0.0, 0.5, size=(parts, layers))
    C = rng.normal(0.0, 1.0, size=(parts, num_ids, dim))
    return ORGNNParams(W, V, b, C, tuple(range(num_ids)), mode)


def check_orgnn(instances: int = 20, seed: int = 0, dim: int = 8, neighbors: int = 4, parts: int = 2,
                layers: int = 2, num_ids: int = 5, mode: AggregationMode = AggregationMode.ORGNN,
                step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    """Graph-network loss through every layer, confidence and affinity"""
    rng = np.random.default_rng(seed)
    total = GradCheckResult(name=f"{AggregationMode(mode).value}_loss", tolerance=tolerance)
    for _ in range(instances):
        members = _random_part_sets(rng, neighbors, parts, dim)
        params = _random_orgnn_params(rng, parts, dim, layers, num_ids, mode)
        label = int(rng.integers(num_ids))

        def loss_fn() -> Tuple[float, Hashable]:
            runs = run_graphs(members, params, layers, mode, skip_occluded=False)
            loss, _ = orgnn_loss(runs, label, params, mode)
            return loss, tuple(kink_signature(run.caches) for run in runs)

        runs = run_graphs(members, params, layers, mode, skip_occluded=False)
        _, grads = orgnn_loss(runs, label, params, mode)
        total.merge(finite_difference_check(total.name, params.as_dict(), grads, loss_fn, step, tolerance))
    return total


def _batch_labels(rng: np.random.Generator, persons: int, per_person: int) -> np.ndarray:
    return rng.permutation(np.repeat(np.arange(persons), per_person))


def check_triplet(instances: int = 20, seed: int = 0, batch_persons: int = 4, per_person: int = 2,
                  dim: int = 8, margin: float = 0.3, step: float = DEFAULT_STEP,
                  tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    total = GradCheckResult(name="triplet_loss", tolerance=tolerance)
    for _ in range(instances):
        labels = _batch_labels(rng, batch_persons, per_person)
        params = {"features": rng.normal(size=(labels.size, dim))}

        def loss_fn() -> Tuple[float, Hashable]:
            batch = mine_triplets(params["features"], labels, margin)
            loss, _ = triplet_loss(batch)
            x = batch.features
            hinge = (np.linalg.norm(x - x[batch.positives], axis=1)
                     - np.linalg.norm(x - x[batch.negatives], axis=1) + margin) > 0
            return loss, (batch.positives.tobytes(), batch.negatives.tobytes(), hinge.tobytes())

        _, grad = triplet_loss(mine_triplets(params["features"], labels, margin))
        total.merge(finite_difference_check(total.name, params, {"features": grad}, loss_fn, step, tolerance))
    return total


def check_identification(instances: int = 20, seed: int = 0, batch: int = 6, dim: int = 8, num_ids: int = 5,
                         step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    total = GradCheckResult(name="identification_loss", tolerance=tolerance)
    for _ in range(instances):
        labels = rng.integers(num_ids, size=batch)
        params = {"features": rng.normal(size=(batch, dim)), "classifier": rng.normal(size=(num_ids, dim))}

        def loss_fn() -> Tuple[float, Hashable]:
            return identification_loss(params["features"], labels, params["classifier"])[0], None

        _, d_feat, d_cls = identification_loss(params["features"], labels, params["classifier"])
        grads = {"features": d_feat, "classifier": d_cls}
        total.merge(finite_difference_check(total.name, params, grads, loss_fn, step, tolerance))
    return total


def check_bce(instances: int = 20, seed: int = 0, parts: int = 6, step: float = DEFAULT_STEP,
              tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    total = GradCheckResult(name="occlusion_bce_loss", tolerance=tolerance)
    for _ in range(instances):
        labels = rng.integers(2, size=parts).astype(np.float64)
        params = {"scores": rng.uniform(0.05, 0.95, size=parts)}

        def loss_fn() -> Tuple[float, Hashable]:
            return occlusion_bce_loss(params["scores"], labels)[0], None

        _, grad = occlusion_bce_loss(params["scores"], labels)
        total.merge(finite_difference_check(total.name, params, {"scores": grad}, loss_fn, step, tolerance))
    return total


def check_encoder(instances: int = 5, seed: int = 0, parts: int = 2, raw_dim: int = 6, dim: int = 4,
                  batch_persons: int = 3, per_person: int = 2, margin: float = 0.3,
                  step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE) -> GradCheckResult:
    """Joint identification + triplet loss through the projection and normalization"""
    rng = np.random.default_rng(seed)
    total = GradCheckResult(name="encoder_loss", tolerance=tolerance)
    for _ in range(instances):
        labels = _batch_labels(rng, batch_persons, per_person)
        raw = rng.normal(size=(labels.size, parts, raw_dim))
        params = EncoderParams(rng.normal(size=(parts, raw_dim, dim)), rng.normal(size=(parts, batch_persons, dim)),
                               tuple(range(batch_persons)))

        def loss_fn() -> Tuple[float, Hashable]:
            loss, _ = encoder_batch_loss(params, raw, labels, margin)
            signature = []
            for p in range(parts):
                z = raw[:, p, :] @ params.projections[p]
                feats = z / np.linalg.norm(z, axis=1, keepdims=True)
                batch = mine_triplets(feats, labels, margin)
                hinge = (np.linalg.norm(feats - feats[batch.positives], axis=1)
                         - np.linalg.norm(feats - feats[batch.negatives], axis=1) + margin) > 0
                signature.append((batch.positives.tobytes(), batch.negatives.tobytes(), hinge.tobytes()))
            return loss, tuple(signature)

        _, grads = encoder_batch_loss(params, raw, labels, margin)
        total.merge(finite_difference_check(total.name, params.as_dict(), grads, loss_fn, step, tolerance))
    return total


def run_gradchecks(instances: int = 20, seed: int = 0, tolerance: float = DEFAULT_TOLERANCE,
                   names: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """
    Run every gradient oracle

    Args:
        instances: Random instances per check (the encoder check runs a quarter as many)
        seed: Master seed
        tolerance: Maximum accepted relative error
        names: Subset of check names to run (default: all)

    Returns:
        List[GradCheckResult]: One result per check
    """
    checks = {
        "orgnn_loss": lambda: check_orgnn(instances, seed, tolerance=tolerance),
        "gnn_loss": lambda: check_orgnn(instances, seed, mode=AggregationMode.GNN, tolerance=tolerance),
        "triplet_loss": lambda: check_triplet(instances, seed, tolerance=tolerance),
        "identification_loss": lambda: check_identification(instances, seed, tolerance=tolerance),
        "occlusion_bce_loss": lambda: check_bce(instances, seed, tolerance=tolerance),
        "encoder_loss": lambda: check_encoder(max(instances // 4, 1), seed, tolerance=tolerance),
    }
    unknown = set(names or ()) - set(CHECK_NAMES)
    if unknown:
        raise ValueError(f"unknown gradient checks: {', '.join(sorted(unknown))}")
    results = []
    for name, check in checks.items():
        if names and name not in names:
            continue
        result = check()
        level = logger.info if result.passed else logger.warning
        level(f"{name}: checked={result.checked} skipped={result.skipped} "
              f"max_rel_error={result.max_rel_error:.2e} passed={result.passed}")
        results.append(result)
    return results
