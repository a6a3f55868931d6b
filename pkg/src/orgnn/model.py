"""
Blueprint: OR-GNN - Model

Per-part graph networks over a target and its neighborhood: parameters,
reconstruction, and the per-part identity cross-entropy loss with gradients
through every layer.

Components:
1. ORGNNParams (W, V, b per part and layer; classifier per part)
2. Graph construction per part (canonical member order)
3. reconstruct / reconstruct_representation
4. orgnn_loss
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import EmptyNeighborhoodError, MissingLabelError
from ..core.features import concat_normalized, normalize_rows
from ..core.types import PartFeatureSet
from ..encoder.losses import softmax_cross_entropy
from .graph import AggregationMode, GraphState, LayerCache, LayerParams, graph_backward, graph_forward
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(eq=False)
class ORGNNParams:
    """W: M x T x D x D, V: M x T x D, b: M x T, C: M x num_ids x D"""
    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    C: np.ndarray
    label_ids: Tuple[int, ...]
    mode: AggregationMode = AggregationMode.ORGNN
    loss_history: List[float] = field(default_factory=list)
    validation_history: List[float] = field(default_factory=list)
    selected_epoch: Optional[int] = None

    @property
    def num_parts(self) -> int:
        return self.W.shape[0]

    @property
    def num_layers(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return self.W.shape[2]

    @property
    def num_ids(self) -> int:
        return self.C.shape[1]

    def layer(self, part: int, t: int) -> LayerParams:
        return LayerParams(W=self.W[part, t], V=self.V[part, t], b=float(self.b[part, t]))

    def layers(self, part: int, count: Optional[int] = None) -> List[LayerParams]:
        count = self.num_layers if count is None else count
        return [self.layer(part, t) for t in range(count)]

    def label_index(self, person_id: Optional[int]) -> int:
        if person_id is None:
            raise MissingLabelError("graph network loss needs a person_id")
        try:
            return self.label_ids.index(int(person_id))
        except ValueError as e:
            raise MissingLabelError(f"person_id {person_id} is not a training identity") from e

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"W": self.W, "V": self.V, "b": self.b, "C": self.C}

    def copy(self) -> "ORGNNParams":
        return ORGNNParams(self.W.copy(), self.V.copy(), self.b.copy(), self.C.copy(), self.label_ids, self.mode,
                           list(self.loss_history), list(self.validation_history), self.selected_epoch)

    @classmethod
    def initialize(cls, num_parts: int, dim: int, num_layers: int, label_ids: Sequence[int], seed: int,
                   mode: AggregationMode = AggregationMode.ORGNN) -> "ORGNNParams":
        """W = I + N(0, 0.01^2), V ~ N(0, 0.01^2), b = 0, C ~ N(0, 0.01^2)"""
        rng = np.random.default_rng(seed)
        W = np.eye(dim)[None, None] + rng.normal(0.0, 0.01, size=(num_parts, num_layers, dim, dim))
        V = rng.normal(0.0, 0.01, size=(num_parts, num_layers, dim))
        b = np.zeros((num_parts, num_layers))
        C = rng.normal(0.0, 0.01, size=(num_parts, len(label_ids), dim))
        return cls(W, V, b, C, tuple(int(i) for i in label_ids), AggregationMode(mode))


@dataclass(eq=False)
class PartGraphRun:
    """Forward pass of one part's graph"""
    part: int
    initial: GraphState
    outputs: np.ndarray
    caches: List[LayerCache]
    layers: List[Optional[LayerParams]]

    @property
    def reconstruction(self) -> np.ndarray:
        return self.outputs[0]


def canonical_neighbors(neighbors: Sequence[PartFeatureSet]) -> List[PartFeatureSet]:
    """Sum order is fixed by image_id, so member order never changes the result"""
    return sorted(neighbors, key=lambda item: item.image_id)


def part_node_features(neighbors: Sequence[PartFeatureSet], part: int, skip_occluded: bool = True) -> np.ndarray:
    """
    Neighbor rows for one part's graph. With skip_occluded, only neighbors whose
    part is visible take part, unless none of them is.
    """
    chosen = [item for item in neighbors if item.visibility_mask[part]] if skip_occluded else []
    if not chosen:
        chosen = list(neighbors)
    return normalize_rows(np.stack([item.features[part] for item in chosen]))


def run_graphs(neighbors: Sequence[PartFeatureSet], params: Optional[ORGNNParams], num_layers: Optional[int] = None,
               mode: Optional[AggregationMode] = None, skip_occluded: bool = True) -> List[PartGraphRun]:
    """Forward pass of every part's graph"""
    if not neighbors:
        raise EmptyNeighborhoodError("reconstruction needs at least one neighbor")
    mode = AggregationMode(mode or (params.mode if params is not None else AggregationMode.ORGNN))
    if params is None and mode is not AggregationMode.AVERAGE:
        raise ValueError(f"mode '{mode.value}' needs trained parameters")
    if num_layers is None:
        num_layers = params.num_layers if params is not None else 2
    if params is not None and num_layers > params.num_layers:
        raise ValueError(f"{num_layers} layers requested, parameters hold {params.num_layers}")

    ordered = canonical_neighbors(neighbors)
    runs = []
    for part in range(ordered[0].num_parts):
        state = GraphState.from_neighbors(part, part_node_features(ordered, part, skip_occluded))
        if mode is AggregationMode.AVERAGE:
            layers: List[Optional[LayerParams]] = [None] * num_layers
        else:
            layers = params.layers(part, num_layers)
        outputs, caches = graph_forward(state, layers, mode)
        runs.append(PartGraphRun(part, state, outputs, caches, layers))
    return runs


def reconstruct(target: PartFeatureSet, neighbors: Sequence[PartFeatureSet], params: Optional[ORGNNParams],
                num_layers: Optional[int] = None, mode: Optional[AggregationMode] = None,
                skip_occluded: bool = True) -> np.ndarray:
    """
    Reconstructed part features of the target (M x D, not yet normalized)

    Args:
        target: Image being reconstructed (its own features never enter the graph)
        neighbors: Its neighborhood (non-empty)
        params: Trained parameters (None allowed in AVERAGE mode)
        num_layers: T; 0 returns the neighbor mean
        mode: Aggregation variant (defaults to the mode the parameters were trained in)
        skip_occluded: Only neighbors with the part visible join that part's graph

    Returns:
        np.ndarray: Row 0 of every part's graph after T layers
    """
    runs = run_graphs(neighbors, params, num_layers, mode, skip_occluded)
    logger.debug(f"Reconstructed {target.image_id} from {len(neighbors)} neighbors")
    return np.stack([run.reconstruction for run in runs])


def reconstruct_representation(target: PartFeatureSet, neighbors: Sequence[PartFeatureSet],
                               params: Optional[ORGNNParams], **kwargs) -> np.ndarray:
    """Concatenation of the per-part L2-normalized reconstructions"""
    return concat_normalized(reconstruct(target, neighbors, params, **kwargs))


def orgnn_loss(runs: Sequence[PartGraphRun], label: int, params: ORGNNParams,
               mode: Optional[AggregationMode] = None,
               parts: Optional[Sequence[int]] = None) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean over parts of the identity cross-entropy of C_k x_k^T(target)

    Args:
        runs: Forward passes from run_graphs
        label: Classifier index of the target identity
        params: Parameters the runs were computed with
        mode: Aggregation variant used in the forward pass
        parts: Restrict the loss to these parts (default: all)

    Returns:
        Tuple: loss and gradients keyed like ORGNNParams.as_dict()
    """
    mode = AggregationMode(mode or params.mode)
    if not 0 <= label < params.num_ids:
        raise ValueError(f"label {label} outside classifier range {params.num_ids}")
    selected = [run for run in runs if parts is None or run.part in parts]
    grads = {name: np.zeros_like(value) for name, value in params.as_dict().items()}
    total = 0.0
    for run in selected:
        k = run.part
        x = run.reconstruction
        loss, d_logits = softmax_cross_entropy((params.C[k] @ x)[None, :], np.array([label]))
        d_logits = d_logits[0] / len(selected)
        total += loss
        grads["C"][k] = np.outer(d_logits, x)

        d_final = np.zeros_like(run.outputs)
        d_final[0] = params.C[k].T @ d_logits
        if mode is AggregationMode.AVERAGE:
            continue
        for t, (d_w, d_v, d_b) in enumerate(graph_backward(run.caches, run.layers, d_final, mode)):
            grads["W"][k, t] = d_w
            grads["V"][k, t] = d_v
            grads["b"][k, t] = d_b
    return total / max(len(selected), 1), grads
