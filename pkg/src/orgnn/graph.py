"""
Blueprint: OR-GNN - Graph Layers

One complete graph per part: row 0 is the target (initialized to the mean of
its neighbors), rows 1..n the neighbors. Each layer computes node confidences
(cosine to the mean of the other nodes), pairwise affinities (sigmoid of a
linear projection of the squared difference), then a confidence- and
affinity-weighted aggregation followed by a linear map and ReLU.

Components:
1. GraphState / LayerParams / AggregationMode
2. node_confidence, edge_affinity, aggregation weights
3. layer_forward / graph_forward (with caches)
4. graph_backward (manual backpropagation through all layers)
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from ..utils.logger import setup_logger

logger = setup_logger(__name__)


class AggregationMode(str, Enum):
    ORGNN = "orgnn"        # learned affinity + outlier-aware confidence
    GNN = "gnn"            # learned affinity, confidence fixed to 1
    AVERAGE = "average"    # plain mean of the other nodes, no parameters


@dataclass(frozen=True, eq=False)
class LayerParams:
    W: np.ndarray   # D x D
    V: np.ndarray   # D
    b: float


@dataclass(eq=False)
class GraphState:
    """Node features of one part's graph at one layer"""
    part: int
    nodes: np.ndarray
    confidences: Optional[np.ndarray] = None
    affinities: Optional[np.ndarray] = None

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @classmethod
    def from_neighbors(cls, part: int, neighbor_features: np.ndarray) -> "GraphState":
        neighbors = np.atleast_2d(np.asarray(neighbor_features, dtype=np.float64))
        if neighbors.shape[0] < 1:
            raise ValueError("a graph needs at least one neighbor")
        target = neighbors.mean(axis=0, keepdims=True)
        return cls(part=part, nodes=np.vstack([target, neighbors]))


@dataclass(eq=False)
class _ConfidenceCache:
    mean_others: np.ndarray
    node_norms: np.ndarray
    mean_norms: np.ndarray
    valid: np.ndarray


@dataclass(eq=False)
class LayerCache:
    """Everything layer_backward needs from the forward pass"""
    inputs: np.ndarray
    confidences: np.ndarray
    conf_cache: Optional[_ConfidenceCache]
    diff: Optional[np.ndarray]
    affinities: np.ndarray
    weights: np.ndarray
    totals: np.ndarray
    aggregated: np.ndarray
    pre_activation: np.ndarray
    outputs: np.ndarray


def _mean_of_others(nodes: np.ndarray) -> np.ndarray:
    count = nodes.shape[0]
    return (nodes.sum(axis=0, keepdims=True) - nodes) / (count - 1)


def _confidences(nodes: np.ndarray) -> Tuple[np.ndarray, _ConfidenceCache]:
    others = _mean_of_others(nodes)
    node_norms = np.linalg.norm(nodes, axis=1)
    mean_norms = np.linalg.norm(others, axis=1)
    valid = (node_norms > 0) & (mean_norms > 0)
    denom = np.where(valid, node_norms * mean_norms, 1.0)
    conf = np.where(valid, np.sum(nodes * others, axis=1) / denom, 0.0)
    return conf, _ConfidenceCache(others, node_norms, mean_norms, valid)


def node_confidences(state: GraphState) -> np.ndarray:
    """Cosine of every node to the mean of all other nodes (0 when a norm is 0)"""
    if state.num_nodes < 2:
        raise ValueError("confidence needs at least two nodes")
    return _confidences(state.nodes)[0]


def node_confidence(state: GraphState, node: int) -> float:
    return float(node_confidences(state)[node])


def _pairwise_diff(nodes: np.ndarray) -> np.ndarray:
    return nodes[:, None, :] - nodes[None, :, :]


def edge_affinities(state: GraphState, layer: LayerParams) -> np.ndarray:
    """sigma(V . (x_i - x_j)^2 + b) for all pairs (diagonal = sigma(b))"""
    diff = _pairwise_diff(state.nodes)
    return expit((diff ** 2) @ layer.V + layer.b)


def edge_affinity(state: GraphState, layer: LayerParams, i: int, j: int) -> float:
    if i == j:
        raise ValueError("affinity is defined between distinct nodes")
    d = state.nodes[i] - state.nodes[j]
    return float(expit(np.dot(layer.V, d * d) + layer.b))


def aggregation_weights(confidences: np.ndarray, affinities: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unnormalized weights c+_j a_ij (no self-loops) and their row totals.
    Negative confidences are clamped to 0 so every row stays a convex combination.
    """
    weights = np.maximum(confidences, 0.0)[None, :] * affinities
    np.fill_diagonal(weights, 0.0)
    return weights, weights.sum(axis=1)


def layer_forward_cached(nodes: np.ndarray, layer: Optional[LayerParams],
                         mode: AggregationMode = AggregationMode.ORGNN) -> LayerCache:
    count = nodes.shape[0]
    if count < 2:
        raise ValueError("a graph layer needs at least two nodes")

    conf_cache = None
    if mode is AggregationMode.ORGNN:
        conf, conf_cache = _confidences(nodes)
    else:
        conf = np.ones(count)

    diff = None
    if mode is AggregationMode.AVERAGE:
        affinities = np.ones((count, count))
    else:
        diff = _pairwise_diff(nodes)
        affinities = expit((diff ** 2) @ layer.V + layer.b)

    weights, totals = aggregation_weights(conf, affinities)
    has_weight = totals > 0
    safe_totals = np.where(has_weight, totals, 1.0)
    # A node with no incoming weight keeps its own feature
    aggregated = np.where(has_weight[:, None], (weights @ nodes) / safe_totals[:, None], nodes)

    if mode is AggregationMode.AVERAGE:
        pre = aggregated
        outputs = aggregated
    else:
        pre = aggregated @ layer.W.T
        outputs = np.maximum(pre, 0.0)
    return LayerCache(nodes, conf, conf_cache, diff, affinities, weights, totals, aggregated, pre, outputs)


def layer_forward(state: GraphState, layer: Optional[LayerParams],
                  mode: AggregationMode = AggregationMode.ORGNN) -> GraphState:
    """
    One layer: confidences, affinities, weighted aggregation, linear map, ReLU

    Args:
        state: Graph at layer t
        layer: W, V, b of this part and layer (unused in AVERAGE mode)
        mode: Aggregation variant

    Returns:
        GraphState: Graph at layer t+1, carrying the confidences and affinities used
    """
    cache = layer_forward_cached(state.nodes, layer, mode)
    return GraphState(part=state.part, nodes=cache.outputs,
                      confidences=cache.confidences, affinities=cache.affinities)


def graph_forward(state: GraphState, layers: List[LayerParams],
                  mode: AggregationMode = AggregationMode.ORGNN) -> Tuple[np.ndarray, List[LayerCache]]:
    """Run len(layers) layers; returns final node features and per-layer caches"""
    nodes = state.nodes
    caches = []
    for layer in layers:
        cache = layer_forward_cached(nodes, layer, mode)
        caches.append(cache)
        nodes = cache.outputs
    return nodes, caches


def _confidence_backward(cache: LayerCache, d_conf: np.ndarray) -> np.ndarray:
    cc = cache.conf_cache
    x, m = cache.inputs, cc.mean_others
    count = x.shape[0]
    g = np.where(cc.valid, d_conf, 0.0)[:, None]
    nx = np.where(cc.valid, cc.node_norms, 1.0)[:, None]
    nm = np.where(cc.valid, cc.mean_norms, 1.0)[:, None]
    c = cache.confidences[:, None]
    d_direct = g * (m / (nx * nm) - c * x / nx ** 2)
    d_mean = g * (x / (nx * nm) - c * m / nm ** 2)
    # mean_others_i = (sum_j x_j - x_i) / (count - 1)
    return d_direct + (d_mean.sum(axis=0, keepdims=True) - d_mean) / (count - 1)


def layer_backward(cache: LayerCache, layer: Optional[LayerParams], d_out: np.ndarray,
                   mode: AggregationMode = AggregationMode.ORGNN,
                   need_input_grad: bool = True) -> Tuple[Optional[np.ndarray], Optional[np.ndarray],
                                                          Optional[np.ndarray], float]:
    """
    Backpropagate d loss / d outputs through one layer

    Returns:
        Tuple: (d inputs or None, dW, dV, db); parameter gradients are None in AVERAGE mode
    """
    x = cache.inputs
    if mode is AggregationMode.AVERAGE:
        d_agg = d_out
        d_w = d_v = None
        d_b = 0.0
    else:
        d_pre = d_out * (cache.pre_activation > 0)
        d_w = d_pre.T @ cache.aggregated
        d_agg = d_pre @ layer.W

    has_weight = cache.totals > 0
    safe_totals = np.where(has_weight, cache.totals, 1.0)
    d_agg_weighted = np.where(has_weight[:, None], d_agg, 0.0)

    # agg_i = sum_j w_ij x_j / Z_i
    d_weights = (d_agg_weighted @ x.T - np.sum(d_agg_weighted * cache.aggregated, axis=1, keepdims=True)) \
        / safe_totals[:, None]
    np.fill_diagonal(d_weights, 0.0)

    d_x = None
    if need_input_grad:
        normalized = cache.weights / safe_totals[:, None]
        d_x = normalized.T @ d_agg_weighted + np.where(has_weight[:, None], 0.0, d_agg)

    conf_plus = np.maximum(cache.confidences, 0.0)
    if mode is not AggregationMode.AVERAGE:
        d_aff = d_weights * conf_plus[None, :]
        d_u = d_aff * cache.affinities * (1.0 - cache.affinities)
        sq = cache.diff ** 2
        d_v = np.einsum("ij,ijd->d", d_u, sq)
        d_b = float(d_u.sum())
        if need_input_grad:
            spread = 2.0 * d_u[:, :, None] * cache.diff * layer.V[None, None, :]
            d_x += spread.sum(axis=1) - spread.sum(axis=0)

    if mode is AggregationMode.ORGNN and need_input_grad:
        d_conf_plus = np.sum(d_weights * cache.affinities, axis=0)
        d_conf = d_conf_plus * (cache.confidences > 0)
        d_x += _confidence_backward(cache, d_conf)

    return d_x, d_w, d_v, d_b


def graph_backward(caches: List[LayerCache], layers: List[LayerParams], d_final: np.ndarray,
                   mode: AggregationMode = AggregationMode.ORGNN) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """Per-layer (dW, dV, db), first layer first"""
    grads: List[Tuple[np.ndarray, np.ndarray, float]] = [None] * len(caches)
    d_nodes = d_final
    for t in range(len(caches) - 1, -1, -1):
        d_nodes, d_w, d_v, d_b = layer_backward(caches[t], layers[t], d_nodes, mode, need_input_grad=t > 0)
        grads[t] = (d_w, d_v, d_b)
    return grads


def kink_signature(caches: List[LayerCache]) -> Tuple[bytes, ...]:
    """Active-set pattern of every non-smooth point (ReLU, confidence clamp, empty rows)"""
    parts = []
    for cache in caches:
        parts.append(np.packbits(cache.pre_activation > 0).tobytes())
        parts.append(np.packbits(cache.confidences > 0).tobytes())
        parts.append(np.packbits(cache.totals > 0).tobytes())
    return tuple(parts)
