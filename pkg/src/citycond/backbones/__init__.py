from .common import GRAPH_KINDS, KINDS, Backbone, BackboneSpec
from .graph import Adjacency, GNNBackbone, GraphConv, STGCNBackbone
from .sequence import GRUBackbone, TCNBackbone, TransformerBackbone
from .trajectory import LSTMTrajectoryBackbone

_REGISTRY = {
    "gru": GRUBackbone,
    "tcn": TCNBackbone,
    "transformer": TransformerBackbone,
    "gnn": GNNBackbone,
    "stgcn": STGCNBackbone,
    "lstm_traj": LSTMTrajectoryBackbone,
}


def build_backbone(spec: BackboneSpec, cond, city_shapes, L_h: int, d_x: int, seed: int) -> Backbone:
    return _REGISTRY[spec.kind](spec, cond, city_shapes, L_h, d_x, seed)


__all__ = [
    "Adjacency", "Backbone", "BackboneSpec", "GNNBackbone", "GRAPH_KINDS", "GRUBackbone", "GraphConv",
    "KINDS", "LSTMTrajectoryBackbone", "STGCNBackbone", "TCNBackbone", "TransformerBackbone", "build_backbone",
]
