"""The full classifier: part encoder, stacked graph convolutions, center
voting and cluster classification, with a global max-pool fallback for the
pooling ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, softmax, softmax_cross_entropy, tmax
from .config import RunConfig
from .nn import (ParamStore, init_affine_layer, init_batch_norm,
                 init_part_encoder, mlp, part_encoder)
from .partgraph import PartGraph
from .skpconv import GraphNeighborhood, conv_layer, influence_matrix, make_kernel_layout
from .voting import (VoteConfig, classify_clusters, cluster_class_loss,
                     cluster_votes, predict_votes, select_prediction,
                     total_loss, vote_loss)


@dataclass
class PreparedObject:
    """Everything the network needs about one object, precomputed once."""

    parts: list
    canonical: np.ndarray        # (P, n, 3)
    influence: np.ndarray        # (P, P, K)
    scale: float                 # object bounding radius
    label: int = -1
    object_id: str = ""
    object_parts: np.ndarray | None = None   # per-part object-dominance mask


@dataclass
class ForwardResult:
    predicted_class: int
    logits: Tensor
    class_loss: Tensor | None = None
    vote_loss: Tensor | None = None
    clusters: list | None = None
    selected_cluster: int = -1


class PartVoteNet:
    """Parameter container plus forward/loss over prepared part graphs."""

    def __init__(self, config: RunConfig, num_classes: int, rng: np.random.Generator):
        self.config = config
        self.num_classes = num_classes
        self.store = ParamStore()
        widths = config.encoder_width_list
        f_part = widths[-1]
        f_conv = config.conv_width
        self.encoder = init_part_encoder(self.store, "encoder", widths, rng)
        self.layout = make_kernel_layout(config.kernel_count, config.kernel_sigma,
                                         origin=config.kernel_origin)
        self.conv_weights = []
        self.conv_bns = []
        fin = f_part
        for i in range(config.conv_layers):
            w = rng.normal(0.0, np.sqrt(2.0 / (fin * self.layout.count)),
                           size=(self.layout.count, fin, f_conv))
            self.conv_weights.append(self.store.add(f"conv{i}.W", w))
            self.conv_bns.append(init_batch_norm(self.store, f"conv{i}.bn", f_conv))
            fin = f_conv
        self.vote_head = [
            init_affine_layer(self.store, "vote.fc0", f_conv, max(f_conv // 2, 4), rng),
            init_affine_layer(self.store, "vote.fc1", max(f_conv // 2, 4), 3, rng),
        ]
        self.cls_head = [
            init_affine_layer(self.store, "cls.fc0", f_conv, max(f_conv // 2, 4), rng),
            init_affine_layer(self.store, "cls.fc1", max(f_conv // 2, 4), num_classes, rng),
        ]
        self.vote_cfg = VoteConfig(config.num_clusters, config.cluster_radius,
                                   config.vote_loss_weight)

    def prepare(self, graph: PartGraph, scale: float, label: int = -1,
                object_id: str = "", object_points: int = -1) -> PreparedObject:
        """Precompute the tensors a forward pass needs from a part graph.

        When ``object_points`` is set, points with lower indices belong to the
        object; a part counts as an object part when at least half its member
        points do.
        """
        canonical = np.stack([p.canonical_points for p in graph.parts])
        centers = np.stack([p.center for p in graph.parts])
        nbrs = GraphNeighborhood.from_graph(graph)
        h = influence_matrix(centers, nbrs, self.layout,
                             spherical=self.config.layer == "skpconv",
                             use_lrf=self.config.use_lrf)
        mask = None
        if object_points >= 0:
            mask = np.array([(p.member_indices < object_points).mean() >= 0.5
                             for p in graph.parts])
        return PreparedObject(graph.parts, canonical, h, scale, label, object_id, mask)

    def part_features(self, prep: PreparedObject, training: bool) -> Tensor:
        feats = part_encoder(prep.canonical, self.encoder, training)
        for w, bn in zip(self.conv_weights, self.conv_bns):
            feats = conv_layer(prep.influence, feats, w, bn, training)
        return feats

    def forward(self, prep: PreparedObject, training: bool = False,
                label: int | None = None) -> ForwardResult:
        feats = self.part_features(prep, training)
        if self.config.pooling == "maxpool":
            pooled = tmax(feats, axis=0, keepdims=True)
            logits = mlp(pooled, self.cls_head)
            result = ForwardResult(int(np.argmax(logits.data[0])), logits)
            if label is not None:
                result.class_loss = softmax_cross_entropy(logits, [label])
            return result
        votes = predict_votes(feats, prep.parts, self.vote_head, prep.scale)
        clusters = cluster_votes(votes, self.vote_cfg)
        classify_clusters(clusters, feats, self.cls_head)
        cls, selected = select_prediction(clusters)
        result = ForwardResult(cls, clusters[selected].logits,
                               clusters=clusters, selected_cluster=selected)
        if label is not None:
            result.class_loss = cluster_class_loss(
                clusters, label, self.num_classes, prep.scale,
                self.vote_cfg.cluster_radius)
            result.vote_loss = vote_loss(votes, prep.object_parts)
        return result

    def loss(self, prep: PreparedObject, training: bool = True) -> tuple[Tensor, int]:
        result = self.forward(prep, training=training, label=prep.label)
        lam = 0.0 if self.config.pooling == "maxpool" else self.config.vote_loss_weight
        return total_loss(result.class_loss, result.vote_loss, lam), result.predicted_class

    def predict(self, prep: PreparedObject) -> int:
        return self.forward(prep, training=False).predicted_class

    def confidence(self, prep: PreparedObject) -> float:
        result = self.forward(prep, training=False)
        return float(softmax(result.logits.data[0]).max())
