"""Center voting: per-part offset prediction, vote clustering via farthest
point sampling, cluster-wise feature aggregation and classification.

Each part votes for the object center in its own reference frame; object
parts produce tight vote clusters around the true center while background
parts scatter, which is what lets the most confident cluster isolate the
object. Offsets are cast in units of the input cloud's bounding radius so
the whole scheme stays scale-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, add, gather_rows, mul, rotate_rows, softmax,
                       softmax_cross_entropy, tmax, tmean, tsum)
from .geometry import farthest_point_sampling
from .nn import AffineLayer, mlp


@dataclass
class VoteConfig:
    num_clusters: int = 5
    cluster_radius: float = 0.25    # fraction of the object bounding radius
    vote_loss_weight: float = 1.0

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.cluster_radius <= 0:
            raise ValueError("cluster_radius must be > 0")


@dataclass
class VoteSet:
    votes: Tensor            # (N, 3) global-frame vote positions
    offsets: Tensor          # (N, 3) local-frame offsets
    features: Tensor         # (N, F) part features the votes were cast from
    centers: np.ndarray      # (N, 3) part centers
    scale: float             # cloud bounding radius (clustering, loss units)


@dataclass
class ClusterPrediction:
    center: np.ndarray
    member_parts: np.ndarray
    logits: Tensor | None = None
    confidence: float = 0.0


def predict_votes(part_feats: Tensor, parts, head: list[AffineLayer],
                  scale: float) -> VoteSet:
    """Cast one center vote per part.

    The head predicts an offset in the part's reference frame; the vote is
    the part center plus the inverse-rotated offset, in units of the part's
    own bounding radius. A local unit keeps votes stable when clutter or
    crops change the global extent of the cloud, while remaining exactly
    equivariant to global rescaling.
    """
    offsets = mlp(part_feats, head)
    if offsets.shape[-1] != 3:
        raise ValueError(f"vote head must output 3 values, got {offsets.shape}")
    rot_inv = np.stack([(p.lrf if p.lrf is not None else np.eye(3)).T for p in parts])
    centers = np.stack([p.center for p in parts])
    units = np.array([[max(p.bounding_radius, 1e-12)] for p in parts])
    votes = add(mul(rotate_rows(offsets, rot_inv), units), centers)
    return VoteSet(votes, offsets, part_feats, centers, scale)


def vote_loss(votes: VoteSet, object_parts=None) -> Tensor:
    """Mean squared distance of the (scale-normalized) votes to the origin.

    Training objects are centered, so the origin is the supervision target.
    With an ``object_parts`` mask, only object-dominated parts are supervised:
    clutter parts have no meaningful center to vote for.
    """
    selected = votes.votes
    if object_parts is not None and object_parts.any() and not object_parts.all():
        selected = gather_rows(selected, np.flatnonzero(object_parts))
    scaled = mul(selected, 1.0 / votes.scale)
    return tmean(tsum(mul(scaled, scaled), axis=1))


def cluster_votes(votes: VoteSet, cfg: VoteConfig) -> list[ClusterPrediction]:
    """FPS-selected cluster centers among the votes; members by fixed radius.

    FPS is seeded at part 0's vote. The radius is relative to the object
    bounding radius, so clustering commutes with global scaling.
    """
    pts = votes.votes.data
    n = len(pts)
    if n == 0:
        raise ValueError("no votes to cluster")
    m = min(cfg.num_clusters, n)
    chosen = farthest_point_sampling(pts, m, seed_index=0)
    radius = cfg.cluster_radius * votes.scale
    clusters = []
    for idx in chosen:
        d = np.linalg.norm(pts - pts[idx], axis=1)
        members = np.flatnonzero(d <= radius)
        clusters.append(ClusterPrediction(center=pts[idx].copy(), member_parts=members))
    return clusters


def classify_clusters(clusters: list[ClusterPrediction], part_feats: Tensor,
                      head: list[AffineLayer]) -> list[ClusterPrediction]:
    """Channel-wise max over member features, then the classification head."""
    for cluster in clusters:
        if cluster.member_parts.size == 0:
            raise ValueError("cluster with no members (upstream bug)")
        pooled = tmax(gather_rows(part_feats, cluster.member_parts), axis=0, keepdims=True)
        cluster.logits = mlp(pooled, head)
        cluster.confidence = float(softmax(cluster.logits.data[0]).max())
    return clusters


def select_prediction(clusters: list[ClusterPrediction]) -> tuple[int, int]:
    """(class index, cluster index) of the most confident cluster.

    Confidence ties break to the lowest cluster index.
    """
    if not clusters:
        raise ValueError("no clusters")
    best = int(np.argmax([c.confidence for c in clusters]))
    cls = int(np.argmax(clusters[best].logits.data[0]))
    return cls, best


def uniform_cross_entropy(logits: Tensor, num_classes: int) -> Tensor:
    """Cross entropy against the uniform distribution over classes."""
    total = softmax_cross_entropy(logits, [0])
    for c in range(1, num_classes):
        total = add(total, softmax_cross_entropy(logits, [c]))
    return mul(total, 1.0 / num_classes)


def cluster_class_loss(clusters: list[ClusterPrediction], label: int,
                       num_classes: int, scale: float, radius: float) -> Tensor:
    """Distance-aware classification loss over all clusters.

    Training objects are centered at the origin, so a cluster's distance to
    the origin says whether it found the object. Near-center clusters (within
    the clustering radius) learn the object label; off-center clusters learn
    to be unconfident via a uniform target, which is what makes max-softmax
    confidence a usable cluster selector on scenes with background. If no
    cluster lands near the center, the nearest one still carries the label.
    """
    dists = [float(np.linalg.norm(c.center)) for c in clusters]
    near = [d <= radius * scale for d in dists]
    if not any(near):
        near[int(np.argmin(dists))] = True
    terms = [softmax_cross_entropy(c.logits, [label]) if is_near
             else uniform_cross_entropy(c.logits, num_classes)
             for c, is_near in zip(clusters, near)]
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return mul(total, 1.0 / len(terms))


def total_loss(class_loss: Tensor, vote_loss_value: Tensor | None, lam: float) -> Tensor:
    """Classification loss plus weighted vote loss."""
    if vote_loss_value is None or lam == 0.0:
        return class_loss
    return add(class_loss, mul(vote_loss_value, lam))
