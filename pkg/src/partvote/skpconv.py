"""Kernel point convolutions over the part graph.

The plain variant weighs each neighbor by the proximity of its (LRF-rotated)
offset to a set of kernel points. The spherical variant first projects the
offset onto the unit sphere, so only the neighbor's direction matters,
making the layer invariant to global scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, graph_conv, relu
from .nn import BatchNormState, batch_norm


@dataclass
class KernelLayout:
    centers: np.ndarray      # (K, 3); optionally the last one at the origin
    sigma: float
    has_origin: bool = False

    @property
    def count(self):
        return len(self.centers)


@dataclass
class GraphNeighborhood:
    """Per-node neighbor lists with each node's LRF rotation."""

    neighbors: list[list[int]]
    rotations: np.ndarray    # (N, 3, 3), rows are the LRF axes

    @classmethod
    def from_graph(cls, graph):
        nbrs = graph.neighbor_lists()
        rots = np.stack([p.lrf if p.lrf is not None else np.eye(3) for p in graph.parts])
        return cls(nbrs, rots)


def spherical_fibonacci(k: int) -> np.ndarray:
    """Deterministic near-uniform placement of k points on the unit sphere."""
    if k < 1:
        raise ValueError("need k >= 1")
    i = np.arange(k, dtype=np.float64)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / k
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = golden * i
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def make_kernel_layout(k: int, sigma: float, origin: bool = False) -> KernelLayout:
    """k kernel points total; with ``origin`` the last one sits at the center."""
    if k < 2:
        raise ValueError("need k >= 2")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if origin:
        centers = np.vstack([spherical_fibonacci(k - 1), np.zeros((1, 3))])
    else:
        centers = spherical_fibonacci(k)
    return KernelLayout(centers, float(sigma), has_origin=origin)


def influence(offset, center, sigma) -> float:
    """Linear falloff from the kernel point, zero beyond distance sigma."""
    return max(0.0, 1.0 - np.linalg.norm(np.asarray(offset) - np.asarray(center)) / sigma)


def influence_matrix(centers, nbrs: GraphNeighborhood, layout: KernelLayout,
                     spherical: bool, use_lrf: bool = True) -> np.ndarray:
    """(N, N, K) kernel influences of every neighbor offset, zero elsewhere.

    Offsets are expressed in each node's LRF. The spherical variant
    normalizes offsets to unit length; a zero-length offset contributes
    through the origin kernel only.
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = len(centers)
    k = layout.count
    h = np.zeros((n, n, k))
    for i in range(n):
        js = nbrs.neighbors[i]
        if not js:
            continue
        offsets = centers[js] - centers[i]
        if use_lrf:
            offsets = offsets @ nbrs.rotations[i].T
        norms = np.linalg.norm(offsets, axis=1)
        if spherical:
            zero = norms < 1e-9
            safe = np.where(zero, 1.0, norms)
            offsets = offsets / safe[:, None]
            offsets[zero] = 0.0
        dist = np.linalg.norm(offsets[:, None, :] - layout.centers[None, :, :], axis=2)
        infl = np.maximum(0.0, 1.0 - dist / layout.sigma)
        if spherical and np.any(norms < 1e-9):
            zero = norms < 1e-9
            infl[zero] = 0.0
            if layout.has_origin:
                infl[zero, k - 1] = 1.0
        h[i, js, :] = infl
    return h


def kpconv_forward(centers, feats, nbrs: GraphNeighborhood, layout: KernelLayout,
                   weights, use_lrf: bool = True) -> Tensor:
    """Kernel point convolution on raw (LRF-rotated) neighbor offsets."""
    h = influence_matrix(centers, nbrs, layout, spherical=False, use_lrf=use_lrf)
    return graph_conv(h, feats, weights)


def skpconv_forward(centers, feats, nbrs: GraphNeighborhood, layout: KernelLayout,
                    weights, use_lrf: bool = True) -> Tensor:
    """Spherical variant: neighbor offsets are projected to the unit sphere."""
    h = influence_matrix(centers, nbrs, layout, spherical=True, use_lrf=use_lrf)
    return graph_conv(h, feats, weights)


def conv_layer(influence_h, feats, weights, bn: BatchNormState, training: bool) -> Tensor:
    """One graph convolution block: conv, batch norm, ReLU.

    Takes a precomputed influence matrix so the geometry is shared across
    the stacked layers of one object.
    """
    return relu(batch_norm(graph_conv(influence_h, feats, weights), bn, training))
