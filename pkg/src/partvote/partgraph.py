"""Part graphs: curvature-bounded region growing, per-part local reference
frames, surface/proximity connectivity with cone occlusion pruning, and
canonicalization of part point sets.

The local reference frame is anchored to the global vertical, which makes
every downstream representation invariant to rotations about z and (through
unit-sphere rescaling) to global scale.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .geometry import GlobalFrame, PointCloud, SpatialIndex, Z_AXIS


@dataclass
class GrowConfig:
    angle_threshold: float = 2.0     # radians of accumulated normal change per part
    max_parts: int = 128
    points_per_part: int = 128
    knn: int = 12
    real_data_multiplier: float = 3.0

    def __post_init__(self):
        if self.angle_threshold <= 0:
            raise ValueError("angle_threshold must be > 0")
        if self.points_per_part < 4:
            raise ValueError("points_per_part must be >= 4")

    def effective_threshold(self, real_data: bool) -> float:
        return self.angle_threshold * (self.real_data_multiplier if real_data else 1.0)


@dataclass
class Part:
    member_indices: np.ndarray          # sorted point indices
    center: np.ndarray                  # mean of member positions
    bounding_radius: float              # max member distance to center
    seed_index: int
    lrf: np.ndarray | None = None       # rows (v1, v2, v3)
    normal: np.ndarray | None = None    # covariance normal e3, sign-fixed
    canonical_points: np.ndarray | None = None
    degenerate_lrf: bool = False


@dataclass
class PartGraph:
    parts: list[Part]
    edges: set[tuple[int, int]] = field(default_factory=set)

    def neighbor_lists(self) -> list[list[int]]:
        nbrs = [[] for _ in self.parts]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
        return nbrs


def point_adjacency(cloud: PointCloud, knn: int) -> list[np.ndarray]:
    """Per-point neighbor lists: mesh 1-ring when faces exist, else k-NN."""
    if cloud.faces is not None and len(cloud.faces):
        nbrs = [set() for _ in range(len(cloud))]
        for a, b, c in cloud.faces:
            nbrs[a].update((b, c))
            nbrs[b].update((a, c))
            nbrs[c].update((a, b))
        return [np.array(sorted(s), dtype=np.int64) for s in nbrs]
    table = SpatialIndex(cloud.positions).knn_table(min(knn + 1, len(cloud)))
    return [row[row != i] for i, row in enumerate(table)]


def _angle(u, v):
    return math.acos(min(1.0, max(-1.0, float(u @ v))))


def grow_parts(cloud: PointCloud, cfg: GrowConfig, rng: np.random.Generator,
               adjacency=None, real_data: bool = False) -> list[Part]:
    """Grow disjoint parts breadth-first until each spends its curvature budget.

    Every admitted point adds the angle between its normal and the normal of
    the frontier point it was reached from; a part stops growing once the
    accumulated angle reaches the threshold. Points whose normal opposes the
    seed normal are never admitted. New seeds are drawn from unassigned
    points bordering already-assigned ones, falling back to uniform draws.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("empty cloud")
    if adjacency is None:
        adjacency = point_adjacency(cloud, cfg.knn)
    threshold = cfg.effective_threshold(real_data)
    normals = cloud.normals
    assigned = np.full(n, -1, dtype=np.int64)
    border: set[int] = set()
    parts: list[Part] = []

    def assign(idx, part_id):
        assigned[idx] = part_id
        border.discard(idx)
        for q in adjacency[idx]:
            if assigned[q] < 0:
                border.add(int(q))

    while len(parts) < cfg.max_parts:
        unassigned = np.flatnonzero(assigned < 0)
        if unassigned.size == 0:
            break
        border_list = sorted(border)
        if border_list:
            seed = border_list[rng.integers(len(border_list))]
        else:
            seed = int(unassigned[rng.integers(unassigned.size)])
        part_id = len(parts)
        seed_normal = normals[seed]
        members = [seed]
        assign(seed, part_id)
        acc = 0.0
        queue = deque([seed])
        while queue and acc < threshold:
            f = queue.popleft()
            for q in adjacency[f]:
                q = int(q)
                if assigned[q] >= 0:
                    continue
                if normals[q] @ seed_normal < 0:
                    continue
                members.append(q)
                assign(q, part_id)
                queue.append(q)
                acc += _angle(normals[f], normals[q])
                if acc >= threshold:
                    break
        member_idx = np.sort(np.array(members, dtype=np.int64))
        pos = cloud.positions[member_idx]
        center = pos.mean(axis=0)
        radius = float(np.linalg.norm(pos - center, axis=1).max())
        parts.append(Part(member_idx, center, radius, seed))
    return parts


def compute_lrf(part: Part, cloud: PointCloud, frame: GlobalFrame | None = None):
    """Rotation rows (v1, v2, v3) from the part normal and the vertical axis.

    v3 is the global vertical; v1 the horizontal component of the part
    normal; v2 completes the right-handed frame. A part normal parallel to
    the vertical leaves v1 undefined: the identity is returned and the part
    flagged degenerate.
    """
    z = (frame or GlobalFrame()).z
    pos = cloud.positions[part.member_indices]
    mean_normal = cloud.normals[part.member_indices].mean(axis=0)
    if len(pos) >= 3:
        centered = pos - pos.mean(axis=0)
        cov = centered.T @ centered / len(pos)
        evals, evecs = np.linalg.eigh(cov)
        scale = max(evals[-1], 1e-300)
        if evals[1] / scale < 1e-12:
            e3 = mean_normal  # rank-deficient spread, fall back to normals
        else:
            e3 = evecs[:, 0]
    else:
        e3 = mean_normal
    norm = np.linalg.norm(e3)
    e3 = e3 / norm if norm > 1e-12 else z.copy()
    if e3 @ mean_normal < 0:
        e3 = -e3
    part.normal = e3
    horizontal = e3 - (e3 @ z) * z
    h = np.linalg.norm(horizontal)
    if h < 1e-6:
        part.lrf = np.eye(3)
        part.degenerate_lrf = True
        return part.lrf, True
    v1 = horizontal / h
    v3 = z
    v2 = np.cross(v3, v1)
    part.lrf = np.stack([v1, v2, v3])
    part.degenerate_lrf = False
    return part.lrf, False


def canonicalize_part(part: Part, cloud: PointCloud, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Fixed-size part sample, centered, LRF-rotated, scaled to the unit ball.

    Undersized parts are sampled with replacement so downstream tensor
    shapes stay fixed.
    """
    if part.lrf is None:
        raise ValueError("compute_lrf must run before canonicalize_part")
    members = part.member_indices
    replace = len(members) < n
    chosen = rng.choice(members, size=n, replace=replace)
    local = (cloud.positions[chosen] - part.center) @ part.lrf.T
    max_norm = float(np.linalg.norm(local, axis=1).max())
    if max_norm > 0:
        local = local / max_norm
    else:
        local = np.zeros_like(local)
    part.canonical_points = local
    return local


def surface_adjacency(parts: list[Part], cloud: PointCloud,
                      adjacency=None, knn: int = 12) -> list[set[int]]:
    """Part pairs whose member points are adjacent on the surface."""
    if adjacency is None:
        adjacency = point_adjacency(cloud, knn)
    owner = np.full(len(cloud), -1, dtype=np.int64)
    for pid, part in enumerate(parts):
        owner[part.member_indices] = pid
    out = [set() for _ in parts]
    for pid, part in enumerate(parts):
        for idx in part.member_indices:
            for q in adjacency[idx]:
                other = owner[q]
                if other >= 0 and other != pid:
                    out[pid].add(int(other))
    return out


def connect_parts(parts: list[Part], surface_nbrs=None,
                  use_spatial_fallback: bool = True,
                  cone_half_angle: float = math.radians(20.0),
                  hemisphere_margin: float = math.radians(30.0)) -> set[tuple[int, int]]:
    """Directed part connectivity with hemisphere and cone-occlusion pruning.

    Candidates are surface-adjacent parts plus (optionally) parts with
    intersecting bounding spheres. Candidates behind the part normal are
    dropped, and a candidate hidden inside the occlusion cone of a closer
    retained candidate is dropped as well.

    ``hemisphere_margin`` widens the kept half-space: a candidate is dropped
    when its direction is more than 90 degrees plus the margin away from the
    part normal. A margin of zero (the strict hemisphere) disconnects
    convex surfaces, where tangential neighbors always sit slightly behind
    the tangent plane.
    """
    n = len(parts)
    centers = np.array([p.center for p in parts])
    radii = np.array([p.bounding_radius for p in parts])
    cos_cut = -math.sin(hemisphere_margin)
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        cand = set(surface_nbrs[i]) if surface_nbrs is not None else set()
        if use_spatial_fallback:
            d = np.linalg.norm(centers - centers[i], axis=1)
            close = np.flatnonzero(d <= radii + radii[i])
            cand.update(int(j) for j in close if j != i)
        cand.discard(i)
        if not cand:
            continue
        n_i = parts[i].normal if parts[i].normal is not None else Z_AXIS
        kept = []
        for j in sorted(cand):
            offset = centers[j] - centers[i]
            dist = np.linalg.norm(offset)
            if dist > 1e-12 and (offset / dist) @ n_i < cos_cut:
                continue
            kept.append(j)
        if not kept:
            continue
        dists = np.array([np.linalg.norm(centers[j] - centers[i]) for j in kept])
        order = np.lexsort((kept, dists))
        retained = []
        dirs = []
        for o in order:
            j = kept[o]
            d = dists[o]
            direction = (centers[j] - centers[i]) / max(d, 1e-12)
            hidden = any(_angle(prev, direction) < cone_half_angle for prev in dirs)
            if hidden:
                continue
            retained.append(j)
            dirs.append(direction)
        edges.update((i, j) for j in retained)
    return edges


def build_part_graph(cloud: PointCloud, cfg: GrowConfig, rng: np.random.Generator,
                     use_spatial_fallback: bool = True,
                     cone_half_angle: float = math.radians(20.0),
                     hemisphere_margin: float = math.radians(30.0),
                     real_data: bool = False) -> PartGraph:
    """Full graph construction: grow, orient, canonicalize, connect."""
    adjacency = point_adjacency(cloud, cfg.knn)
    parts = grow_parts(cloud, cfg, rng, adjacency=adjacency, real_data=real_data)
    for part in parts:
        compute_lrf(part, cloud)
        canonicalize_part(part, cloud, cfg.points_per_part, rng)
    nbrs = surface_adjacency(parts, cloud, adjacency=adjacency)
    edges = connect_parts(parts, surface_nbrs=nbrs,
                          use_spatial_fallback=use_spatial_fallback,
                          cone_half_angle=cone_half_angle,
                          hemisphere_margin=hemisphere_margin)
    return PartGraph(parts, edges)


# ---------------------------------------------------------------------------
# interchange format (debug/export)

def save_part_graph(graph: PartGraph, path):
    """Line-oriented text export: PART rows then EDGE rows.

    Floats use Python repr, the shortest decimal that round-trips.
    """
    with open(path, "w") as fh:
        for pid, part in enumerate(graph.parts):
            lrf = part.lrf if part.lrf is not None else np.eye(3)
            fields = [str(pid)]
            fields += [repr(float(v)) for v in part.center]
            fields.append(repr(float(part.bounding_radius)))
            fields += [repr(float(v)) for v in lrf.ravel()]
            fields.append("1" if part.degenerate_lrf else "0")
            fh.write("PART " + " ".join(fields) + "\n")
        for i, j in sorted(graph.edges):
            fh.write(f"EDGE {i} {j}\n")


def load_part_graph(path) -> PartGraph:
    parts = []
    edges = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "PART":
                if len(tokens) != 16:
                    raise ValueError(f"line {lineno}: malformed PART row")
                vals = [float(t) for t in tokens[2:15]]
                part = Part(
                    member_indices=np.empty(0, dtype=np.int64),
                    center=np.array(vals[0:3]),
                    bounding_radius=vals[3],
                    seed_index=-1,
                    lrf=np.array(vals[4:13]).reshape(3, 3),
                    degenerate_lrf=tokens[15] == "1",
                )
                parts.append(part)
            elif tokens[0] == "EDGE":
                edges.add((int(tokens[1]), int(tokens[2])))
            else:
                raise ValueError(f"line {lineno}: unknown record {tokens[0]!r}")
    return PartGraph(parts, edges)
