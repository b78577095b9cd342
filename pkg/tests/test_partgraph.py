import math

import numpy as np
import pytest

from conftest import plane_grid_cloud, rotation_z, unit_sphere_cloud
from partvote.geometry import PointCloud
from partvote.partgraph import (GrowConfig, Part, PartGraph, build_part_graph,
                                canonicalize_part, compute_lrf, connect_parts,
                                grow_parts, load_part_graph, point_adjacency,
                                save_part_graph, surface_adjacency)


def small_cfg(**kw):
    defaults = dict(angle_threshold=1.0, max_parts=64, points_per_part=16, knn=8)
    defaults.update(kw)
    return GrowConfig(**defaults)


class TestGrowParts:
    def test_flat_plane_single_part(self):
        cloud = plane_grid_cloud(side=12, spacing=0.1)
        parts = grow_parts(cloud, small_cfg(angle_threshold=0.01),
                           np.random.default_rng(0))
        assert len(parts) == 1
        assert len(parts[0].member_indices) == len(cloud)

    def test_opposite_planes_never_merge(self):
        a = plane_grid_cloud(side=6, spacing=0.1, z=0.0)
        b = plane_grid_cloud(side=6, spacing=0.1, z=0.05, flip=True)
        cloud = PointCloud(np.vstack([a.positions, b.positions]),
                           np.vstack([a.normals, b.normals]))
        for seed in range(5):
            parts = grow_parts(cloud, small_cfg(angle_threshold=100.0),
                               np.random.default_rng(seed))
            for part in parts:
                signs = cloud.normals[part.member_indices][:, 2]
                assert np.all(signs > 0) or np.all(signs < 0)

    def test_partition_disjoint(self):
        cloud = unit_sphere_cloud(500, seed=2)
        parts = grow_parts(cloud, small_cfg(), np.random.default_rng(1))
        all_members = np.concatenate([p.member_indices for p in parts])
        assert len(all_members) == len(set(all_members.tolist()))
        assert set(all_members.tolist()) <= set(range(len(cloud)))

    def test_geodesic_radius_grows_with_threshold(self):
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import shortest_path

        cloud = unit_sphere_cloud(2000, seed=7)
        adjacency = point_adjacency(cloud, 8)

        def mean_geodesic_radius(threshold):
            parts = grow_parts(cloud, small_cfg(angle_threshold=threshold),
                               np.random.default_rng(3), adjacency=adjacency)
            radii = []
            for part in parts:
                members = part.member_indices
                if len(members) < 2:
                    continue
                lookup = {int(m): i for i, m in enumerate(members)}
                rows, cols, vals = [], [], []
                for m in members:
                    for q in adjacency[m]:
                        if int(q) in lookup:
                            rows.append(lookup[int(m)])
                            cols.append(lookup[int(q)])
                            vals.append(np.linalg.norm(
                                cloud.positions[m] - cloud.positions[q]))
                graph = csr_matrix((vals, (rows, cols)),
                                   shape=(len(members), len(members)))
                dist = shortest_path(graph, directed=False,
                                     indices=lookup[int(part.seed_index)])
                radii.append(np.max(dist[np.isfinite(dist)]))
            return float(np.mean(radii))

        r = [mean_geodesic_radius(t) for t in (0.5, 1.0, 2.0)]
        assert r[0] < r[1] < r[2]

    def test_single_point_cloud(self):
        cloud = PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        parts = grow_parts(cloud, small_cfg(knn=1), np.random.default_rng(0))
        assert len(parts) == 1
        assert list(parts[0].member_indices) == [0]


def part_with_plane_members(e3, n_pts=40, seed=0):
    """A planar part whose covariance normal is e3 (members span e3-perp)."""
    rng = np.random.default_rng(seed)
    e3 = np.asarray(e3, dtype=float)
    e3 = e3 / np.linalg.norm(e3)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(helper @ e3) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(e3, helper)
    u /= np.linalg.norm(u)
    v = np.cross(e3, u)
    coords = rng.uniform(-1, 1, size=(n_pts, 2))
    pos = coords[:, :1] * u + coords[:, 1:] * v
    cloud = PointCloud(pos, np.tile(e3, (n_pts, 1)))
    part = Part(np.arange(n_pts), pos.mean(axis=0),
                float(np.linalg.norm(pos - pos.mean(axis=0), axis=1).max()), 0)
    return part, cloud


class TestComputeLrf:
    def test_axis_aligned_identity(self):
        part, cloud = part_with_plane_members([1.0, 0.0, 0.0])
        lrf, degenerate = compute_lrf(part, cloud)
        assert not degenerate
        assert np.allclose(lrf, np.eye(3), atol=1e-9)

    def test_vertical_normal_degenerate(self):
        part, cloud = part_with_plane_members([0.0, 0.0, 1.0])
        lrf, degenerate = compute_lrf(part, cloud)
        assert degenerate
        assert np.allclose(lrf, np.eye(3))

    def test_diagonal_normal(self):
        part, cloud = part_with_plane_members([1.0, 1.0, 1.0])
        lrf, degenerate = compute_lrf(part, cloud)
        assert not degenerate
        v1, v2, v3 = lrf
        assert np.allclose(v1, np.array([1.0, 1.0, 0.0]) / np.sqrt(2), atol=1e-9)
        assert np.allclose(v2, np.array([-1.0, 1.0, 0.0]) / np.sqrt(2), atol=1e-9)
        assert np.allclose(v3, [0.0, 0.0, 1.0])
        assert np.allclose(v2, np.cross(v3, v1), atol=1e-12)

    def test_orthonormal_positive_determinant(self):
        cloud = unit_sphere_cloud(600, seed=4)
        parts = grow_parts(cloud, small_cfg(), np.random.default_rng(2))
        for part in parts:
            lrf, degenerate = compute_lrf(part, cloud)
            if degenerate:
                continue
            assert np.allclose(lrf @ lrf.T, np.eye(3), atol=1e-6)
            assert abs(np.linalg.det(lrf) - 1.0) < 1e-6

    def test_tiny_part_uses_mean_normal(self):
        pos = np.array([[0.0, 0, 0], [0.1, 0, 0]])
        nrm = np.tile([1.0, 0.0, 0.0], (2, 1))
        part = Part(np.arange(2), pos.mean(axis=0), 0.05, 0)
        lrf, degenerate = compute_lrf(part, PointCloud(pos, nrm))
        assert not degenerate
        assert np.allclose(part.normal, [1.0, 0.0, 0.0])


def make_part(center, radius=1.0, normal=(0.0, 0.0, 1.0)):
    n = np.asarray(normal, dtype=float)
    return Part(np.arange(1), np.asarray(center, dtype=float), radius, 0,
                lrf=np.eye(3), normal=n / np.linalg.norm(n))


def connectivity_oracle(parts, cone_half_angle, hemisphere_margin):
    """Straightforward restatement of the three connectivity rules."""
    edges = set()
    cos_cut = -math.sin(hemisphere_margin)
    for i, pi in enumerate(parts):
        cand = []
        for j, pj in enumerate(parts):
            if i == j:
                continue
            offset = pj.center - pi.center
            dist = np.linalg.norm(offset)
            if dist > pi.bounding_radius + pj.bounding_radius:
                continue
            if dist > 1e-12 and (offset / dist) @ pi.normal < cos_cut:
                continue
            cand.append((dist, j))
        cand.sort()
        retained = []
        for dist, j in cand:
            direction = (parts[j].center - pi.center) / max(dist, 1e-12)
            hidden = False
            for k in retained:
                prev = (parts[k].center - pi.center)
                prev = prev / max(np.linalg.norm(prev), 1e-12)
                ang = math.acos(min(1.0, max(-1.0, float(prev @ direction))))
                if ang < cone_half_angle:
                    hidden = True
                    break
            if not hidden:
                retained.append(j)
        edges.update((i, j) for j in retained)
    return edges


class TestConnectParts:
    def test_mutual_overlap(self):
        parts = [make_part([0, 0, 0], 1.0, [1, 0, 0]),
                 make_part([1.5, 0, 0], 1.0, [-1, 0, 0])]
        edges = connect_parts(parts, hemisphere_margin=0.0)
        # neither offset opposes the other's normal outright
        assert edges == {(0, 1), (1, 0)}

    def test_occluded_collinear_part_dropped(self):
        parts = [make_part([0, 0, 0], 3.0, [1, 0, 0]),
                 make_part([1.0, 0, 0], 3.0, [1, 0, 0]),
                 make_part([2.0, 0, 0], 3.0, [1, 0, 0])]
        edges = connect_parts(parts, cone_half_angle=math.radians(20.0))
        assert (0, 1) in edges
        assert (0, 2) not in edges

    def test_matches_brute_force_oracle(self):
        cone = math.radians(20.0)
        margin = math.radians(30.0)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            parts = [make_part(rng.uniform(-2, 2, size=3),
                               radius=rng.uniform(0.3, 1.2),
                               normal=rng.normal(size=3))
                     for _ in range(20)]
            got = connect_parts(parts, use_spatial_fallback=True,
                                cone_half_angle=cone, hemisphere_margin=margin)
            assert got == connectivity_oracle(parts, cone, margin)

    def test_isolated_part_no_edges(self):
        parts = [make_part([0, 0, 0], 0.1), make_part([100, 0, 0], 0.1)]
        assert connect_parts(parts) == set()

    def test_no_self_edges_valid_endpoints(self):
        cloud = unit_sphere_cloud(500, seed=9)
        graph = build_part_graph(cloud, small_cfg(), np.random.default_rng(3))
        for i, j in graph.edges:
            assert i != j
            assert 0 <= i < len(graph.parts)
            assert 0 <= j < len(graph.parts)


class TestCanonicalize:
    def test_single_member_all_zero(self):
        pos = np.array([[1.0, 2.0, 3.0]])
        cloud = PointCloud(pos, np.array([[1.0, 0.0, 0.0]]))
        part = Part(np.arange(1), pos[0], 0.0, 0)
        compute_lrf(part, cloud)
        pts = canonicalize_part(part, cloud, 8, np.random.default_rng(0))
        assert pts.shape == (8, 3)
        assert np.allclose(pts, 0.0)

    def test_segment_maps_to_unit_x(self):
        # a segment of length 2 along the part's v1 axis
        pos = np.stack([np.linspace(-1, 1, 21), np.zeros(21), np.zeros(21)], axis=1)
        cloud = PointCloud(pos, np.tile([1.0, 0.0, 0.0], (21, 1)))
        part = Part(np.arange(21), pos.mean(axis=0), 1.0, 0)
        part.lrf = np.eye(3)  # v1 = x for this geometry
        pts = canonicalize_part(part, cloud, 64, np.random.default_rng(1))
        assert np.allclose(pts[:, 1:], 0.0, atol=1e-12)
        assert np.isclose(np.abs(pts[:, 0]).max(), 1.0)
        assert np.all(np.abs(pts[:, 0]) <= 1 + 1e-6)

    def test_unit_ball_invariants(self):
        cloud = unit_sphere_cloud(600, seed=11)
        graph = build_part_graph(cloud, small_cfg(), np.random.default_rng(4))
        for part in graph.parts:
            norms = np.linalg.norm(part.canonical_points, axis=1)
            assert norms.max() <= 1 + 1e-6
            if part.bounding_radius > 0:
                assert norms.max() >= 1 - 1e-3


class TestInvariances:
    def run_pipeline(self, cloud, seed=5):
        return build_part_graph(cloud, small_cfg(), np.random.default_rng(seed))

    def test_z_rotation_invariance(self):
        cloud = unit_sphere_cloud(600, seed=13)
        rot = rotation_z(1.234)
        rotated = PointCloud(cloud.positions @ rot.T, cloud.normals @ rot.T)
        g1 = self.run_pipeline(cloud)
        g2 = self.run_pipeline(rotated)
        assert len(g1.parts) == len(g2.parts)
        assert g1.edges == g2.edges
        for p1, p2 in zip(g1.parts, g2.parts):
            assert np.array_equal(p1.member_indices, p2.member_indices)
            if not p1.degenerate_lrf and not p2.degenerate_lrf:
                assert np.allclose(p1.canonical_points, p2.canonical_points, atol=1e-5)

    def test_scale_invariance(self):
        cloud = unit_sphere_cloud(600, seed=17)
        for s in (0.1, 10.0):
            scaled = PointCloud(cloud.positions * s, cloud.normals.copy())
            g1 = self.run_pipeline(cloud)
            g2 = self.run_pipeline(scaled)
            assert g1.edges == g2.edges
            for p1, p2 in zip(g1.parts, g2.parts):
                assert np.allclose(p1.canonical_points, p2.canonical_points, atol=1e-5)


class TestInterchange:
    def test_round_trip(self, tmp_path):
        cloud = unit_sphere_cloud(400, seed=19)
        graph = build_part_graph(cloud, small_cfg(), np.random.default_rng(6))
        path = tmp_path / "graph.pg"
        save_part_graph(graph, path)
        loaded = load_part_graph(path)
        assert len(loaded.parts) == len(graph.parts)
        assert loaded.edges == graph.edges
        for a, b in zip(graph.parts, loaded.parts):
            assert np.array_equal(a.center, b.center)  # shortest round-trip repr
            assert a.bounding_radius == b.bounding_radius
            assert np.array_equal(a.lrf, b.lrf)
            assert a.degenerate_lrf == b.degenerate_lrf
