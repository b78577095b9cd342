"""Geometric primitives: point cloud ingestion, normal estimation,
spatial indexing and farthest point sampling.

All operations are pure and deterministic: k-NN ties are broken by
ascending point index, FPS ties by lowest index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

Z_AXIS = np.array([0.0, 0.0, 1.0])


class CloudParseError(ValueError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCloudError(CloudParseError):
    """File parsed but contains zero points."""


class DegenerateFaceError(CloudParseError):
    """A face repeats a vertex index."""


@dataclass
class GlobalFrame:
    """Fixed right-handed world frame; z is the gravity-aligned vertical."""

    x: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    y: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    z: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))


@dataclass
class PointCloud:
    """Positions with unit normals and optional triangle faces."""

    positions: np.ndarray          # (N, 3) float64
    normals: np.ndarray            # (N, 3) float64, unit length
    faces: np.ndarray | None = None  # (F, 3) int, or None
    degenerate_normal_indices: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        if self.normals.shape != self.positions.shape:
            raise ValueError("normals must match positions shape")
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=np.int64)
            if self.faces.size and self.faces.max() >= len(self.positions):
                raise ValueError("face index out of range")

    def __len__(self):
        return len(self.positions)

    @property
    def centroid(self):
        return self.positions.mean(axis=0)

    @property
    def bounding_radius(self):
        """Max distance of any point to the centroid (scale proxy)."""
        d = np.linalg.norm(self.positions - self.centroid, axis=1)
        return float(d.max()) if len(d) else 0.0


def _normalize_rows(v, eps=1e-12):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps)


class SpatialIndex:
    """Immutable k-d tree over a fixed point set.

    Queries are deterministic: results are sorted by ascending distance
    with exact ties broken by ascending point index.
    """

    def __init__(self, positions):
        self.positions = np.asarray(positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        self._tree = cKDTree(self.positions)

    def __len__(self):
        return len(self.positions)

    def knn(self, query, k):
        """Indices of the min(k, N) nearest points to ``query``."""
        n = len(self.positions)
        k = min(int(k), n)
        if k <= 0:
            return np.empty(0, dtype=np.int64)
        d, _ = self._tree.query(query, k=k)
        dk = float(np.max(d)) if k > 1 else float(d)
        # tiny inflation so the k-th neighbor is never lost to roundoff;
        # sorting by recomputed (distance, index) drops any extras again
        cand = np.asarray(self._tree.query_ball_point(query, dk * (1 + 1e-9) + 1e-12),
                          dtype=np.int64)
        dists = np.linalg.norm(self.positions[cand] - np.asarray(query), axis=1)
        order = np.lexsort((cand, dists))
        return cand[order][:k]

    def radius(self, query, r):
        """Indices within distance ``r`` of ``query``, (distance, index) sorted."""
        cand = np.asarray(self._tree.query_ball_point(query, r), dtype=np.int64)
        if cand.size == 0:
            return cand
        dists = np.linalg.norm(self.positions[cand] - np.asarray(query), axis=1)
        order = np.lexsort((cand, dists))
        return cand[order]

    def knn_table(self, k):
        """(N, min(k, N)) table of nearest-neighbor indices for every point."""
        n = len(self.positions)
        k = min(int(k), n)
        d, i = self._tree.query(self.positions, k=k)
        if k == 1:
            d = d[:, None]
            i = i[:, None]
        # enforce the (distance, index) ordering within each row
        order = np.lexsort((i, d), axis=1)
        return np.take_along_axis(i, order, axis=1)


def estimate_normals(cloud: PointCloud, k: int) -> PointCloud:
    """PCA normals from k-NN neighborhoods, oriented away from the centroid.

    A neighborhood whose covariance has (numerically) more than one
    vanishing eigenvalue has no well-defined normal; those points get the
    vertical axis and are flagged in ``degenerate_normal_indices``.
    """
    n = len(cloud)
    if not (n >= k >= 3):
        raise ValueError(f"need N >= k >= 3, got N={n}, k={k}")
    index = SpatialIndex(cloud.positions)
    table = index.knn_table(k)
    centroid = cloud.centroid
    normals = np.empty_like(cloud.positions)
    degenerate = []
    for i in range(n):
        nbrs = cloud.positions[table[i]]
        centered = nbrs - nbrs.mean(axis=0)
        cov = centered.T @ centered / len(nbrs)
        evals, evecs = np.linalg.eigh(cov)
        scale = max(evals[-1], 1e-300)
        if evals[1] / scale < 1e-9 or evals[-1] < 1e-24:
            normals[i] = Z_AXIS
            degenerate.append(i)
            continue
        normal = evecs[:, 0]
        if normal @ (cloud.positions[i] - centroid) < 0:
            normal = -normal
        normals[i] = normal
    return PointCloud(
        cloud.positions.copy(),
        normals,
        faces=None if cloud.faces is None else cloud.faces.copy(),
        degenerate_normal_indices=np.asarray(degenerate, dtype=np.int64),
    )


def farthest_point_sampling(points, m, seed_index=0):
    """Greedy max-min subset selection, deterministic.

    Starts at ``seed_index``; each step adds the point maximizing the
    minimum distance to the already-selected set, ties to lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not (0 < m <= n):
        raise ValueError(f"need 0 < m <= {n}, got m={m}")
    if not (0 <= seed_index < n):
        raise ValueError(f"seed_index {seed_index} out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    min_d = np.linalg.norm(points - points[seed_index], axis=1)
    for s in range(1, m):
        nxt = int(np.argmax(min_d))  # argmax returns the first (lowest) index on ties
        selected[s] = nxt
        min_d = np.minimum(min_d, np.linalg.norm(points - points[nxt], axis=1))
    return selected


# ---------------------------------------------------------------------------
# file loading

def _face_vertex_normals(positions, faces):
    """Area-weighted vertex normals from triangle faces."""
    normals = np.zeros_like(positions)
    a = positions[faces[:, 0]]
    b = positions[faces[:, 1]]
    c = positions[faces[:, 2]]
    fn = np.cross(b - a, c - a)  # length = 2 * area
    for col in range(3):
        np.add.at(normals, faces[:, col], fn)
    lengths = np.linalg.norm(normals, axis=1)
    bad = lengths < 1e-12
    normals[bad] = Z_AXIS
    normals[~bad] /= lengths[~bad, None]
    return normals


def _parse_floats(parts, count, lineno):
    if len(parts) < count:
        raise CloudParseError(f"expected {count} numbers, got {len(parts)}", lineno)
    try:
        return [float(p) for p in parts[:count]]
    except ValueError as exc:
        raise CloudParseError(str(exc), lineno) from None


def _load_off(lines):
    rows = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(lines)]
    rows = [(no, ln) for no, ln in rows if ln]
    if not rows:
        raise CloudParseError("empty file", 1)
    pos = 0
    lineno, header = rows[pos]
    if header != "OFF":
        raise CloudParseError(f"expected OFF header, got {header!r}", lineno)
    pos += 1
    if pos >= len(rows):
        raise CloudParseError("missing count line", lineno)
    lineno, counts = rows[pos]
    parts = counts.split()
    if len(parts) < 2:
        raise CloudParseError("expected 'V F E' counts", lineno)
    try:
        nv, nf = int(parts[0]), int(parts[1])
    except ValueError:
        raise CloudParseError("non-integer counts", lineno) from None
    pos += 1
    if len(rows) < pos + nv + nf:
        raise CloudParseError(f"expected {nv} vertices and {nf} faces", lineno)
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, ln = rows[pos + i]
        verts[i] = _parse_floats(ln.split(), 3, lineno)
    pos += nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, ln = rows[pos + i]
        parts = ln.split()
        if not parts or parts[0] != "3":
            raise CloudParseError("only triangular faces supported", lineno)
        try:
            idx = [int(p) for p in parts[1:4]]
        except ValueError:
            raise CloudParseError("non-integer face index", lineno) from None
        if len(set(idx)) != 3:
            raise DegenerateFaceError(f"repeated vertex index in face {idx}", lineno)
        if max(idx) >= nv or min(idx) < 0:
            raise CloudParseError(f"face index out of range in {idx}", lineno)
        faces[i] = idx
    return verts, None, (faces if nf else None)


def _load_xyz_normals(lines):
    positions, normals = [], []
    for i, ln in enumerate(lines):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        vals = _parse_floats(ln.split(), 6, i + 1)
        nrm = np.array(vals[3:6])
        length = np.linalg.norm(nrm)
        if length < 1e-12:
            raise CloudParseError("zero-length normal", i + 1)
        positions.append(vals[:3])
        normals.append(nrm / length)
    if not positions:
        raise EmptyCloudError("no points in file")
    return np.array(positions), np.array(normals), None


def _load_ply(lines):
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError("missing 'ply' magic", 1)
    elements = []  # (name, count, properties)
    body_start = None
    fmt_seen = False
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise CloudParseError("only ascii PLY supported", i)
            fmt_seen = True
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise CloudParseError("property before element", i)
            elements[-1][2].append(parts[1:])
        elif parts[0] == "end_header":
            body_start = i
            break
    if body_start is None or not fmt_seen:
        raise CloudParseError("incomplete PLY header", len(lines))
    body = lines[body_start:]
    cursor = 0
    positions = normals = faces = None
    for name, count, props in elements:
        if name == "vertex":
            names = [p[-1] for p in props]
            for want in ("x", "y", "z"):
                if want not in names:
                    raise CloudParseError(f"vertex missing property {want}", body_start)
            has_n = all(w in names for w in ("nx", "ny", "nz"))
            data = np.empty((count, len(names)))
            for r in range(count):
                lineno = body_start + 1 + cursor + r
                if cursor + r >= len(body):
                    raise CloudParseError("unexpected end of vertex data", lineno)
                data[r] = _parse_floats(body[cursor + r].split(), len(names), lineno)
            cols = {n: j for j, n in enumerate(names)}
            positions = data[:, [cols["x"], cols["y"], cols["z"]]]
            if has_n:
                normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
        elif name == "face":
            faces = []
            for r in range(count):
                lineno = body_start + 1 + cursor + r
                parts = body[cursor + r].split()
                if not parts or parts[0] != "3":
                    raise CloudParseError("only triangular faces supported", lineno)
                idx = [int(p) for p in parts[1:4]]
                if len(set(idx)) != 3:
                    raise DegenerateFaceError(f"repeated vertex index in face {idx}", lineno)
                faces.append(idx)
            faces = np.array(faces, dtype=np.int64) if faces else None
        else:
            pass  # skip unknown element rows
        cursor += count
    if positions is None:
        raise CloudParseError("no vertex element", body_start)
    return positions, normals, faces


_FORMATS = {"off": _load_off, "ply": _load_ply, "xyz-normals": _load_xyz_normals}
_EXTENSIONS = {".off": "off", ".ply": "ply", ".xyz": "xyz-normals", ".xyzn": "xyz-normals"}


def load_cloud(path, fmt=None) -> PointCloud:
    """Load a point cloud from an OFF, ascii PLY or xyz-normals file.

    Normals missing from the file are estimated: from faces when the file
    is a mesh, else by PCA over k-NN neighborhoods.
    """
    if fmt is None:
        ext = os.path.splitext(path)[1].lower()
        if ext not in _EXTENSIONS:
            raise CloudParseError(f"cannot infer format from extension {ext!r}")
        fmt = _EXTENSIONS[ext]
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path) as fh:
        lines = fh.read().splitlines()
    positions, normals, faces = _FORMATS[fmt](lines)
    if len(positions) == 0:
        raise EmptyCloudError("no points in file")
    if not np.all(np.isfinite(positions)):
        raise CloudParseError("non-finite vertex position")
    if normals is not None:
        normals = _normalize_rows(normals)
        return PointCloud(positions, normals, faces)
    if faces is not None and len(faces):
        return PointCloud(positions, _face_vertex_normals(positions, faces), faces)
    if len(positions) < 3:
        return PointCloud(positions, np.tile(Z_AXIS, (len(positions), 1)), faces)
    return estimate_normals(
        PointCloud(positions, np.tile(Z_AXIS, (len(positions), 1)), faces),
        k=min(16, len(positions)),
    )
