"""Dataset synthesis, augmentation and evaluation perturbations.

The synthetic corpus is a desk-scale stand-in for large CAD collections:
parametric shapes with analytic normals, centered at the origin and
randomly scaled (CAD scale is arbitrary, and the pipeline must not care).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, _normalize_rows

log = logging.getLogger(__name__)


@dataclass
class LabeledObject:
    cloud: PointCloud
    label: int
    split: str = "train"            # train | test
    has_background: bool = False
    object_id: str = ""
    object_points: int = -1         # clutter points follow; -1 = all object


# ---------------------------------------------------------------------------
# parametric shapes (centered at the origin, analytic normals)

def _sample_sphere(n, rng):
    d = _normalize_rows(rng.normal(size=(n, 3)))
    return d.copy(), d.copy()


def _sample_box(n, rng):
    half = np.array([rng.uniform(0.4, 0.7), rng.uniform(0.6, 1.0), rng.uniform(0.3, 0.5)])
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]) * 4
    probs = np.repeat(areas / areas.sum() / 2.0, 2)
    faces = rng.choice(6, size=n, p=probs)
    u = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    pos = u.copy()
    nrm = np.zeros((n, 3))
    for f in range(6):
        axis, sign = divmod(f, 2)
        mask = faces == f
        pos[mask, axis] = half[axis] * (1.0 if sign == 0 else -1.0)
        nrm[mask, axis] = 1.0 if sign == 0 else -1.0
    return pos, nrm


def _sample_cylinder(n, rng):
    r = rng.uniform(0.35, 0.55)
    h = rng.uniform(1.2, 1.8)
    lateral = 2 * np.pi * r * h
    cap = np.pi * r * r
    part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pos = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    lat = part == 0
    pos[lat] = np.stack([r * np.cos(theta[lat]), r * np.sin(theta[lat]),
                         rng.uniform(-h / 2, h / 2, size=lat.sum())], axis=1)
    nrm[lat] = np.stack([np.cos(theta[lat]), np.sin(theta[lat]),
                         np.zeros(lat.sum())], axis=1)
    for which, sign in ((1, 1.0), (2, -1.0)):
        mask = part == which
        rad = r * np.sqrt(rng.uniform(0, 1, size=mask.sum()))
        pos[mask] = np.stack([rad * np.cos(theta[mask]), rad * np.sin(theta[mask]),
                              np.full(mask.sum(), sign * h / 2)], axis=1)
        nrm[mask, 2] = sign
    return pos, nrm


def _sample_cone(n, rng):
    r = rng.uniform(0.5, 0.8)
    h = rng.uniform(1.0, 1.6)
    slant = np.sqrt(r * r + h * h)
    lateral = np.pi * r * slant
    base = np.pi * r * r
    on_base = rng.uniform(0, 1, size=n) < base / (lateral + base)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pos = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    # apex at +h/2, base plane at -h/2; lateral sampled uniformly by area
    m = ~on_base
    t = np.sqrt(rng.uniform(0, 1, size=m.sum()))  # area-uniform along the slant
    rad = r * t
    pos[m] = np.stack([rad * np.cos(theta[m]), rad * np.sin(theta[m]),
                       h / 2 - h * t], axis=1)
    nrm[m] = np.stack([np.cos(theta[m]) * h / slant, np.sin(theta[m]) * h / slant,
                       np.full(m.sum(), r / slant)], axis=1)
    rad = r * np.sqrt(rng.uniform(0, 1, size=on_base.sum()))
    pos[on_base] = np.stack([rad * np.cos(theta[on_base]), rad * np.sin(theta[on_base]),
                             np.full(on_base.sum(), -h / 2)], axis=1)
    nrm[on_base, 2] = -1.0
    pos[:, 2] -= pos[:, 2].mean()  # recenter along the axis
    return pos, nrm


def _sample_torus(n, rng):
    big = rng.uniform(0.7, 0.9)
    small = rng.uniform(0.2, 0.35)
    pos = np.empty((n, 3))
    nrm = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = (n - filled) * 2 + 8
        u = rng.uniform(0, 2 * np.pi, size=m)
        v = rng.uniform(0, 2 * np.pi, size=m)
        # rejection keeps area-uniform sampling over the torus surface
        keep = rng.uniform(0, 1, size=m) < (big + small * np.cos(v)) / (big + small)
        u, v = u[keep], v[keep]
        take = min(len(u), n - filled)
        u, v = u[:take], v[:take]
        pos[filled:filled + take] = np.stack([
            (big + small * np.cos(v)) * np.cos(u),
            (big + small * np.cos(v)) * np.sin(u),
            small * np.sin(v)], axis=1)
        nrm[filled:filled + take] = np.stack([
            np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
        filled += take
    return pos, nrm


SHAPE_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
}


def synth_object(shape: str, n_points: int, noise: float, rng: np.random.Generator,
                 scale_range=(0.8, 1.25)) -> PointCloud:
    if shape not in SHAPE_SAMPLERS:
        raise ValueError(f"unknown shape {shape!r}; known: {sorted(SHAPE_SAMPLERS)}")
    pos, nrm = SHAPE_SAMPLERS[shape](n_points, rng)
    scale = rng.uniform(*scale_range)
    pos = pos * scale
    if noise > 0:
        pos = pos + rng.normal(0.0, noise * scale, size=pos.shape)
    return PointCloud(pos, _normalize_rows(nrm))


def synth_dataset(class_names, n_per_class, n_points, noise, rng,
                  scale_range=(0.8, 1.25), split="train") -> list[LabeledObject]:
    objects = []
    for label, name in enumerate(class_names):
        for i in range(n_per_class):
            cloud = synth_object(name, n_points, noise, rng, scale_range)
            objects.append(LabeledObject(cloud, label, split=split,
                                         object_id=f"{split}/{name}/{i}"))
    return objects


# ---------------------------------------------------------------------------
# augmentation

def augment_normal_noise(cloud: PointCloud, sigma_angle: float,
                         rng: np.random.Generator) -> PointCloud:
    """Rotate each normal by |N(0, sigma)| radians about a random tangent axis."""
    if sigma_angle < 0:
        raise ValueError("sigma_angle must be >= 0")
    if sigma_angle == 0:
        return PointCloud(cloud.positions.copy(), cloud.normals.copy(),
                          None if cloud.faces is None else cloud.faces.copy())
    n = len(cloud)
    normals = cloud.normals
    raw = rng.normal(size=(n, 3))
    axes = raw - (np.sum(raw * normals, axis=1, keepdims=True)) * normals
    axes = _normalize_rows(axes)
    angles = np.abs(rng.normal(0.0, sigma_angle, size=(n, 1)))
    # Rodrigues with axis perpendicular to the normal
    rotated = (normals * np.cos(angles)
               + np.cross(axes, normals) * np.sin(angles)
               + axes * np.sum(axes * normals, axis=1, keepdims=True) * (1 - np.cos(angles)))
    return PointCloud(cloud.positions.copy(), _normalize_rows(rotated),
                      None if cloud.faces is None else cloud.faces.copy())


def augment_occlusion(cloud: PointCloud, rng: np.random.Generator,
                      min_survival=0.05, max_tries=10) -> PointCloud:
    """Keep points whose normal is within 90 degrees of a sampled reference.

    Simulates self-occlusion: surfaces that could never be visible together
    are dropped. Resamples the reference if almost nothing survives.
    """
    n = len(cloud)
    for _ in range(max_tries):
        ref = cloud.normals[rng.integers(n)]
        keep = cloud.normals @ ref > 0
        if keep.sum() >= max(1, int(np.ceil(min_survival * n))):
            return PointCloud(cloud.positions[keep].copy(), cloud.normals[keep].copy())
    return PointCloud(cloud.positions.copy(), cloud.normals.copy(),
                      None if cloud.faces is None else cloud.faces.copy())


def _plane_patch(count, center, half, radius, rng):
    normal = _normalize_rows(rng.normal(size=(1, 3)))[0]
    u = np.cross(normal, [0.0, 0.0, 1.0] if abs(normal[2]) < 0.9 else [1.0, 0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    origin = rng.uniform(center - half, center + half)
    extent = rng.uniform(0.4, 1.0, size=2) * radius
    ab = rng.uniform(-1.0, 1.0, size=(count, 2)) * extent
    jitter = rng.normal(0.0, 0.005 * radius, size=(count, 1))
    return origin + ab[:, :1] * u + ab[:, 1:] * v + jitter * normal, \
        np.tile(normal, (count, 1))


def _distractor_fragment(count, radius, rng):
    """A displaced partial surface of some other shape."""
    shape = list(SHAPE_SAMPLERS)[int(rng.integers(len(SHAPE_SAMPLERS)))]
    # full-size shapes cropped to a patch: low curvature per point keeps the
    # clutter from swallowing the part budget
    frag = synth_object(shape, 4 * count, 0.01, rng,
                        scale_range=(0.9 * radius, 1.4 * radius))
    cut = _normalize_rows(rng.normal(size=(1, 3)))[0]
    order = np.argsort(-(frag.positions @ cut))
    keep = order[:count]
    direction = _normalize_rows(rng.normal(size=(1, 3)))[0]
    offset = direction * rng.uniform(1.4, 2.0) * radius
    return frag.positions[keep] + offset, frag.normals[keep]


def inject_background(cloud: PointCloud, rng: np.random.Generator,
                      frac_range=(0.45, 0.50)) -> PointCloud:
    """Surround the object with scene clutter: fragments of other shapes at
    the periphery plus planar patches (walls, floor) in twice the object's
    bounding box.

    The object's points keep their positions and lead the output array, so
    index < len(cloud) identifies object points in the merged cloud.
    """
    n = len(cloud)
    frac = rng.uniform(*frac_range)
    n_clutter = int(round(frac / (1 - frac) * n))
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    center = (lo + hi) / 2
    half = (hi - lo) / 2 * 2.0
    radius = np.linalg.norm(hi - lo) / 2
    n_fragments = int(rng.integers(2, 4))
    n_planes = int(rng.integers(1, 3))
    counts = np.bincount(rng.integers(0, n_fragments + n_planes, size=n_clutter),
                         minlength=n_fragments + n_planes)
    pos_chunks, nrm_chunks = [], []
    for k, count in enumerate(counts):
        if count == 0:
            continue
        if k < n_fragments:
            pos, nrm = _distractor_fragment(count, radius, rng)
        else:
            pos, nrm = _plane_patch(count, center, half, radius, rng)
        pos_chunks.append(pos)
        nrm_chunks.append(nrm)
    pos = np.vstack(pos_chunks)
    nrm = np.vstack(nrm_chunks)
    return PointCloud(np.vstack([cloud.positions, pos]),
                      np.vstack([cloud.normals, nrm]))


# ---------------------------------------------------------------------------
# evaluation-time perturbations

EVAL_VARIANTS = ("none", "t25", "t50_rs", "background")
MIN_CROP_POINTS = 16


def _crop_shifted_box(cloud, shift_fraction, rng):
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    extent = hi - lo
    shift = rng.uniform(-shift_fraction, shift_fraction, size=3) * extent
    keep = np.all((cloud.positions >= lo + shift) & (cloud.positions <= hi + shift), axis=1)
    return keep


def _rotate_z(positions, normals, angle):
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return positions @ rot.T, normals @ rot.T


def perturb_eval_variant(obj: LabeledObject, variant: str,
                         rng: np.random.Generator) -> LabeledObject | None:
    """Apply one of the evaluation perturbations; None when the crop leaves
    too few points (the caller logs and skips the object)."""
    if variant not in EVAL_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; known: {EVAL_VARIANTS}")
    cloud = obj.cloud
    if variant == "none":
        return obj
    if variant == "background":
        merged = inject_background(cloud, rng)
        return LabeledObject(merged, obj.label, split=obj.split,
                             has_background=True, object_id=obj.object_id,
                             object_points=len(cloud))
    shift_fraction = 0.25 if variant == "t25" else 0.5
    keep = _crop_shifted_box(cloud, shift_fraction, rng)
    if keep.sum() < MIN_CROP_POINTS:
        log.warning("variant %s left %d points for %s; skipped",
                    variant, int(keep.sum()), obj.object_id)
        return None
    positions = cloud.positions[keep].copy()
    normals = cloud.normals[keep].copy()
    if variant == "t50_rs":
        positions = positions * rng.uniform(0.5, 2.0)
        positions, normals = _rotate_z(positions, normals, rng.uniform(0, 2 * np.pi))
    surviving = -1 if obj.object_points < 0 else int(keep[:obj.object_points].sum())
    return LabeledObject(PointCloud(positions, normals), obj.label, split=obj.split,
                         has_background=obj.has_background, object_id=obj.object_id,
                         object_points=surviving)
