"""Synthetic occluded-shape data: area-weighted surface sampling of
parametric primitives, z-buffer style self-occlusion culling to produce a
partial view, and shared normalization of the (partial, complete) pair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, normalize_points
from .rng import DOMAIN_DATA, stream

PRIMITIVES = ("sphere", "box", "cylinder", "cone", "torus",
              "composite-table", "composite-lamp")


@dataclass
class SyntheticShapeSpec:
    kind: str
    sizes: tuple = (1.0, 1.0, 1.0)
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    point_budget: int = 1024
    view_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    cull_resolution: int = 24

    def validate(self):
        if self.kind not in PRIMITIVES:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.point_budget < 64:
            raise ValueError("point budget must be at least 64")
        if min(self.sizes) <= 0:
            raise ValueError("sizes must be positive")
        if self.cull_resolution < 2:
            raise ValueError("cull resolution must be at least 2")
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("rotation must be a unit quaternion")
        return self


def _quat_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


# --- per-primitive samplers: draw n surface points, area-weighted ---------


def _sample_sphere(rng, n, sizes):
    r = sizes[0]
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r


def _sample_box(rng, n, sizes):
    a, b, c = sizes
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=n)
    v = rng.uniform(-0.5, 0.5, size=n)
    pts = np.empty((n, 3))
    half = np.array([a, b, c]) / 2
    for i in range(n):
        f = face[i]
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        p = np.empty(3)
        p[axis] = sign * half[axis]
        others = [j for j in range(3) if j != axis]
        p[others[0]] = u[i] * [a, b, c][others[0]]
        p[others[1]] = v[i] * [a, b, c][others[1]]
        pts[i] = p
    return pts


def _sample_cylinder(rng, n, sizes):
    r, h = sizes[0], sizes[1]
    lateral = 2 * np.pi * r * h
    cap = np.pi * r * r
    part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if part[i] == 0:
            z = rng.uniform(-h / 2, h / 2)
            pts[i] = (r * np.cos(theta[i]), r * np.sin(theta[i]), z)
        else:
            rr = r * np.sqrt(rng.uniform())
            z = h / 2 if part[i] == 1 else -h / 2
            pts[i] = (rr * np.cos(theta[i]), rr * np.sin(theta[i]), z)
    return pts


def _sample_cone(rng, n, sizes):
    r, h = sizes[0], sizes[1]
    slant = np.sqrt(r * r + h * h)
    lateral = np.pi * r * slant
    base = np.pi * r * r
    part = rng.choice(2, size=n, p=np.array([lateral, base]) / (lateral + base))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if part[i] == 0:
            # radius grows linearly from apex; area element ~ radius
            t = np.sqrt(rng.uniform())          # fraction from apex
            pts[i] = (t * r * np.cos(theta[i]), t * r * np.sin(theta[i]), h / 2 - t * h)
        else:
            rr = r * np.sqrt(rng.uniform())
            pts[i] = (rr * np.cos(theta[i]), rr * np.sin(theta[i]), -h / 2)
    return pts


def _sample_torus(rng, n, sizes):
    big, small = sizes[0], sizes[1]
    pts = np.empty((n, 3))
    count = 0
    while count < n:
        theta = rng.uniform(0, 2 * np.pi)
        phi = rng.uniform(0, 2 * np.pi)
        # area element ~ (R + r cos phi): rejection on the minor angle
        if rng.uniform() > (big + small * np.cos(phi)) / (big + small):
            continue
        x = (big + small * np.cos(phi)) * np.cos(theta)
        y = (big + small * np.cos(phi)) * np.sin(theta)
        z = small * np.sin(phi)
        pts[count] = (x, y, z)
        count += 1
    return pts


def _sample_parts(rng, n, parts):
    """parts: list of (sampler, sizes, offset, area). Allocation is
    area-weighted; the total count is exact."""
    areas = np.array([p[3] for p in parts], dtype=np.float64)
    alloc = np.floor(areas / areas.sum() * n).astype(int)
    alloc[0] += n - alloc.sum()
    chunks = []
    for (fn, sizes, offset, _), m in zip(parts, alloc):
        if m > 0:
            chunks.append(fn(rng, m, sizes) + np.asarray(offset))
    return np.concatenate(chunks, axis=0)


def _sample_table(rng, n, sizes):
    a, b, c = sizes  # overall width, depth, height
    top_t = 0.08 * c
    leg_w = 0.08 * max(a, b)
    leg_h = c - top_t
    top_area = 2 * (a * b + a * top_t + b * top_t)
    leg_area = 4 * leg_w * leg_h + 2 * leg_w * leg_w
    parts = [(_sample_box, (a, b, top_t), (0, 0, c / 2 - top_t / 2), top_area)]
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append((_sample_box, (leg_w, leg_w, leg_h),
                          (sx * (a / 2 - leg_w), sy * (b / 2 - leg_w), -(c - leg_h) / 2), leg_area))
    return _sample_parts(rng, n, parts)


def _sample_lamp(rng, n, sizes):
    r, h = sizes[0], sizes[1]
    base = (_sample_cylinder, (0.6 * r, 0.1 * h), (0, 0, -h / 2 + 0.05 * h),
            2 * np.pi * 0.6 * r * 0.1 * h + 2 * np.pi * (0.6 * r) ** 2)
    pole = (_sample_cylinder, (0.07 * r, 0.6 * h), (0, 0, -h * 0.1),
            2 * np.pi * 0.07 * r * 0.6 * h)
    shade = (_sample_cone, (r, 0.35 * h), (0, 0, h / 2 - 0.175 * h),
             np.pi * r * np.sqrt(r * r + (0.35 * h) ** 2))
    return _sample_parts(rng, n, [base, pole, shade])


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "composite-table": _sample_table,
    "composite-lamp": _sample_lamp,
}


def occlusion_cull(points, view_direction, resolution):
    """Keep only the nearest point per grid cell when projecting along the
    view direction (painter's-order culling on a resolution^2 raster)."""
    view = np.asarray(view_direction, dtype=np.float64)
    view = view / np.linalg.norm(view)
    # orthonormal frame with `view` as depth axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(view[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(view, helper)
    u /= np.linalg.norm(u)
    v = np.cross(view, u)
    pu, pv = points @ u, points @ v
    depth = points @ view
    gu = np.clip(((pu - pu.min()) / max(np.ptp(pu), 1e-12) * resolution).astype(int), 0, resolution - 1)
    gv = np.clip(((pv - pv.min()) / max(np.ptp(pv), 1e-12) * resolution).astype(int), 0, resolution - 1)
    cell = gu * resolution + gv
    keep = {}
    for i in range(points.shape[0]):
        c = cell[i]
        if c not in keep or depth[i] < depth[keep[c]]:
            keep[c] = i
    idx = np.array(sorted(keep.values()), dtype=np.intp)
    return points[idx]


def gen_synthetic(spec: SyntheticShapeSpec, seed):
    """One (partial, complete) pair. The complete cloud has exactly the
    requested budget; both clouds share one normalization transform."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    raw = _SAMPLERS[spec.kind](rng, spec.point_budget, spec.sizes)
    rot = _quat_matrix(np.asarray(spec.rotation, dtype=np.float64))
    raw = raw @ rot.T
    partial_raw = occlusion_cull(raw, spec.view_direction, spec.cull_resolution)
    complete = normalize_points(raw)
    partial = normalize_points(partial_raw, center=complete.source_center,
                               scale=complete.source_scale)
    return partial, complete


def random_spec(rng, point_budget=1024, cull_resolution=24):
    kind = PRIMITIVES[rng.integers(len(PRIMITIVES))]
    if kind == "torus":
        sizes = (rng.uniform(0.7, 1.2), rng.uniform(0.2, 0.45), 1.0)
    elif kind in ("cylinder", "cone", "composite-lamp"):
        sizes = (rng.uniform(0.4, 1.0), rng.uniform(0.8, 1.8), 1.0)
    else:
        sizes = tuple(rng.uniform(0.5, 1.5, size=3))
    view = rng.normal(size=3)
    view /= np.linalg.norm(view)
    return SyntheticShapeSpec(
        kind=kind, sizes=sizes, rotation=random_quaternion(rng),
        point_budget=point_budget, view_direction=view,
        cull_resolution=cull_resolution)


def make_dataset(count, seed, point_budget=1024, n_partial=256, cull_resolution=24):
    """List of (partial PointCloud, complete PointCloud) pairs. Partial
    clouds are subsampled to at most n_partial points (seeded choice)."""
    pairs = []
    for i in range(count):
        srng = stream(seed, DOMAIN_DATA, i)
        spec = random_spec(srng, point_budget=point_budget, cull_resolution=cull_resolution)
        shape_seed = int(srng.integers(2 ** 63))
        partial, complete = gen_synthetic(spec, shape_seed)
        if len(partial) > n_partial:
            pick = np.sort(srng.choice(len(partial), size=n_partial, replace=False))
            partial = PointCloud(partial.points[pick], partial.source_center, partial.source_scale)
        pairs.append((partial, complete))
    return pairs
