"""Evaluation metrics and report assembly.

Ground-truth metrics: Chamfer distance (squared convention, reported
x 1e4) and F-score at an unsquared distance threshold (default 1% of the
unit-normalized extent, tau = 0.01).

No-ground-truth metrics: fidelity (one-directional Chamfer from the input
to the completion), minimal matching distance against a reference set,
consistency across consecutive completions, and a local spacing
uniformity score. All conventions are labeled in the report header.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry

DEFAULT_FSCORE_TAU = 0.01
UNIFORMITY_FRACTIONS = (0.004, 0.008, 0.012)
UNIFORMITY_SEEDS = 100

CONVENTIONS = {
    "chamfer": "squared distances, symmetric mean (reported x 1e4)",
    "fscore_tau": DEFAULT_FSCORE_TAU,
    "uniformity": "euclidean-ball geodesic proxy; spacing term (d - d_hat)^2 / d_hat^2 "
                  "(ratio-normalized, scale-free); ball radius sqrt(p * A / pi) with "
                  "A = 4 pi R^2, R the bounding-sphere radius",
}


def worker_count():
    env = os.environ.get("PCFOLD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fidelity(input_cloud, completion):
    """Mean squared distance from every input point to its nearest
    completion point (one direction of the Chamfer sum)."""
    xp = geometry._as_points(input_cloud)
    yp = geometry._as_points(completion)
    if xp.shape[0] == 0 or yp.shape[0] == 0:
        raise ValueError("fidelity requires non-empty point sets")
    idx = geometry.nearest_indices(xp, yp)
    return float(np.mean(np.sum((xp - yp[idx]) ** 2, axis=1)))


def mmd(completion, reference_set):
    """Minimal matching distance: smallest Chamfer distance to any
    reference cloud."""
    if not reference_set:
        raise ValueError("mmd requires at least one reference cloud")
    return min(geometry.chamfer(completion, ref) for ref in reference_set)


def consistency(completions):
    """Mean Chamfer distance between consecutive completions of the same
    object."""
    if len(completions) < 2:
        raise ValueError("consistency requires at least two completions")
    return float(np.mean([geometry.chamfer(a, b)
                          for a, b in zip(completions[:-1], completions[1:])]))


def uniformity(cloud, p, n_seeds=UNIFORMITY_SEEDS):
    """Local spacing regularity at area fraction p (lower is better).

    Seeds are chosen by farthest point sampling; each seed collects the
    points inside a Euclidean ball whose area fraction of the
    bounding-sphere surface proxy is p. The score blends a count term
    (n - n_hat)^2 / n_hat with a ratio-normalized nearest-neighbor spacing
    term, averaged over seeds; both terms are scale-free.
    """
    pts = geometry._as_points(cloud)
    n_total = pts.shape[0]
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    n_hat = p * n_total
    if n_hat < 2:
        raise ValueError(f"p={p} too small for {n_total} points (expected ball count < 2)")
    center = pts.mean(axis=0)
    radius = float(np.max(np.linalg.norm(pts - center, axis=1)))
    if radius <= 0:
        raise ValueError("degenerate cloud: zero bounding radius")
    area = 4.0 * math.pi * radius * radius
    ball_r = math.sqrt(p * area / math.pi)
    seeds = geometry.fps(pts, min(n_seeds, n_total), start=0)
    tree = geometry.SpatialIndex(pts)
    score = 0.0
    for s in seeds:
        idx = np.asarray(tree._tree.query_ball_point(pts[s], ball_r), dtype=np.intp)
        n = idx.size
        term = (n - n_hat) ** 2 / n_hat
        if n >= 2:
            ball = pts[idx]
            d2 = np.sum((ball[:, None, :] - ball[None, :, :]) ** 2, axis=2)
            np.fill_diagonal(d2, np.inf)
            d_nn = np.sqrt(d2.min(axis=1))
            d_hat = math.sqrt(p * area / (math.pi * n))
            term += float(np.mean((d_nn - d_hat) ** 2 / (d_hat * d_hat)))
        score += term
    return score / len(seeds)


@dataclass
class ShapeRecord:
    shape_id: str
    cd_x1e4: float = None
    fscore: float = None
    fidelity: float = None
    mmd: float = None
    consistency: float = None
    uniformity: dict = field(default_factory=dict)  # fraction -> score


@dataclass
class MetricsReport:
    records: list
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def aggregate(self):
        out = {}
        for key in ("cd_x1e4", "fscore", "fidelity", "mmd", "consistency"):
            vals = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            if vals:
                out[key] = float(np.mean(vals))
        for frac in UNIFORMITY_FRACTIONS:
            vals = [r.uniformity[frac] for r in self.records if frac in r.uniformity]
            if vals:
                out[f"uniformity_{frac}"] = float(np.mean(vals))
        return out


CSV_COLUMNS = ["shape_id", "cd_x1e4", "fscore", "fidelity", "mmd", "consistency",
               "uniformity_0.004", "uniformity_0.008", "uniformity_0.012"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_to_csv(report):
    lines = ["# " + json.dumps(report.conventions, sort_keys=True),
             ",".join(CSV_COLUMNS)]
    for r in report.records:
        row = [r.shape_id, _fmt(r.cd_x1e4), _fmt(r.fscore), _fmt(r.fidelity),
               _fmt(r.mmd), _fmt(r.consistency)]
        for frac in UNIFORMITY_FRACTIONS:
            row.append(_fmt(r.uniformity.get(frac)))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def report_from_csv(text):
    lines = [l for l in text.splitlines() if l.strip()]
    conventions = dict(CONVENTIONS)
    if lines and lines[0].startswith("#"):
        conventions = json.loads(lines[0][1:].strip())
        lines = lines[1:]
    header = lines[0].split(",")
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns: {header}")
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        rec = ShapeRecord(shape_id=cells[0])
        for key, cell in zip(CSV_COLUMNS[1:6], cells[1:6]):
            if cell:
                setattr(rec, key, float(cell))
        for frac, cell in zip(UNIFORMITY_FRACTIONS, cells[6:]):
            if cell:
                rec.uniformity[frac] = float(cell)
        records.append(rec)
    return MetricsReport(records=records, conventions=conventions)


def aggregate_json(report):
    return json.dumps({"aggregate": report.aggregate(),
                       "conventions": report.conventions}, sort_keys=True, indent=2)


def evaluate_with_gt(shape_ids, predictions, ground_truths, tau=DEFAULT_FSCORE_TAU):
    """CD x 1e4 and F-score per shape (parallel across shapes, ordered)."""

    def one(args):
        sid, pred, gt = args
        cd = geometry.chamfer(pred, gt)
        _, _, f = geometry.fscore(pred, gt, tau)
        return ShapeRecord(shape_id=sid, cd_x1e4=cd * 1e4, fscore=f)

    jobs = list(zip(shape_ids, predictions, ground_truths))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(one, jobs))
    return MetricsReport(records=records)


def evaluate_no_gt(shape_ids, inputs, predictions, reference_set,
                   fractions=UNIFORMITY_FRACTIONS, n_seeds=UNIFORMITY_SEEDS):
    """Fidelity, MMD, uniformity per shape; consistency is assigned to each
    shape after the first as the Chamfer distance to the previous
    completion in the given order."""

    def one(args):
        i, sid, inp, pred = args
        rec = ShapeRecord(shape_id=sid)
        rec.fidelity = fidelity(inp, pred)
        rec.mmd = mmd(pred, reference_set)
        for frac in fractions:
            try:
                rec.uniformity[frac] = uniformity(pred, frac, n_seeds=n_seeds)
            except ValueError:
                pass  # cloud too small for this fraction
        if i > 0:
            rec.consistency = geometry.chamfer(predictions[i - 1], pred)
        return rec

    jobs = [(i, sid, inp, pred)
            for i, (sid, inp, pred) in enumerate(zip(shape_ids, inputs, predictions))]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        records = list(pool.map(one, jobs))
    return MetricsReport(records=records)
