"""Independent checks: finite-difference gradients and raster IoU.

Nothing here calls the analytic gradient code in :mod:`boxloss.losses`.
Loss values are recomputed from :func:`boxloss.geometry.overlap_geometry`
so the finite differences do not share a code path with the gradients
they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from boxloss.geometry import Box, InvalidBoxError, overlap_geometry
from boxloss.losses import LossError, LossKind, PushConfig, loss_eval

COORDS = ("x1", "y1", "x2", "y2")


class OracleError(ValueError):
    pass


def reference_loss(kind: LossKind, pred: Box, gt: Box, second_gt: Optional[Box] = None,
                   cfg: PushConfig = PushConfig()) -> float:
    """Loss value straight from the overlap quantities, no gradient."""
    g = overlap_geometry(pred, gt)
    if kind in (LossKind.IOU, LossKind.PUSH_IOU):
        loss = 1.0 - g.iou
    elif kind is LossKind.GIOU:
        if g.area_pred == 0.0 and g.area_gt == 0.0:
            raise LossError("GIoU undefined: both boxes have zero area")
        loss = 1.0 - (g.iou - (g.enclosing_area - g.union) / g.enclosing_area)
    elif kind is LossKind.DIOU:
        penalty = g.center_dist_sq / g.enclosing_diag_sq if g.enclosing_diag_sq > 0 else 0.0
        loss = 1.0 - (g.iou - penalty)
    else:
        if g.cw == 0.0 or g.ch == 0.0:
            raise LossError("DecIoU undefined: enclosing box has zero width or height")
        deciou = (g.iou - (g.cw - g.iw) ** 2 / g.cw ** 2
                  - (g.ch - g.ih) ** 2 / g.ch ** 2)
        loss = 1.0 - deciou
    if kind.is_push and second_gt is not None:
        if tuple(second_gt) == tuple(gt):
            raise LossError("second ground truth must differ from the matched ground truth")
        loss += cfg.alpha * overlap_geometry(pred, second_gt).iou
    return loss


def fd_gradient(kind: LossKind, pred: Box, gt: Box, second_gt: Optional[Box] = None,
                cfg: PushConfig = PushConfig(), h: float = 1e-5) -> tuple[float, ...]:
    """Central difference of :func:`reference_loss` in each predicted coordinate."""
    if not h > 0.0:
        raise ValueError(f"step must be positive, got {h}")
    grad = []
    for i, name in enumerate(COORDS):
        vals = []
        for sign in (1.0, -1.0):
            coords = list(pred)
            coords[i] += sign * h
            try:
                vals.append(reference_loss(kind, Box(*coords), gt, second_gt, cfg))
            except (InvalidBoxError, LossError) as exc:
                raise OracleError(f"loss undefined when perturbing {name}: {exc}") from exc
        grad.append((vals[0] - vals[1]) / (2.0 * h))
    return tuple(grad)


def _centers_inside(lo: float, hi: float, n: float, start: int, stop: int) -> np.ndarray:
    centers = (np.arange(start, stop) + 0.5) / n
    return (centers >= lo) & (centers <= hi)


def raster_iou(a: Box, b: Box, cells_per_unit: int = 1) -> float:
    """IoU by counting grid cells whose centers fall inside each box.

    The grid is aligned with the origin, so integer boxes are counted
    exactly at any ``cells_per_unit``. A cell lies in a rectangle iff its
    center lies in both of the rectangle's intervals, so the 2D counts
    factor into per-axis counts and no full mask is materialized.
    """
    if cells_per_unit < 1:
        raise ValueError("cells_per_unit must be >= 1")
    n = float(cells_per_unit)
    x0, x1 = math.floor(min(a.x1, b.x1) * n), math.ceil(max(a.x2, b.x2) * n)
    y0, y1 = math.floor(min(a.y1, b.y1) * n), math.ceil(max(a.y2, b.y2) * n)
    ax = _centers_inside(a.x1, a.x2, n, x0, x1)
    bx = _centers_inside(b.x1, b.x2, n, x0, x1)
    ay = _centers_inside(a.y1, a.y2, n, y0, y1)
    by = _centers_inside(b.y1, b.y2, n, y0, y1)
    count_a = int(np.count_nonzero(ax)) * int(np.count_nonzero(ay))
    count_b = int(np.count_nonzero(bx)) * int(np.count_nonzero(by))
    inter = int(np.count_nonzero(ax & bx)) * int(np.count_nonzero(ay & by))
    union = count_a + count_b - inter
    if union == 0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class GradCheckReport:
    kind: LossKind
    samples: int
    checked: int
    skipped_near_clamp: int
    max_rel_error: float
    max_abs_error: float
    failures: int
    tolerance: float
    atol: float
    # (pred, gt, component name) of the largest relative error, if any
    worst_case: Optional[tuple[Box, Box, str]]

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.failures == 0


_CATEGORIES = ("overlapping", "touching", "contained", "disjoint")


def _rand_box(rng, lo=0.0, hi=10.0, smin=0.5, smax=5.0) -> Box:
    w, h = rng.uniform(smin, smax, size=2)
    x, y = rng.uniform(lo, hi, size=2)
    return Box(x, y, x + w, y + h)


def sample_configuration(rng: np.random.Generator, category: str,
                         with_second: bool) -> tuple[Box, Box, Optional[Box]]:
    gt = _rand_box(rng)
    gw, gh = gt.width, gt.height
    if category == "overlapping":
        cx, cy = gt.center
        ox, oy = rng.uniform(-0.5, 0.5, size=2)
        w, h = rng.uniform(0.5, 5.0, size=2)
        pred = Box.from_cxcywh(cx + ox * gw, cy + oy * gh, w, h)
    elif category == "touching":
        w, h = rng.uniform(0.5, 5.0, size=2)
        y = gt.y1 + rng.uniform(-0.5, 0.5) * gh
        pred = Box(gt.x2, y, gt.x2 + w, y + h)
    elif category == "contained":
        fx1, fy1 = rng.uniform(0.05, 0.45, size=2)
        fx2, fy2 = rng.uniform(0.55, 0.95, size=2)
        inner = Box(gt.x1 + fx1 * gw, gt.y1 + fy1 * gh, gt.x1 + fx2 * gw, gt.y1 + fy2 * gh)
        pred, gt = (inner, gt) if rng.uniform() < 0.5 else (gt, inner)
    elif category == "disjoint":
        w, h = rng.uniform(0.5, 5.0, size=2)
        gap_x, gap_y = rng.uniform(0.1, 3.0, size=2)
        pred = Box(gt.x2 + gap_x, gt.y2 + gap_y, gt.x2 + gap_x + w, gt.y2 + gap_y + h)
    else:
        raise ValueError(f"unknown category {category!r}")
    second = None
    if with_second:
        cx, cy = pred.center
        ox, oy = rng.uniform(-0.6, 0.6, size=2)
        w, h = rng.uniform(0.5, 5.0, size=2)
        second = Box.from_cxcywh(cx + ox * pred.width, cy + oy * pred.height, w, h)
    return pred, gt, second


def near_clamp(pred: Box, others, radius: float) -> bool:
    """True if any predicted coordinate is within ``radius`` of a switch point."""
    for other in others:
        if other is None:
            continue
        for p in (pred.x1, pred.x2):
            if abs(p - other.x1) < radius or abs(p - other.x2) < radius:
                return True
        for p in (pred.y1, pred.y2):
            if abs(p - other.y1) < radius or abs(p - other.y2) < radius:
                return True
    return False


def grad_check_suite(kind: LossKind, samples: int = 10_000, seed: int = 0,
                     tolerance: float = 1e-4, h: float = 1e-5, atol: float = 1e-7,
                     skip_radius: float = 1e-3,
                     cfg: PushConfig = PushConfig(alpha=1.0)) -> GradCheckReport:
    """Compare analytic gradients against :func:`fd_gradient` on random boxes.

    Components whose magnitude exceeds ``atol`` must agree to relative
    error ``tolerance``; smaller ones must agree to absolute error ``atol``.
    Configurations closer than ``skip_radius`` to a max/min switch are
    skipped and counted.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    skipped = checked = failures = 0
    max_rel = max_abs = 0.0
    worst = None
    for i in range(samples):
        pred, gt, second = sample_configuration(rng, _CATEGORIES[i % 4], kind.is_push)
        if near_clamp(pred, (gt, second), skip_radius):
            skipped += 1
            continue
        checked += 1
        analytic = loss_eval(kind, pred, gt, second, cfg).grad
        numeric = fd_gradient(kind, pred, gt, second, cfg, h)
        for name, a, f in zip(COORDS, analytic, numeric):
            err = abs(a - f)
            max_abs = max(max_abs, err)
            scale = max(abs(a), abs(f))
            if scale <= atol:
                failures += err > atol
                continue
            rel = err / scale
            failures += rel > tolerance
            if worst is None or rel > max_rel:
                max_rel = rel
                worst = (pred, gt, name)
    return GradCheckReport(kind=kind, samples=samples, checked=checked,
                           skipped_near_clamp=skipped, max_rel_error=max_rel,
                           max_abs_error=max_abs, failures=failures,
                           tolerance=tolerance, atol=atol, worst_case=worst)


def fd_descent(kind: LossKind, pred: Box, gt: Box, steps: int, lr: float,
               second_gt: Optional[Box] = None, cfg: PushConfig = PushConfig(),
               h: float = 1e-5) -> Box:
    """Reference descent driven only by :func:`fd_gradient`."""
    box = pred
    for _ in range(steps):
        g = fd_gradient(kind, box, gt, second_gt, cfg, h)
        x1, y1, x2, y2 = (c - lr * d for c, d in zip(box, g))
        box = Box(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
    return box
