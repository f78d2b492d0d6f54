"""IoU-family box regression losses with analytic gradients.

Every loss returns ``1 - metric`` together with the gradient with respect
to the predicted box corners, ordered ``(x1, y1, x2, y2)``.

Non-smooth points come from the max/min in the intersection and enclosing
box. At an exact tie between a predicted and a ground-truth coordinate the
derivative is split evenly between the two branches, which makes ``pred ==
gt`` a stationary point of every loss. The ``max(0, .)`` overlap clamp uses
the overlapping-side derivative when the overlap is exactly zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from boxloss.geometry import Box, overlap_geometry

Grad = tuple[float, float, float, float]
_ZERO: Grad = (0.0, 0.0, 0.0, 0.0)


class LossError(ValueError):
    """Loss undefined for the given boxes (degenerate configuration)."""


class LossKind(enum.Enum):
    IOU = "iou"
    GIOU = "giou"
    DIOU = "diou"
    DECIOU = "deciou"
    PUSH_IOU = "pushiou"
    PUSH_DECIOU = "pushdeciou"

    @classmethod
    def parse(cls, name: str) -> "LossKind":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown loss kind {name!r}; "
                         f"expected one of {', '.join(k.value for k in cls)}")

    @property
    def is_push(self) -> bool:
        return self in (LossKind.PUSH_IOU, LossKind.PUSH_DECIOU)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: Grad


@dataclass(frozen=True)
class PushConfig:
    # weight of the push term against the regression term
    alpha: float = 0.1

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 0.0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")


def _side(a: float, b: float) -> float:
    # derivative of max(a, b) with respect to a
    if a > b:
        return 1.0
    if a < b:
        return 0.0
    return 0.5


def _axis(p1, p2, g1, g2):
    """Overlap and enclosing extent along one axis, with partials wrt p1, p2."""
    raw = min(p2, g2) - max(p1, g1)
    if raw >= 0.0:
        inter, di1, di2 = raw, -_side(p1, g1), _side(g2, p2)
    else:
        inter, di1, di2 = 0.0, 0.0, 0.0
    encl = max(p2, g2) - min(p1, g1)
    return inter, di1, di2, encl, -_side(g1, p1), _side(p2, g2)


def _iou_terms(p, g):
    """IoU and its gradient, plus the per-axis terms other losses reuse."""
    px1, py1, px2, py2 = p
    gx1, gy1, gx2, gy2 = g
    w, h = px2 - px1, py2 - py1
    ax = _axis(px1, px2, gx1, gx2)
    ay = _axis(py1, py2, gy1, gy2)
    iw, dw1, dw2 = ax[0], ax[1], ax[2]
    ih, dh1, dh2 = ay[0], ay[1], ay[2]

    inter = iw * ih
    union = w * h + (gx2 - gx1) * (gy2 - gy1) - inter
    d_inter = (dw1 * ih, dh1 * iw, dw2 * ih, dh2 * iw)
    d_union = (-h - d_inter[0], -w - d_inter[1], h - d_inter[2], w - d_inter[3])
    if union > 0.0:
        iou = inter / union
        d_iou = tuple((di - iou * du) / union for di, du in zip(d_inter, d_union))
    else:
        iou, d_iou = 0.0, _ZERO
    return iou, d_iou, union, d_union, ax, ay


def _check_push_inputs(gt, second_gt):
    if second_gt is not None and tuple(second_gt) == tuple(gt):
        raise LossError("second ground truth must differ from the matched ground truth")


def loss_iou(pred: Box, gt: Box) -> LossEval:
    iou, d_iou, *_ = _iou_terms(pred, gt)
    return LossEval(1.0 - iou, tuple(-d for d in d_iou))


def loss_giou(pred: Box, gt: Box) -> LossEval:
    if pred.area == 0.0 and gt.area == 0.0:
        raise LossError("GIoU undefined: both boxes have zero area")
    iou, d_iou, union, d_union, ax, ay = _iou_terms(pred, gt)
    cw, dcw1, dcw2 = ax[3], ax[4], ax[5]
    ch, dch1, dch2 = ay[3], ay[4], ay[5]
    encl = cw * ch
    d_encl = (dcw1 * ch, dch1 * cw, dcw2 * ch, dch2 * cw)
    giou = iou - (encl - union) / encl
    # d/dp of (encl - union) / encl = -(dU * encl - U * dC) / encl^2
    grad = tuple(-di - (du * encl - union * dc) / (encl * encl)
                 for di, du, dc in zip(d_iou, d_union, d_encl))
    return LossEval(1.0 - giou, grad)


def loss_diou(pred: Box, gt: Box) -> LossEval:
    iou, d_iou, _, _, ax, ay = _iou_terms(pred, gt)
    cw, dcw1, dcw2 = ax[3], ax[4], ax[5]
    ch, dch1, dch2 = ay[3], ay[4], ay[5]
    dx = 0.5 * (pred[0] + pred[2]) - 0.5 * (gt[0] + gt[2])
    dy = 0.5 * (pred[1] + pred[3]) - 0.5 * (gt[1] + gt[3])
    dist_sq = dx * dx + dy * dy
    diag_sq = cw * cw + ch * ch
    if diag_sq == 0.0:
        # two identical point boxes
        return LossEval(1.0 - iou, tuple(-d for d in d_iou))
    penalty = dist_sq / diag_sq
    d_dist = (dx, dy, dx, dy)
    d_diag = (2.0 * cw * dcw1, 2.0 * ch * dch1, 2.0 * cw * dcw2, 2.0 * ch * dch2)
    grad = tuple(-di + (dd - penalty * dc) / diag_sq
                 for di, dd, dc in zip(d_iou, d_dist, d_diag))
    return LossEval(1.0 - (iou - penalty), grad)


def loss_deciou(pred: Box, gt: Box) -> LossEval:
    iou, d_iou, _, _, ax, ay = _iou_terms(pred, gt)
    iw, dw1, dw2, cw, dcw1, dcw2 = ax
    ih, dh1, dh2, ch, dch1, dch2 = ay
    if cw == 0.0 or ch == 0.0:
        raise LossError("DecIoU undefined: enclosing box has zero width or height")
    rx, ry = iw / cw, ih / ch
    pen_x = (1.0 - rx) ** 2
    pen_y = (1.0 - ry) ** 2
    # d/dp of (1 - i/c)^2 = -2 (1 - i/c) (di - (i/c) dc) / c
    kx = -2.0 * (1.0 - rx) / cw
    ky = -2.0 * (1.0 - ry) / ch
    d_pen = (kx * (dw1 - rx * dcw1), ky * (dh1 - ry * dch1),
             kx * (dw2 - rx * dcw2), ky * (dh2 - ry * dch2))
    deciou = iou - pen_x - pen_y
    grad = tuple(-di + dp for di, dp in zip(d_iou, d_pen))
    return LossEval(1.0 - deciou, grad)


def loss_push(pred: Box, gt: Box, second_gt: Optional[Box], kind: LossKind,
              cfg: PushConfig = PushConfig()) -> LossEval:
    """Base loss plus ``alpha * IoU(pred, second_gt)``.

    The base is the IoU loss for ``PUSH_IOU`` and the DecIoU loss for
    ``PUSH_DECIOU``. The push term always uses plain IoU. With no second
    ground truth, or ``alpha == 0``, the base loss is returned unchanged.
    """
    if kind is LossKind.PUSH_IOU:
        base = loss_iou(pred, gt)
    elif kind is LossKind.PUSH_DECIOU:
        base = loss_deciou(pred, gt)
    else:
        raise ValueError(f"{kind} is not a push loss")
    _check_push_inputs(gt, second_gt)
    if second_gt is None or cfg.alpha == 0.0:
        return base
    iou2, d_iou2, *_ = _iou_terms(pred, second_gt)
    a = cfg.alpha
    return LossEval(base.value + a * iou2,
                    tuple(g + a * d for g, d in zip(base.grad, d_iou2)))


_PLAIN = {
    LossKind.IOU: loss_iou,
    LossKind.GIOU: loss_giou,
    LossKind.DIOU: loss_diou,
    LossKind.DECIOU: loss_deciou,
}


def loss_eval(kind: LossKind, pred: Box, gt: Box, second_gt: Optional[Box] = None,
              cfg: PushConfig = PushConfig()) -> LossEval:
    """Dispatch on ``kind``; non-push kinds ignore ``second_gt`` and ``cfg``."""
    if kind.is_push:
        return loss_push(pred, gt, second_gt, kind, cfg)
    return _PLAIN[kind](pred, gt)


def loss_value(kind: LossKind, pred, gt, second_gt=None,
               cfg: PushConfig = PushConfig()) -> float:
    return loss_eval(kind, pred, gt, second_gt, cfg).value


def deciou_metric(pred: Box, gt: Box) -> float:
    """IoU minus the per-axis width and height penalties."""
    g = overlap_geometry(pred, gt)
    if g.cw == 0.0 or g.ch == 0.0:
        raise LossError("DecIoU undefined: enclosing box has zero width or height")
    return g.iou - (g.cw - g.iw) ** 2 / g.cw ** 2 - (g.ch - g.ih) ** 2 / g.ch ** 2
