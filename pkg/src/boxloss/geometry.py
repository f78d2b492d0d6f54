"""Axis-aligned box arithmetic in corner form (x1, y1, x2, y2)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class InvalidBoxError(ValueError):
    pass


class _Corners(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float


class Box(_Corners):
    """Axis-aligned rectangle, ``x2 >= x1`` and ``y2 >= y1``.

    Zero width or height is allowed (area 0); negative extent and
    non-finite coordinates raise :class:`InvalidBoxError`.
    """

    __slots__ = ()

    def __new__(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        x1, y1, x2, y2 = float(x1), float(y1), float(x2), float(y2)
        if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
            raise InvalidBoxError(f"non-finite coordinate in {(x1, y1, x2, y2)}")
        if x2 < x1 or y2 < y1:
            raise InvalidBoxError(f"negative extent in {(x1, y1, x2, y2)}")
        return super().__new__(cls, x1, y1, x2, y2)

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2)

    def to_cxcywh(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx, cy, self.width, self.height

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def contains(self, other: "Box") -> bool:
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and other.x2 <= self.x2 and other.y2 <= self.y2)


@dataclass(frozen=True)
class OverlapGeometry:
    area_pred: float
    area_gt: float
    iw: float
    ih: float
    cw: float
    ch: float
    enclosing_area: float
    center_dist_sq: float
    enclosing_diag_sq: float
    iou: float

    @property
    def intersection(self) -> float:
        return self.iw * self.ih

    @property
    def union(self) -> float:
        return self.area_pred + self.area_gt - self.iw * self.ih


def intersection_box(a: Box, b: Box) -> Box | None:
    """The overlap rectangle, or None when the boxes do not overlap on both axes."""
    x1, y1 = max(a.x1, b.x1), max(a.y1, b.y1)
    x2, y2 = min(a.x2, b.x2), min(a.y2, b.y2)
    if x2 < x1 or y2 < y1:
        return None
    return Box(x1, y1, x2, y2)


def enclosing_box(a: Box, b: Box) -> Box:
    """Smallest box containing both inputs."""
    return Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def overlap_geometry(pred: Box, gt: Box) -> OverlapGeometry:
    area_pred = (pred.x2 - pred.x1) * (pred.y2 - pred.y1)
    area_gt = (gt.x2 - gt.x1) * (gt.y2 - gt.y1)
    iw = max(0.0, min(pred.x2, gt.x2) - max(pred.x1, gt.x1))
    ih = max(0.0, min(pred.y2, gt.y2) - max(pred.y1, gt.y1))
    cw = max(pred.x2, gt.x2) - min(pred.x1, gt.x1)
    ch = max(pred.y2, gt.y2) - min(pred.y1, gt.y1)
    inter = iw * ih
    union = area_pred + area_gt - inter
    dx = 0.5 * (pred.x1 + pred.x2) - 0.5 * (gt.x1 + gt.x2)
    dy = 0.5 * (pred.y1 + pred.y2) - 0.5 * (gt.y1 + gt.y2)
    return OverlapGeometry(
        area_pred=area_pred,
        area_gt=area_gt,
        iw=iw,
        ih=ih,
        cw=cw,
        ch=ch,
        enclosing_area=cw * ch,
        center_dist_sq=dx * dx + dy * dy,
        enclosing_diag_sq=cw * cw + ch * ch,
        iou=inter / union if union > 0.0 else 0.0,
    )


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when both boxes have zero area."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    return inter / union if union > 0.0 else 0.0


def shape_error(box: Box, ref: Box) -> float:
    """|ln(w / w_ref)| + |ln(h / h_ref)|; infinite for degenerate boxes."""
    w, h, rw, rh = box.width, box.height, ref.width, ref.height
    if w <= 0.0 or h <= 0.0 or rw <= 0.0 or rh <= 0.0:
        return math.inf
    return abs(math.log(w / rw)) + abs(math.log(h / rh))
