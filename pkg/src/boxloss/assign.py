"""Per-prediction assignment: second ground truth, dynamic anchor, confidence label."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

from boxloss.geometry import Box, iou

SecondGtRule = Literal["max", "min"]


@dataclass(frozen=True)
class GroundTruthSet:
    boxes: tuple[Box, ...]

    def __init__(self, boxes: Iterable[Box]):
        object.__setattr__(self, "boxes", tuple(Box(*b) for b in boxes))

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, index: int) -> Box:
        return self.boxes[index]

    def __iter__(self):
        return iter(self.boxes)

    @property
    def ids(self) -> range:
        return range(len(self.boxes))


@dataclass(frozen=True)
class Assignment:
    pred: Box
    gt_index: int
    second_gt_index: Optional[int]
    confidence_label: float

    def __post_init__(self):
        if self.second_gt_index is not None and self.second_gt_index == self.gt_index:
            raise ValueError("second ground truth cannot be the matched one")
        if not 0.0 <= self.confidence_label <= 1.0:
            raise ValueError(f"confidence label out of range: {self.confidence_label}")


def select_second_gt(pred: Box, gts: Sequence[Box], matched: int,
                     rule: SecondGtRule = "max") -> Optional[int]:
    """Index of the competing ground truth for the push term.

    ``rule="max"`` picks the other box with the largest IoU against
    ``pred`` and returns None when nothing else overlaps it. ``rule="min"``
    picks the smallest IoU instead. Ties go to the lowest index.
    """
    if not 0 <= matched < len(gts):
        raise IndexError(f"matched index {matched} out of range for {len(gts)} ground truths")
    best, best_iou = None, None
    for j, box in enumerate(gts):
        if j == matched:
            continue
        v = iou(pred, box)
        if best is None or (v > best_iou if rule == "max" else v < best_iou):
            best, best_iou = j, v
    if rule == "max" and best is not None and best_iou <= 0.0:
        return None
    return best


def dynamic_anchor(pred: Box, gt: Box) -> Box:
    """Box with the ground truth's width and height, centered on ``pred``."""
    if gt.area <= 0.0:
        raise ValueError(f"dynamic anchor needs a ground truth with positive area, got {gt}")
    cx, cy = pred.center
    return Box.from_cxcywh(cx, cy, gt.width, gt.height)


def confidence_label(pred: Box, gt: Box, use_dynamic_anchor: bool = False) -> float:
    """Objectness target for a positive prediction.

    Without the dynamic anchor this is IoU(pred, gt); with it, the IoU of
    the anchor built from pred's center and gt's size.
    """
    if use_dynamic_anchor:
        return iou(dynamic_anchor(pred, gt), gt)
    return iou(pred, gt)


def bce_objectness(prediction: float, label: float) -> float:
    if not 0.0 < prediction < 1.0:
        raise ValueError(f"prediction must lie strictly inside (0, 1), got {prediction}")
    if not 0.0 <= label <= 1.0:
        raise ValueError(f"label must lie in [0, 1], got {label}")
    return -(label * math.log(prediction) + (1.0 - label) * math.log1p(-prediction))


def assign(pred: Box, gts: Sequence[Box], matched: int, use_dynamic_anchor: bool = False,
           rule: SecondGtRule = "max") -> Assignment:
    return Assignment(
        pred=pred,
        gt_index=matched,
        second_gt_index=select_second_gt(pred, gts, matched, rule),
        confidence_label=confidence_label(pred, gts[matched], use_dynamic_anchor),
    )
