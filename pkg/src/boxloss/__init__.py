"""IoU-family box regression losses, label assignment and a descent/NMS simulator."""

from boxloss.assign import (Assignment, GroundTruthSet, assign, bce_objectness,
                            confidence_label, dynamic_anchor, select_second_gt)
from boxloss.geometry import (Box, InvalidBoxError, OverlapGeometry, enclosing_box,
                              intersection_box, iou, overlap_geometry, shape_error)
from boxloss.losses import (LossError, LossEval, LossKind, PushConfig, deciou_metric,
                            loss_deciou, loss_diou, loss_eval, loss_giou, loss_iou,
                            loss_push)

__all__ = [
    "Assignment", "Box", "GroundTruthSet", "InvalidBoxError", "LossError", "LossEval",
    "LossKind", "OverlapGeometry", "PushConfig", "assign", "bce_objectness",
    "confidence_label", "deciou_metric", "dynamic_anchor", "enclosing_box",
    "intersection_box", "iou", "loss_deciou", "loss_diou", "loss_eval", "loss_giou",
    "loss_iou", "loss_push", "overlap_geometry", "select_second_gt", "shape_error",
]
