"""Gradient-descent box regression, greedy NMS and the synthetic experiments."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from boxloss.assign import (GroundTruthSet, SecondGtRule, confidence_label,
                            select_second_gt)
from boxloss.geometry import Box, InvalidBoxError, iou, shape_error
from boxloss.losses import LossError, LossKind, PushConfig, loss_eval

log = logging.getLogger(__name__)


class DescentError(RuntimeError):
    def __init__(self, step: int, pred_index: int, reason: str):
        super().__init__(f"descent aborted at step {step}, prediction {pred_index}: {reason}")
        self.step = step
        self.pred_index = pred_index


@dataclass(frozen=True)
class Scenario:
    name: str
    gts: GroundTruthSet
    initial_preds: tuple[Box, ...]
    matches: tuple[int, ...]
    loss: LossKind
    steps: int
    learning_rate: float
    push_alpha: float = 0.1
    dynamic_anchor: bool = False
    nms_threshold: Optional[float] = None
    seed: int = 0
    second_gt_rule: SecondGtRule = "max"

    def __post_init__(self):
        if len(self.matches) != len(self.initial_preds):
            raise ValueError(f"{len(self.matches)} matches for {len(self.initial_preds)} predictions")
        for i, m in enumerate(self.matches):
            if not 0 <= m < len(self.gts):
                raise ValueError(f"matches[{i}] = {m} is not a valid ground-truth index")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if self.nms_threshold is not None and not 0.0 <= self.nms_threshold <= 1.0:
            raise ValueError("nms_threshold must lie in [0, 1]")
        PushConfig(self.push_alpha)

    def with_loss(self, loss: LossKind) -> "Scenario":
        return Scenario(**{**self.__dict__, "loss": loss})


@dataclass(frozen=True)
class TraceRow:
    step: int
    pred_index: int
    box: Box
    loss_value: float
    iou_to_gt: float
    iou_to_second_gt: float
    shape_error: float
    confidence_label: float


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    index: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def gradient_step(box: Box, grad, lr: float) -> Box:
    """One descent step; crossed corners are swapped back into order."""
    x1, y1, x2, y2 = (c - lr * g for c, g in zip(box, grad))
    if x1 > x2 or y1 > y2:
        log.debug("corner swap after step: %s", (x1, y1, x2, y2))
        x1, x2 = min(x1, x2), max(x1, x2)
        y1, y2 = min(y1, y2), max(y1, y2)
    return Box(x1, y1, x2, y2)


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def branch_signature(box: Box, refs: Sequence[Optional[Box]]) -> tuple:
    """Which side of every max/min switch the box sits on."""
    sig = []
    for r in refs:
        if r is None:
            sig.append(None)
            continue
        sig.extend((
            _sign(box.x1 - r.x1), _sign(r.x2 - box.x2),
            _sign(min(box.x2, r.x2) - max(box.x1, r.x1)),
            _sign(box.y1 - r.y1), _sign(r.y2 - box.y2),
            _sign(min(box.y2, r.y2) - max(box.y1, r.y1)),
        ))
    return tuple(sig)


def run_descent(s: Scenario, monitor: bool = False) -> list[TraceRow]:
    """Descend every prediction for ``s.steps`` steps.

    Rows are emitted for step 0 (the initial boxes) through ``s.steps``,
    ordered by step then prediction. The second ground truth is
    re-selected at every step.

    With ``monitor`` set, a loss increase between two consecutive steps
    that sit in the same smooth piece of the loss (no max/min switch
    crossed, same second ground truth) aborts the run. Increases caused by
    stepping across a kink are expected with a fixed step size and are
    not flagged.
    """
    cfg = PushConfig(s.push_alpha)
    gts = s.gts.boxes
    boxes = list(s.initial_preds)
    last: list[Optional[tuple]] = [None] * len(boxes)
    rows = []
    for step in range(s.steps + 1):
        for i, box in enumerate(boxes):
            gt = gts[s.matches[i]]
            j = select_second_gt(box, gts, s.matches[i], s.second_gt_rule)
            second = gts[j] if j is not None else None
            try:
                ev = loss_eval(s.loss, box, gt, second, cfg)
            except LossError as exc:
                raise DescentError(step, i, str(exc)) from exc
            if monitor:
                sig = (j, branch_signature(box, (gt, second)))
                if last[i] is not None and last[i][0] == sig and ev.value > last[i][1]:
                    raise DescentError(step, i, f"loss increased from {last[i][1]!r} "
                                                f"to {ev.value!r} inside a smooth region")
                last[i] = (sig, ev.value)
            rows.append(TraceRow(
                step=step,
                pred_index=i,
                box=box,
                loss_value=ev.value,
                iou_to_gt=iou(box, gt),
                iou_to_second_gt=iou(box, second) if second is not None else 0.0,
                shape_error=shape_error(box, gt),
                confidence_label=confidence_label(box, gt, s.dynamic_anchor),
            ))
            if step < s.steps:
                try:
                    boxes[i] = gradient_step(box, ev.grad, s.learning_rate)
                except InvalidBoxError as exc:
                    raise DescentError(step, i, str(exc)) from exc
    return rows


def final_rows(rows: Sequence[TraceRow]) -> list[TraceRow]:
    last = rows[-1].step
    return [r for r in rows if r.step == last]


def monotonicity_violations(rows: Sequence[TraceRow], slack: float = 0.0) -> list[tuple[int, int]]:
    """(step, pred_index) pairs where the loss rose by more than ``slack``."""
    prev: dict[int, float] = {}
    bad = []
    for r in rows:
        if r.pred_index in prev and r.loss_value > prev[r.pred_index] + slack:
            bad.append((r.step, r.pred_index))
        prev[r.pred_index] = r.loss_value
    return bad


def greedy_nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(dets, key=lambda d: (-d.score, d.index))
    keep = []
    while order:
        top = order.pop(0)
        keep.append(top)
        order = [d for d in order if iou(top.box, d.box) <= iou_threshold]
    return keep


def match_recall(dets: Sequence[Detection], gts: Sequence[Box], iou_threshold: float = 0.5) -> float:
    """Fraction of ground truths matched one-to-one by a detection.

    Detections are taken in score order; each claims the unmatched ground
    truth it overlaps most, if that overlap reaches ``iou_threshold``.
    """
    if not gts:
        return 0.0
    free = set(range(len(gts)))
    for d in sorted(dets, key=lambda d: (-d.score, d.index)):
        best, best_iou = None, -1.0
        for j in sorted(free):
            v = iou(d.box, gts[j])
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            free.discard(best)
    return (len(gts) - len(free)) / len(gts)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BOXLOSS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Ordered map; fans out to processes when BOXLOSS_THREADS > 1."""
    items = list(items)
    n = _workers()
    if n > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- synthetic scenes ---------------------------------------------------------

def two_gt_scene(overlap_iou: float, side: float = 4.0) -> tuple[Box, Box]:
    """Two equal squares, offset horizontally so their IoU is ``overlap_iou``.

    For squares of side s shifted by d, IoU = (s - d) / (s + d).
    """
    if not 0.0 < overlap_iou < 1.0:
        raise ValueError(f"cannot place two distinct boxes at IoU {overlap_iou}")
    d = side * (1.0 - overlap_iou) / (1.0 + overlap_iou)
    return Box(0.0, 0.0, side, side), Box(d, 0.0, d + side, side)


def jitter_box(gt: Box, rng: np.random.Generator, frac: float = 0.25) -> Box:
    """Perturb each corner by up to ``frac`` of the ground-truth side length."""
    w, h = gt.width, gt.height
    dx1, dx2 = rng.uniform(-frac * w, frac * w, size=2)
    dy1, dy2 = rng.uniform(-frac * h, frac * h, size=2)
    return Box(gt.x1 + dx1, gt.y1 + dy1, gt.x2 + dx2, gt.y2 + dy2)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


# -- occlusion / NMS recall ---------------------------------------------------

@dataclass(frozen=True)
class OcclusionSummary:
    overlap: float
    loss_a: LossKind
    loss_b: LossKind
    alpha: float
    recall_a: tuple[float, ...]
    recall_b: tuple[float, ...]
    iou_second_a: tuple[float, ...]
    iou_second_b: tuple[float, ...]

    @property
    def trials(self) -> int:
        return len(self.recall_a)

    @property
    def mean_recall_a(self) -> float:
        return float(np.mean(self.recall_a))

    @property
    def mean_recall_b(self) -> float:
        return float(np.mean(self.recall_b))

    @property
    def differences(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.recall_a, self.recall_b))

    @property
    def mean_difference(self) -> float:
        return float(np.mean(self.differences))

    @property
    def wins(self) -> int:
        return sum(d > 0 for d in self.differences)

    @property
    def losses(self) -> int:
        return sum(d < 0 for d in self.differences)

    @property
    def ties(self) -> int:
        return sum(d == 0 for d in self.differences)

    @property
    def mean_iou_second_a(self) -> float:
        return float(np.mean(self.iou_second_a))

    @property
    def mean_iou_second_b(self) -> float:
        return float(np.mean(self.iou_second_b))


@dataclass(frozen=True)
class _OcclusionParams:
    overlap: float
    losses: tuple[LossKind, LossKind]
    alpha: float
    seed: int
    steps: int
    lr: float
    nms_threshold: float
    match_threshold: float
    dynamic_anchor: bool


def _occlusion_trial(p: _OcclusionParams, trial: int):
    gts = two_gt_scene(p.overlap)
    rng = _trial_rng(p.seed, trial)
    preds = tuple(jitter_box(g, rng) for g in gts)
    out = []
    for kind in p.losses:
        s = Scenario(name=f"occlusion-{trial}", gts=GroundTruthSet(gts), initial_preds=preds,
                     matches=(0, 1), loss=kind, steps=p.steps, learning_rate=p.lr,
                     push_alpha=p.alpha, dynamic_anchor=p.dynamic_anchor, seed=p.seed)
        final = final_rows(run_descent(s))
        dets = [Detection(r.box, r.confidence_label, r.pred_index) for r in final]
        kept = greedy_nms(dets, p.nms_threshold)
        out.append((match_recall(kept, gts, p.match_threshold),
                    float(np.mean([r.iou_to_second_gt for r in final]))))
    return out


def occlusion_recall_experiment(gt_overlap_iou: float, loss_a: LossKind, loss_b: LossKind,
                                trials: int, cfg: PushConfig = PushConfig(), seed: int = 0,
                                steps: int = 300, learning_rate: float = 0.05,
                                nms_threshold: float = 0.5, match_threshold: float = 0.5,
                                dynamic_anchor: bool = False) -> OcclusionSummary:
    """Paired recall after descent and NMS on two-object occlusion scenes.

    Each trial jitters one prediction per ground truth, descends it under
    both losses from the same start, scores the final boxes by their
    confidence label, runs greedy NMS and measures one-to-one recall.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    two_gt_scene(gt_overlap_iou)
    params = _OcclusionParams(gt_overlap_iou, (loss_a, loss_b), cfg.alpha, seed, steps,
                              learning_rate, nms_threshold, match_threshold, dynamic_anchor)
    results = parallel_map(partial(_occlusion_trial, params), range(trials))
    return OcclusionSummary(
        overlap=gt_overlap_iou, loss_a=loss_a, loss_b=loss_b, alpha=cfg.alpha,
        recall_a=tuple(r[0][0] for r in results),
        recall_b=tuple(r[1][0] for r in results),
        iou_second_a=tuple(r[0][1] for r in results),
        iou_second_b=tuple(r[1][1] for r in results),
    )


# -- dynamic-anchor labels ----------------------------------------------------

@dataclass(frozen=True)
class LabelSummary:
    trials: int
    mean_plain: float
    mean_dynamic: float
    exceed_fraction: float
    # center-aligned re-runs of the mismatched-size pairs
    aligned_cases: int
    aligned_dominance_fraction: float


def label_accuracy_experiment(trials: int, seed: int = 0, offset_frac: float = 0.25,
                              size_range: tuple[float, float] = (1.0, 8.0)) -> LabelSummary:
    """Compare confidence labels with and without the dynamic anchor.

    Predictions get random sizes and a center offset drawn uniformly from
    the disc of radius ``offset_frac`` times the ground-truth diagonal.
    Every pair is also re-evaluated with the prediction moved onto the
    ground-truth center.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = size_range
    plain, dynamic = [], []
    aligned_total = aligned_ok = 0
    for _ in range(trials):
        gw, gh, pw, ph = rng.uniform(lo, hi, size=4)
        radius = offset_frac * math.hypot(gw, gh) * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        gt = Box.from_cxcywh(0.0, 0.0, gw, gh)
        pred = Box.from_cxcywh(radius * math.cos(theta), radius * math.sin(theta), pw, ph)
        plain.append(confidence_label(pred, gt, False))
        dynamic.append(confidence_label(pred, gt, True))
        if (pw, ph) != (gw, gh):
            centered = Box.from_cxcywh(0.0, 0.0, pw, ph)
            aligned_total += 1
            aligned_ok += (confidence_label(centered, gt, True)
                           >= confidence_label(centered, gt, False))
    return LabelSummary(
        trials=trials,
        mean_plain=float(np.mean(plain)),
        mean_dynamic=float(np.mean(dynamic)),
        exceed_fraction=float(np.mean(np.asarray(dynamic) > np.asarray(plain))),
        aligned_cases=aligned_total,
        aligned_dominance_fraction=aligned_ok / aligned_total if aligned_total else 1.0,
    )


# -- shape consistency --------------------------------------------------------

@dataclass(frozen=True)
class ShapeSummary:
    loss_a: LossKind
    loss_b: LossKind
    shape_error_a: tuple[float, ...]
    shape_error_b: tuple[float, ...]
    iou_a: tuple[float, ...]
    iou_b: tuple[float, ...]

    @property
    def mean_shape_error_a(self) -> float:
        return float(np.mean(self.shape_error_a))

    @property
    def mean_shape_error_b(self) -> float:
        return float(np.mean(self.shape_error_b))

    @property
    def mean_iou_a(self) -> float:
        return float(np.mean(self.iou_a))

    @property
    def mean_iou_b(self) -> float:
        return float(np.mean(self.iou_b))


def aspect_mismatched_pair(rng: np.random.Generator) -> tuple[Box, Box]:
    """A ground truth and a roughly concentric prediction with a skewed aspect ratio."""
    gw, gh = rng.uniform(2.0, 6.0, size=2)
    k = rng.uniform(1.5, 2.5)
    if rng.uniform() < 0.5:
        pw, ph = gw * k, gh / k
    else:
        pw, ph = gw / k, gh * k
    ox, oy = rng.uniform(-0.1, 0.1, size=2)
    gt = Box.from_cxcywh(0.0, 0.0, gw, gh)
    return Box.from_cxcywh(ox * gw, oy * gh, pw, ph), gt


@dataclass(frozen=True)
class _ShapeParams:
    losses: tuple[LossKind, LossKind]
    seed: int
    steps: int
    lr: float


def _shape_trial(p: _ShapeParams, trial: int):
    pred, gt = aspect_mismatched_pair(_trial_rng(p.seed, trial))
    out = []
    for kind in p.losses:
        s = Scenario(name=f"shape-{trial}", gts=GroundTruthSet([gt]), initial_preds=(pred,),
                     matches=(0,), loss=kind, steps=p.steps, learning_rate=p.lr, seed=p.seed)
        last = run_descent(s)[-1]
        out.append((last.shape_error, last.iou_to_gt))
    return out


def shape_consistency_experiment(trials: int = 100, seed: int = 0, steps: int = 1000,
                                 learning_rate: float = 1e-2,
                                 loss_a: LossKind = LossKind.IOU,
                                 loss_b: LossKind = LossKind.DECIOU) -> ShapeSummary:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = _ShapeParams((loss_a, loss_b), seed, steps, learning_rate)
    results = parallel_map(partial(_shape_trial, params), range(trials))
    return ShapeSummary(
        loss_a=loss_a, loss_b=loss_b,
        shape_error_a=tuple(r[0][0] for r in results),
        shape_error_b=tuple(r[1][0] for r in results),
        iou_a=tuple(r[0][1] for r in results),
        iou_b=tuple(r[1][1] for r in results),
    )
