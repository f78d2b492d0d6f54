"""Scenario files (JSON) and trace output (CSV)."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path
from typing import IO, Iterable

import jsonschema

from boxloss.assign import GroundTruthSet
from boxloss.geometry import Box, InvalidBoxError
from boxloss.losses import LossKind
from boxloss.simulate import Scenario, TraceRow

TRACE_HEADER = ("step", "pred_index", "x1", "y1", "x2", "y2", "loss",
                "iou_gt", "iou_gt2", "shape_error", "conf_label")


class ScenarioError(ValueError):
    """Invalid scenario document; the message starts with the JSON path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def scenario_schema() -> dict:
    text = resources.files("boxloss").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def _boxes(doc: dict, key: str) -> list[Box]:
    out = []
    for i, coords in enumerate(doc[key]):
        try:
            out.append(Box(*coords))
        except InvalidBoxError as exc:
            raise ScenarioError(f"$.{key}[{i}]", str(exc)) from None
    return out


def parse_scenario(doc) -> Scenario:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise ScenarioError(err.json_path, err.message)

    gts = _boxes(doc, "gts")
    preds = _boxes(doc, "initial_preds")
    if len(doc["matches"]) != len(preds):
        raise ScenarioError("$.matches", f"expected {len(preds)} entries, "
                                         f"one per initial prediction, got {len(doc['matches'])}")
    for i, m in enumerate(doc["matches"]):
        if m >= len(gts):
            raise ScenarioError(f"$.matches[{i}]", f"index {m} out of range for {len(gts)} gts")
    try:
        loss = LossKind.parse(doc["loss"])
    except ValueError as exc:
        raise ScenarioError("$.loss", str(exc)) from None

    return Scenario(
        name=doc["name"],
        gts=GroundTruthSet(gts),
        initial_preds=tuple(preds),
        matches=tuple(doc["matches"]),
        loss=loss,
        steps=doc["steps"],
        learning_rate=float(doc["learning_rate"]),
        push_alpha=float(doc.get("push_alpha", 0.1)),
        dynamic_anchor=doc.get("dynamic_anchor", False),
        nms_threshold=doc.get("nms_threshold"),
        seed=doc.get("seed", 0),
        second_gt_rule=doc.get("second_gt_rule", "max"),
    )


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("$", f"not valid JSON: {exc}") from None
    return parse_scenario(doc)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "gts": [list(b) for b in s.gts],
        "initial_preds": [list(b) for b in s.initial_preds],
        "matches": list(s.matches),
        "loss": s.loss.value,
        "push_alpha": s.push_alpha,
        "dynamic_anchor": s.dynamic_anchor,
        "steps": s.steps,
        "learning_rate": s.learning_rate,
        "nms_threshold": s.nms_threshold,
        "seed": s.seed,
        "second_gt_rule": s.second_gt_rule,
    }


def fmt(v: float, digits: int = 9) -> str:
    return f"{v + 0.0:.{digits}g}"


def write_trace_csv(rows: Iterable[TraceRow], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in rows:
        w.writerow([r.step, r.pred_index, *(fmt(c) for c in r.box),
                    fmt(r.loss_value), fmt(r.iou_to_gt), fmt(r.iou_to_second_gt),
                    fmt(r.shape_error), fmt(r.confidence_label)])
