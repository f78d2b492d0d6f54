"""Command line entry point.

Exit codes: 0 success, 1 validation failure (bad arguments, bad scenario
file, failed gradient check), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from boxloss.geometry import Box, InvalidBoxError
from boxloss.io import ScenarioError, fmt, load_scenario, write_trace_csv
from boxloss.losses import LossError, LossKind, PushConfig, loss_eval
from boxloss.oracle import COORDS, grad_check_suite
from boxloss.simulate import (DescentError, Detection, final_rows, greedy_nms,
                              label_accuracy_experiment, match_recall,
                              occlusion_recall_experiment, run_descent,
                              shape_consistency_experiment)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _box(text: str) -> Box:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected x1,y1,x2,y2, got {text!r}")
    try:
        return Box(*(float(p) for p in parts))
    except (ValueError, InvalidBoxError) as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _kind(text: str) -> LossKind:
    try:
        return LossKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _kind_pair(text: str) -> tuple[LossKind, LossKind]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated losses, got {text!r}")
    return _kind(parts[0]), _kind(parts[1])


def _err(msg: str) -> None:
    print(f"boxloss: {msg}", file=sys.stderr)


def cmd_loss(args) -> int:
    try:
        cfg = PushConfig(args.alpha)
        ev = loss_eval(args.kind, args.pred, args.gt, args.second_gt, cfg)
    except (LossError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    print(f"kind {args.kind}")
    print(f"value {fmt(ev.value, 12)}")
    for name, g in zip(COORDS, ev.grad):
        print(f"grad_{name} {fmt(g, 12)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    kinds = list(LossKind) if args.kind == "all" else [_kind(args.kind)]
    ok = True
    for kind in kinds:
        r = grad_check_suite(kind, samples=args.samples, seed=args.seed,
                             tolerance=args.tolerance, h=args.h, atol=args.atol,
                             cfg=PushConfig(args.alpha))
        print(f"kind={kind} samples={r.samples} checked={r.checked} "
              f"skipped_near_clamp={r.skipped_near_clamp} failures={r.failures} "
              f"max_abs={r.max_abs_error:.6e}")
        if r.worst_case is not None:
            pred, gt, comp = r.worst_case
            print(f"  worst pred=({','.join(fmt(c, 12) for c in pred)}) "
                  f"gt=({','.join(fmt(c, 12) for c in gt)}) component={comp}")
        print(f"GRADCHECK kind={kind} max_rel={r.max_rel_error:.6e} "
              f"pass={'true' if r.passed else 'false'}")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_INVALID


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        _err(f"cannot read scenario: {exc}")
        return EXIT_INVALID
    except ScenarioError as exc:
        _err(f"invalid scenario: {exc}")
        return EXIT_INVALID
    if args.loss is not None:
        scenario = scenario.with_loss(args.loss)
    try:
        rows = run_descent(scenario)
    except DescentError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    try:
        with open(args.out, "w", newline="") as fh:
            write_trace_csv(rows, fh)
    except OSError as exc:
        _err(f"cannot write trace: {exc}")
        return EXIT_RUNTIME

    final = final_rows(rows)
    n = len(final)
    print(f"scenario={scenario.name} loss={scenario.loss} steps={scenario.steps} "
          f"predictions={n} rows={len(rows)}")
    print(f"final mean_iou_gt={fmt(sum(r.iou_to_gt for r in final) / n)} "
          f"mean_shape_error={fmt(sum(r.shape_error for r in final) / n)}")
    if scenario.nms_threshold is not None:
        dets = [Detection(r.box, r.confidence_label, r.pred_index) for r in final]
        kept = greedy_nms(dets, scenario.nms_threshold)
        recall = match_recall(kept, scenario.gts.boxes)
        print(f"nms threshold={fmt(scenario.nms_threshold)} kept={len(kept)}/{n} "
              f"recall={fmt(recall)}")
    return EXIT_OK


def cmd_nms_demo(args) -> int:
    loss_a, loss_b = args.losses
    try:
        cfg = PushConfig(args.alpha)
        r = occlusion_recall_experiment(args.overlap, loss_a, loss_b, args.trials, cfg,
                                        seed=args.seed, steps=args.steps,
                                        learning_rate=args.lr)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    except DescentError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"overlap={fmt(args.overlap)} trials={r.trials} alpha={fmt(args.alpha)} "
          f"steps={args.steps} lr={fmt(args.lr)} seed={args.seed}")
    print(f"{'loss':<12} {'mean_recall':>12} {'mean_iou_gt2':>13}")
    print(f"{loss_a.value:<12} {r.mean_recall_a:>12.6f} {r.mean_iou_second_a:>13.6f}")
    print(f"{loss_b.value:<12} {r.mean_recall_b:>12.6f} {r.mean_iou_second_b:>13.6f}")
    print(f"difference ({loss_b.value} - {loss_a.value}) mean={r.mean_difference:+.6f} "
          f"wins={r.wins} losses={r.losses} ties={r.ties}")
    return EXIT_OK


def cmd_label_demo(args) -> int:
    try:
        r = label_accuracy_experiment(args.trials, seed=args.seed, offset_frac=args.offset_frac)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    print(f"trials={r.trials} seed={args.seed} offset_frac={fmt(args.offset_frac)}")
    print(f"mean_label plain={r.mean_plain:.6f} dynamic={r.mean_dynamic:.6f}")
    print(f"dynamic_exceeds_plain={r.exceed_fraction:.6f}")
    print(f"center_aligned cases={r.aligned_cases} "
          f"dynamic_ge_plain={r.aligned_dominance_fraction:.6f}")
    return EXIT_OK


def cmd_shape_demo(args) -> int:
    loss_a, loss_b = args.losses
    try:
        r = shape_consistency_experiment(args.trials, seed=args.seed, steps=args.steps,
                                         learning_rate=args.lr, loss_a=loss_a, loss_b=loss_b)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    except DescentError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"trials={args.trials} steps={args.steps} lr={fmt(args.lr)} seed={args.seed}")
    print(f"{'loss':<12} {'mean_shape_error':>17} {'mean_iou_gt':>12}")
    print(f"{loss_a.value:<12} {r.mean_shape_error_a:>17.6f} {r.mean_iou_a:>12.6f}")
    print(f"{loss_b.value:<12} {r.mean_shape_error_b:>17.6f} {r.mean_iou_b:>12.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxloss", description="IoU-family box losses and descent experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("loss", help="evaluate one loss and its gradient")
    p.add_argument("--kind", type=_kind, required=True)
    p.add_argument("--pred", type=_box, required=True, help="x1,y1,x2,y2")
    p.add_argument("--gt", type=_box, required=True, help="x1,y1,x2,y2")
    p.add_argument("--second-gt", type=_box, default=None, help="x1,y1,x2,y2 (push losses)")
    p.add_argument("--alpha", type=float, default=0.1, help="push weight (default 0.1)")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--kind", default="all", help="loss kind or 'all'")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-7,
                   help="absolute tolerance for components near zero")
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--alpha", type=float, default=1.0, help="push weight for push losses")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("simulate", help="run a scenario file and write the CSV trace")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--loss", type=_kind, default=None, help="override the scenario's loss")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nms-demo", help="paired occlusion recall through greedy NMS")
    p.add_argument("--overlap", type=float, default=0.55, help="IoU between the two gts")
    p.add_argument("--losses", type=_kind_pair, default=(LossKind.IOU, LossKind.PUSH_IOU))
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=cmd_nms_demo)

    p = sub.add_parser("label-demo", help="dynamic-anchor vs plain confidence labels")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--offset-frac", type=float, default=0.25,
                   help="max center offset as a fraction of the gt diagonal")
    p.set_defaults(func=cmd_label_demo)

    p = sub.add_parser("shape-demo", help="paired shape error after descent")
    p.add_argument("--losses", type=_kind_pair, default=(LossKind.IOU, LossKind.DECIOU))
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.set_defaults(func=cmd_shape_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
