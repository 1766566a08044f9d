"""Command-line front end: extraction, gradient checks, training, matching,
evaluation, and built-in self-tests.

Exit codes: 0 success, 1 check failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import descriptor as desc
from . import evalkit, fileio, gradcheck, learning, matching, selfcheck
from .fileio import FormatError
from .learning import Bbox
from .model import SHIFT_MODES, init_model


def _parse_bbox(text: str) -> Bbox:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"bbox must be x,y,w,h, got {text!r}")
    return Bbox(*(int(p) for p in parts))


def _resolve_threads(args) -> int:
    value = args.threads
    if value is None:
        value = int(os.environ.get("FCSS_THREADS", "1"))
    if value < 1:
        raise ValueError("--threads must be >= 1")
    return value


def cmd_extract(args) -> int:
    params = fileio.load_model(args.model)
    image = fileio.load_image(args.image)
    field = desc.extract_dense(image, params)
    fileio.save_tensor(args.out, field.values)
    dim, h, w = field.shape
    print(f"L={dim} H={h} W={w}")
    return 0


def cmd_gradcheck(args) -> int:
    print(f"seed={args.seed} mode={args.mode}")
    errors = gradcheck.check_model_gradients(seed=args.seed, shift_mode=args.mode)
    errors["loss"] = gradcheck.check_loss_gradient(seed=args.seed)
    failed = []
    for group, err in errors.items():
        if math.isnan(err):
            print(f"group={group} max_rel_err=approximate (surrogate gradient, not checked)")
            continue
        status = "ok" if err <= gradcheck.PASS_THRESHOLD else "FAIL"
        print(f"group={group} max_rel_err={err:.3e} {status}")
        if err > gradcheck.PASS_THRESHOLD:
            failed.append(group)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return 1
    return 0


def cmd_train(args) -> int:
    entries = fileio.parse_manifest(args.manifest)
    params = fileio.load_model(args.model_in)
    pairs = []
    for src, tgt, bbox_a, bbox_b in entries:
        pairs.append(
            learning.ImagePairSample(
                fileio.load_image(src), fileio.load_image(tgt), bbox_a, bbox_b
            )
        )
    config = learning.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        freeze_backbone=args.freeze_backbone,
    )
    print(f"seed={config.seed} pairs={len(pairs)} lr={config.learning_rate}")
    stats = learning.train(pairs, params, config)
    for i, st in enumerate(stats, start=1):
        print(
            f"epoch={i} mean_loss={st.mean_loss:.6f} "
            f"mean_pos_dist={st.mean_positive_distance:.6f} "
            f"positives={st.positive_count} negatives={st.negative_count}"
        )
    fileio.save_model(args.model_out, params)
    return 0


def cmd_match(args) -> int:
    params = fileio.load_model(args.model)
    source = fileio.load_image(args.source)
    target = fileio.load_image(args.target)
    field_a = desc.extract_dense(source, params)
    field_b = desc.extract_dense(target, params)
    bbox_a = _parse_bbox(args.bbox_a) if args.bbox_a else None
    bbox_b = _parse_bbox(args.bbox_b) if args.bbox_b else None
    flow_ab = matching.nn_flow(
        field_a, field_b, search_bbox=bbox_b, source_bbox=bbox_a,
        window_radius=args.window_radius,
    )
    flow_ba = matching.nn_flow(
        field_b, field_a, search_bbox=bbox_a, source_bbox=bbox_b,
        window_radius=args.window_radius,
    )
    consistent = matching.lr_consistency_mask(flow_ab, flow_ba, args.lr_tau)
    flow_ab.valid &= consistent
    flow = matching.smooth_flow(flow_ab, iterations=args.smooth_iters)
    fileio.save_flow(args.out_flow, flow)
    if args.out_warp:
        fileio.save_image(args.out_warp, matching.warp_image(target, flow))
    if args.out_viz:
        fileio.save_image(args.out_viz, matching.flow_to_color(flow))
    print(
        f"flow={args.out_flow} valid_fraction={float(flow.valid.mean()):.4f} "
        f"mean_magnitude={float(np.hypot(flow.flow[0], flow.flow[1]).mean()):.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    pred = fileio.load_flow(args.flow)
    if args.gt_flow:
        gt_field = fileio.load_flow(args.gt_flow)
        gt = evalkit.GroundTruthFlow(gt_field.flow, gt_field.valid)
        acc = evalkit.flow_accuracy(pred, gt, args.threshold)
        print(f"acc={acc:.6f} threshold={args.threshold}")
        return 0
    if not args.keypoints or not args.bbox:
        raise ValueError("eval needs either --gt-flow or --keypoints with --bbox")
    src = fileio.load_keypoints(args.keypoints[0])
    tgt = fileio.load_keypoints(args.keypoints[1])
    bbox = _parse_bbox(args.bbox)
    alphas = [args.alpha] if args.alpha is not None else [0.05, 0.1, 0.15]
    parts = []
    for alpha in alphas:
        value = evalkit.pck(pred, src, tgt, bbox, alpha)
        parts.append(f"pck@{alpha:g}={value:.6f}")
    print(" ".join(parts))
    return 0


def cmd_selftest(args) -> int:
    print(f"seed={args.seed}")
    ok = True
    if args.force_fail:
        print("suite=forced status=FAIL")
        ok = False
    err = selfcheck.run_oracle_suite(n_configs=args.oracle_configs, base_seed=args.seed)
    oracle_ok = err <= 1e-6
    print(f"suite=oracle-equivalence max_rel_err={err:.3e} "
          f"status={'ok' if oracle_ok else 'FAIL'}")
    ok &= oracle_ok
    failures = selfcheck.run_invariant_suite(seed=args.seed)
    for f in failures:
        print(f"suite=invariants status=FAIL detail={f}")
    if not failures:
        print("suite=invariants status=ok")
    ok &= not failures
    report = selfcheck.speed_report(seed=args.seed)
    speed_ok = report.speedup > 1.0
    print(
        f"suite=timing reference_s={report.reference_seconds:.3f} "
        f"efficient_s={report.efficient_seconds:.3f} "
        f"speedup={report.speedup:.1f}x status={'ok' if speed_ok else 'FAIL'}"
    )
    ok &= speed_ok
    return 0 if ok else 1


def cmd_init(args) -> int:
    params = init_model(seed=args.seed)
    fileio.save_model(args.out, params)
    cfg = params.config
    print(
        f"seed={args.seed} levels={cfg.num_levels} "
        f"patterns={','.join(str(n) for n in cfg.patterns_per_level)} "
        f"dim={cfg.descriptor_dim}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfsim",
        description="Dense self-similarity descriptors for semantic image matching.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="thread count (falls back to FCSS_THREADS; computation is "
        "sequential, 1 is the deterministic default)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a freshly initialized model file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("extract", help="extract a dense descriptor field")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=SHIFT_MODES, default=SHIFT_MODES[0])
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="weakly-supervised training from a pair manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-in", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=40.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-backbone", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="dense matching between two images")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--bbox-a", default=None, help="source bbox x,y,w,h")
    p.add_argument("--bbox-b", default=None, help="target search bbox x,y,w,h")
    p.add_argument("--out-flow", required=True)
    p.add_argument("--out-warp", default=None)
    p.add_argument("--out-viz", default=None, help="color-coded flow image")
    p.add_argument("--smooth-iters", type=int, default=3)
    p.add_argument("--lr-tau", type=float, default=1.0, help="left-right consistency tolerance")
    p.add_argument("--window-radius", type=int, default=None,
                   help="limit each pixel's search to a centered window (speed)")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="match quality metrics")
    p.add_argument("--flow", required=True)
    p.add_argument("--gt-flow", default=None)
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument(
        "--keypoints", nargs=2, metavar=("SRC", "TGT"), default=None,
        help="matched keypoint files (x y per line)",
    )
    p.add_argument("--bbox", default=None, help="object bbox x,y,w,h for PCK")
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="oracle equivalence, invariants, timing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-configs", type=int, default=8)
    p.add_argument("--force-fail", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _resolve_threads(args)
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
