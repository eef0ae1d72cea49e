"""Command-line front end: template/scene generation, training, inference,
evaluation, the four-way ablation, and the oracle check suite.

Flags override config-file values. All artifacts are written under --out.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks
from .ablation import ablation_csv, evaluate_on_scenes, run_ablation
from .evaluation import (EvalConfig, LabeledBox, average_precision, bucketed_ap,
                         evaluate_class, parse_labels, pr_curve, results_csv,
                         serialize_labels)
from .pipeline import (InferConfig, TrainConfig, build_detector, infer,
                       loss_log_csv, make_scenes, make_templates, train,
                       load_config)
from .scenes import SceneGenConfig, write_scene_bin
from .templates import CLASS_NAMES, generate_template, write_template


def print_report(headers: list[str], rows: list[list[str]], file=None):
    """Aligned plain-text table with a stable column order."""
    file = file or sys.stdout
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*headers), file=file)
    print("  ".join("-" * w for w in widths), file=file)
    for row in rows:
        print(fmt.format(*row), file=file)


def _load_sections(args) -> dict:
    if getattr(args, "config", None):
        return load_config(args.config)
    return {}


def _scene_cfg(sections) -> SceneGenConfig:
    return sections.get("scene", SceneGenConfig())


def _cmd_gen_templates(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for class_id, name in CLASS_NAMES.items():
        t = generate_template(class_id, k=args.k, seed=args.seed)
        write_template(out / f"{name.lower()}.ply", t)
    print(f"wrote {len(CLASS_NAMES)} templates with {args.k} points to {out}")
    return 0


def _cmd_gen_scenes(args) -> int:
    sections = _load_sections(args)
    cfg = _scene_cfg(sections)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    templates = make_templates(seed=args.seed)
    scenes = make_scenes(cfg, args.count, seed_base=args.seed, class_templates=templates)
    for i, s in enumerate(scenes):
        write_scene_bin(out / f"scene_{i:04d}.bin", s.cloud)
        labels = [LabeledBox(b, c, None, i) for b, c in zip(s.gt_boxes, s.gt_classes)]
        (out / f"scene_{i:04d}.txt").write_text(serialize_labels(labels))
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _train_cfg_from(args, sections) -> TrainConfig:
    cfg = sections.get("train", TrainConfig())
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    overrides["seed"] = args.seed
    if args.no_tafe:
        overrides["use_tafe"] = False
    if args.no_pscl:
        overrides["use_pscl"] = False
    ab = sections.get("ablation")
    if ab and not (args.no_tafe or args.no_pscl):
        overrides.setdefault("use_tafe", ab.get("use_tafe", cfg.use_tafe))
        overrides.setdefault("use_pscl", ab.get("use_pscl", cfg.use_pscl))
    return replace(cfg, **overrides)


def _cmd_train(args) -> int:
    sections = _load_sections(args)
    scene_cfg = _scene_cfg(sections)
    train_cfg = _train_cfg_from(args, sections)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    templates = make_templates(seed=args.seed)
    scenes = make_scenes(scene_cfg, args.scenes, seed_base=args.seed * 1000 + 1,
                         class_templates=templates)
    detector = build_detector(scene_cfg, rpn_cfg=sections.get("rpn"),
                              refine_cfg=sections.get("refine"), seed=args.seed)
    log = train(detector, scenes, train_cfg, class_templates=templates)
    detector.save(out / "checkpoint.ifgk")
    (out / "loss_log.csv").write_text(loss_log_csv(log))
    print(f"trained {train_cfg.epochs} epochs on {len(scenes)} scenes; "
          f"final loss {log[-1]['total']:.4f} (initial {log[0]['total']:.4f})")
    return 0


def _cmd_infer(args) -> int:
    sections = _load_sections(args)
    scene_cfg = _scene_cfg(sections)
    infer_cfg = sections.get("infer", InferConfig())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detector = build_detector(scene_cfg, rpn_cfg=sections.get("rpn"),
                              refine_cfg=sections.get("refine"), seed=args.seed)
    detector.load(args.checkpoint)
    templates = make_templates(seed=args.seed)
    scenes = make_scenes(scene_cfg, args.scenes, seed_base=args.scene_seed,
                         class_templates=templates)
    for i, s in enumerate(scenes):
        dets = infer(detector, s.cloud, infer_cfg)
        labeled = [LabeledBox(d.box, d.class_id, d.score, i) for d in dets]
        (out / f"det_{i:04d}.txt").write_text(serialize_labels(labeled))
        gt = [LabeledBox(b, c, None, i) for b, c in zip(s.gt_boxes, s.gt_classes)]
        (out / f"gt_{i:04d}.txt").write_text(serialize_labels(gt))
    print(f"wrote detections for {len(scenes)} scenes to {out}")
    return 0


def _read_label_dir(path: Path, prefix: str) -> list[LabeledBox]:
    out = []
    for i, f in enumerate(sorted(path.glob(f"{prefix}*.txt"))):
        out.extend(parse_labels(f.read_text(), frame=i))
    return out


def _cmd_eval(args) -> int:
    sections = _load_sections(args)
    cfg = EvalConfig(recall_mode=args.mode)
    dets = _read_label_dir(Path(args.detections), args.det_prefix)
    gts = _read_label_dir(Path(args.labels), args.label_prefix)
    rows = []
    table = []
    for class_id, name in CLASS_NAMES.items():
        ap = evaluate_class(dets, gts, class_id, cfg)
        rows.append({"class": name, "bucket": "all", "mode": args.mode, "ap": ap})
    per_bucket = bucketed_ap(dets, gts, cfg)
    for class_id, name in CLASS_NAMES.items():
        for k, (lo, hi) in enumerate(cfg.distance_buckets):
            label = f"{lo:g}-{hi:g}m"
            rows.append({"class": name, "bucket": label, "mode": args.mode,
                         "ap": per_bucket[class_id][k]})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ap.csv").write_text(results_csv(rows))
    for r in rows:
        table.append([r["class"], r["bucket"], r["mode"],
                      "-" if r["ap"] is None else f"{100 * r['ap']:.2f}"])
    print_report(["class", "bucket", "mode", "AP(%)"], table)
    return 0


def _cmd_ablate(args) -> int:
    sections = _load_sections(args)
    rows = run_ablation(n_eval_scenes=args.scenes,
                        n_train_scenes=args.train_scenes,
                        epochs=args.epochs, seed=args.seed,
                        scene_cfg=_scene_cfg(sections),
                        train_cfg=sections.get("train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(ablation_csv(rows))
    table = [[r["method"], "x" if r["use_tafe"] else "",
              "x" if r["use_pscl"] else ""]
             + ["-" if r[k] is None else f"{r[k]:.2f}"
                for k in ("car_ap", "ped_ap", "cyc_ap", "mean_ap")]
             for r in rows]
    print_report(["method", "TAFE", "PSCL", "car AP", "ped AP", "cyc AP", "mean AP"],
                 table)
    return 0


def _cmd_check(args) -> int:
    results = checks.run_all(seed=args.seed)
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifgkit",
        description="Template-guided 3D detection toolkit "
                    "(flags override --config values)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-templates", help="write class template PLY files")
    common(p)
    p.add_argument("--k", type=int, default=1024, help="points per template")
    p.set_defaults(fn=_cmd_gen_templates)

    p = sub.add_parser("gen-scenes", help="write synthetic scene dumps + labels")
    common(p)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(fn=_cmd_gen_scenes)

    p = sub.add_parser("train", help="train a detector; writes checkpoint + loss CSV")
    common(p)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-tafe", action="store_true")
    p.add_argument("--no-pscl", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="run inference; writes detection labels")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--scene-seed", type=int, default=500000)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="evaluate detections against labels; writes AP CSV")
    common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--det-prefix", default="det_")
    p.add_argument("--label-prefix", default="gt_")
    p.add_argument("--mode", choices=["R11", "R40"], default="R11")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the 2x2 module ablation; writes CSV")
    common(p)
    p.add_argument("--scenes", type=int, default=200, help="held-out eval scenes")
    p.add_argument("--train-scenes", type=int, default=50)
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("check", help="run IoU/NMS/gradient oracle suites")
    common(p, out=False)
    p.set_defaults(fn=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
