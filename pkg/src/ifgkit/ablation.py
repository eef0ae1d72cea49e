"""Four-way module ablation: baseline, each training head alone, and both.

All four arms share the same detector initialization, the same training
scenes, and the same data order, so the only difference between runs is
which auxiliary training heads contribute to the loss.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .evaluation import EvalConfig, LabeledBox, evaluate_class
from .pipeline import (Detection, InferConfig, TrainConfig, build_detector,
                       infer, make_scenes, make_templates, train)
from .scenes import SceneGenConfig, SceneSample

ARMS = [
    ("A", False, False),
    ("B", True, False),
    ("C", False, True),
    ("D", True, True),
]


def detections_to_labeled(detections: list[Detection], frame: int) -> list[LabeledBox]:
    return [LabeledBox(d.box, d.class_id, d.score, frame) for d in detections]


def gts_to_labeled(sample: SceneSample, frame: int) -> list[LabeledBox]:
    return [LabeledBox(b, c, None, frame)
            for b, c in zip(sample.gt_boxes, sample.gt_classes)]


def evaluate_on_scenes(detector, scenes: list[SceneSample],
                       eval_cfg: EvalConfig | None = None,
                       infer_cfg: InferConfig | None = None) -> dict:
    """Per-class AP of a detector over held-out scenes (None when no GT)."""
    eval_cfg = eval_cfg or EvalConfig()
    dets: list[LabeledBox] = []
    gts: list[LabeledBox] = []
    for i, s in enumerate(scenes):
        dets.extend(detections_to_labeled(infer(detector, s.cloud, infer_cfg), i))
        gts.extend(gts_to_labeled(s, i))
    return {c: evaluate_class(dets, gts, c, eval_cfg) for c in (1, 2, 3)}


def run_ablation(n_eval_scenes: int = 200, n_train_scenes: int = 50,
                 epochs: int = 20, seed: int = 0,
                 scene_cfg: SceneGenConfig | None = None,
                 train_cfg: TrainConfig | None = None,
                 eval_cfg: EvalConfig | None = None) -> list[dict]:
    """Train and evaluate the 2x2 of auxiliary heads with matched seeds.

    Returns one row per arm: method, use_tafe, use_pscl, per-class APs (as
    percentages), and their mean over classes with ground truth.
    """
    scene_cfg = scene_cfg or SceneGenConfig()
    base_train = train_cfg or TrainConfig(epochs=epochs, seed=seed)
    templates = make_templates(seed=seed)
    train_scenes = make_scenes(scene_cfg, n_train_scenes, seed_base=seed * 1000 + 1,
                               class_templates=templates)
    eval_scenes = make_scenes(scene_cfg, n_eval_scenes,
                              seed_base=seed * 1000 + 500_000,
                              class_templates=templates)
    rows = []
    for method, use_tafe, use_pscl in ARMS:
        detector = build_detector(scene_cfg, seed=seed)
        cfg = replace(base_train, use_tafe=use_tafe, use_pscl=use_pscl)
        train(detector, train_scenes, cfg, class_templates=templates)
        aps = evaluate_on_scenes(detector, eval_scenes, eval_cfg)
        present = [v for v in aps.values() if v is not None]
        rows.append({
            "method": method,
            "use_tafe": use_tafe,
            "use_pscl": use_pscl,
            "car_ap": None if aps[1] is None else 100.0 * aps[1],
            "ped_ap": None if aps[2] is None else 100.0 * aps[2],
            "cyc_ap": None if aps[3] is None else 100.0 * aps[3],
            "mean_ap": 100.0 * float(np.mean(present)) if present else None,
        })
    return rows


def ablation_csv(rows: list[dict]) -> str:
    out = ["method,tafe,pscl,car_ap,ped_ap,cyc_ap,mean_ap"]
    for r in rows:
        cells = [r["method"], str(int(r["use_tafe"])), str(int(r["use_pscl"]))]
        for k in ("car_ap", "ped_ap", "cyc_ap", "mean_ap"):
            cells.append("" if r[k] is None else f"{r[k]:.4f}")
        out.append(",".join(cells))
    return "\n".join(out) + "\n"
