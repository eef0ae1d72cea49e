"""Two-stage detector: anchors, forward passes, training loop, inference,
checkpointing, and the JSON config loader."""

import json
import math

import numpy as np
import pytest

from ifgkit.assign import AssignmentConfig
from ifgkit.geom import Box3D, bev_iou
from ifgkit.netcore import Tensor, grad_check
from ifgkit.pipeline import (InferConfig, RefineConfig, RpnConfig, TrainConfig,
                             build_detector, canonical_decode, canonical_encode,
                             infer, load_config, loss_log_csv, make_scenes,
                             make_templates, prepare_scene, train, train_step)
from ifgkit.scenes import SceneGenConfig

TEMPLATES = make_templates(k=256, seed=0)
SCENE_CFG = SceneGenConfig()


def small_detector(seed=0):
    from ifgkit.netcore import FeatureExtractorConfig
    ex = FeatureExtractorConfig(m=16, group_sizes=(4, 8), fc_sizes=(32,))
    return build_detector(SCENE_CFG, extractor_cfg=ex, seed=seed)


def test_anchor_grid_layout():
    det = small_detector()
    g = det.grid
    assert g.nx == 100 and g.ny == 100
    assert g.per_cell == 6
    assert g.n_anchors == 100 * 100 * 6
    # first cell's anchors sit at its center with canonical dims
    b = g.boxes[0]
    assert b.x == pytest.approx(SCENE_CFG.x_range[0] + 0.2)
    assert b.y == pytest.approx(SCENE_CFG.y_range[0] + 0.2)
    assert (b.l, b.w, b.h) == (3.9, 1.6, 1.56)
    assert g.anchor_classes[0] == 1 and g.anchor_classes[2] == 2


def test_cell_features_empty_cloud():
    det = small_detector()
    feats = det.grid.cell_features(np.zeros((0, 3)))
    assert feats.shape == (100 * 100, 36)
    assert np.all(feats == 0.0)


def test_cell_features_count_channel():
    det = small_detector()
    g = det.grid
    # drop 5 points into one known cell
    cx = SCENE_CFG.x_range[0] + 10 * g.cell + 0.2
    cy = SCENE_CFG.y_range[0] + 20 * g.cell + 0.2
    cloud = np.tile([[cx, cy, 0.0]], (5, 1))
    feats = g.cell_features(cloud).reshape(g.nx, g.ny, 36)
    # center tap of the 3x3 window is offset (0,0); channel 0 is log1p(count)
    center_slot = 4 * 4  # window taps ordered dx,dy in (-1,0,1); (0,0) is 5th
    assert feats[10, 20, center_slot] == pytest.approx(math.log1p(5.0))
    assert feats[11, 20, 1 * 4] == pytest.approx(math.log1p(5.0))  # neighbor view


def test_rpn_forward_shapes():
    det = small_detector()
    s = make_scenes(SCENE_CFG, 1, seed_base=3, class_templates=TEMPLATES)[0]
    scores, deltas = det.rpn_forward(det.grid.cell_features(s.cloud))
    assert scores.shape == (det.grid.n_anchors,)
    assert deltas.shape == (det.grid.n_anchors, 7)
    assert np.all((scores.data > 0) & (scores.data < 1))


def test_proposals_capped_and_suppressed():
    det = small_detector()
    s = make_scenes(SCENE_CFG, 1, seed_base=3, class_templates=TEMPLATES)[0]
    scores, deltas = det.rpn_forward(det.grid.cell_features(s.cloud))
    props, idx = det.proposals_from_rpn(scores.data, deltas.data, 512, 0.8, 128)
    assert len(props) <= 128
    assert len(props) == len(idx)
    classes = det.grid.anchor_classes[idx]
    for i in range(len(props)):
        for j in range(i + 1, len(props)):
            if classes[i] == classes[j]:
                assert bev_iou(props[i], props[j]) <= 0.8 + 1e-9


def test_refine_forward_shapes_and_unit_projection():
    det = small_detector()
    s = make_scenes(SCENE_CFG, 1, seed_base=3, class_templates=TEMPLATES)[0]
    proposals = list(s.gt_boxes[:3])
    out = det.refine_forward(s.cloud, proposals, with_heads=True)
    p = len(proposals)
    assert out["conf"].shape == (p,)
    assert out["deltas"].shape == (p, 7)
    assert out["alpha"].shape == (p, det.refine_cfg.feature_dim)
    assert out["proj"].shape == (p, det.refine_cfg.projection_dim)
    norms = np.linalg.norm(out["proj"].data, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-9)


def test_refine_forward_empty_proposal_flagged():
    det = small_detector()
    cloud = np.array([[5.0, 5.0, 0.0]])
    far = Box3D(30.0, -15.0, 0.0, 2.0, 1.0, 1.0, 0.0)
    near = Box3D(5.0, 5.0, 0.0, 2.0, 1.0, 1.0, 0.0)
    out = det.refine_forward(cloud, [far, near], with_heads=False)
    assert out["empty"].tolist() == [True, False]
    assert np.allclose(out["features"].data[0], 0.0)


def test_rcnn_gradients_through_heads():
    # finite differences through pooled encoder + all four heads on a tiny
    # controlled cloud (well-separated points avoid max-pool ties)
    from ifgkit import losses
    from ifgkit.netcore import FeatureExtractorConfig

    ex = FeatureExtractorConfig(m=16, group_sizes=(4, 8), fc_sizes=(32,))
    det = build_detector(SCENE_CFG, refine_cfg=RefineConfig(max_pool_points=12),
                         extractor_cfg=ex, seed=0)
    rng = np.random.default_rng(0)
    tensors = [t for name, t in det.store.items() if name.startswith("refine.")]
    for t in tensors:  # keep pre-activations off exact ReLU kinks
        t.data = t.data + rng.normal(0.0, 0.02, t.data.shape)

    boxes = [Box3D(10.0, 0.0, 0.0, 2.0, 1.2, 1.1, 0.3),
             Box3D(14.0, 2.0, 0.0, 1.8, 1.0, 1.0, -0.5),
             Box3D(8.0, -3.0, 0.0, 1.5, 1.0, 1.0, 1.0)]
    cloud = np.vstack([
        np.array([b.x, b.y, b.z]) + rng.normal(0.0, 0.3, size=(10, 3))
        for b in boxes
    ])
    conf_targets = np.array([0.8, 0.2, 0.5])
    reg_targets = rng.normal(0.0, 0.3, size=(3, 7))
    temp_targets = rng.normal(size=(3, det.refine_cfg.feature_dim))
    labels = np.array([1, 1, 0])

    def fn():
        head = det.refine_forward(cloud, boxes, with_heads=True)
        l_conf = losses.bce_sum(head["conf"], conf_targets) * 0.5
        l_reg = losses.smooth_l1_sum(head["deltas"], reg_targets) * 0.5
        l_temp, _ = losses.template_loss(losses.TemplateLossBatch(
            proposal_features=head["alpha"], target_features=temp_targets,
            ious=np.array([0.8, 0.7, 0.6])))
        l_contra, _ = losses.supcon_loss(losses.ContrastiveBatch(
            features=head["proj"], labels=labels))
        total, _ = losses.rcnn_loss(l_conf, l_reg, l_temp, l_contra)
        return total

    small = [t for t in tensors if t.data.size <= 32][:4]
    report = grad_check(fn, small, tolerance=1e-4)
    assert report["passed"], report["max_rel_error"]


def test_train_one_epoch_and_checkpoint(tmp_path):
    det = small_detector()
    scenes = make_scenes(SCENE_CFG, 2, seed_base=11, class_templates=TEMPLATES)
    log = train(det, scenes, TrainConfig(epochs=1), class_templates=TEMPLATES)
    assert len(log) == 1
    assert set(log[0]) == {"epoch", "l_rpn", "l_conf", "l_reg", "l_temp",
                           "l_contra", "total"}
    path = tmp_path / "ckpt.ifgk"
    det.save(path)
    det2 = small_detector(seed=99)
    det2.load(path)
    for name in det.store.names():
        assert np.array_equal(det.store[name].data, det2.store[name].data)


def test_train_loss_log_deterministic():
    scenes = make_scenes(SCENE_CFG, 2, seed_base=11, class_templates=TEMPLATES)
    logs = []
    for _ in range(2):
        det = small_detector()
        logs.append(train(det, scenes, TrainConfig(epochs=2, seed=3),
                          class_templates=TEMPLATES))
    assert logs[0] == logs[1]


def test_gating_reproduces_baseline_loss_exactly():
    scenes = make_scenes(SCENE_CFG, 1, seed_base=11, class_templates=TEMPLATES)
    det_a = small_detector()
    det_b = small_detector()
    prep_a = prepare_scene(det_a, scenes[0], TEMPLATES, AssignmentConfig(),
                           with_intrinsic_targets=False)
    prep_b = prepare_scene(det_b, scenes[0], TEMPLATES, AssignmentConfig(),
                           with_intrinsic_targets=True)
    off = TrainConfig(use_tafe=False, use_pscl=False)
    on = TrainConfig(use_tafe=True, use_pscl=True)
    t_off, p_off = train_step(det_a, prep_a, off, AssignmentConfig(),
                              np.random.default_rng(0))
    t_on, p_on = train_step(det_b, prep_b, on, AssignmentConfig(),
                            np.random.default_rng(0))
    assert p_off["l_temp"] == 0.0 and p_off["l_contra"] == 0.0
    # identical sampling: baseline total is exactly the gated total minus
    # the auxiliary terms
    assert p_off["l_rpn"] == pytest.approx(p_on["l_rpn"], rel=1e-12)
    assert p_off["l_conf"] == pytest.approx(p_on["l_conf"], rel=1e-12)
    assert p_off["l_reg"] == pytest.approx(p_on["l_reg"], rel=1e-12)
    assert float(t_off.data) == pytest.approx(
        float(t_on.data) - p_on["l_temp"] - p_on["l_contra"], rel=1e-9)


def test_canonical_residuals_identity_zero():
    b = Box3D(4.0, -2.0, 0.3, 3.9, 1.6, 1.5, 0.7)
    t = canonical_encode(b, b).as_array()
    assert np.allclose(t, 0.0, atol=1e-12)


def test_canonical_residuals_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(50):
        gt = Box3D(*rng.uniform(-10, 10, 2), rng.uniform(-1, 1),
                   *rng.uniform(0.5, 4.0, 3), rng.uniform(-math.pi, math.pi))
        prop = Box3D(gt.x + rng.normal(0, 0.5), gt.y + rng.normal(0, 0.5),
                     gt.z + rng.normal(0, 0.2), gt.l * 1.1, gt.w * 0.9, gt.h,
                     gt.theta + rng.normal(0, 0.4))
        back = canonical_decode(canonical_encode(gt, prop), prop)
        assert np.allclose(back.as_array()[:6], gt.as_array()[:6], atol=1e-9)
        assert abs(math.remainder(back.theta - gt.theta, 2 * math.pi)) < 1e-9


def test_canonical_residuals_are_frame_local():
    # the same relative pose gives the same residual regardless of the
    # proposal's world yaw -- the property the refinement heads rely on
    rel = np.array([0.4, -0.2, 0.1])
    for yaw in (0.0, 0.9, -2.0):
        c, s = math.cos(yaw), math.sin(yaw)
        off = np.array([c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]])
        prop = Box3D(3.0, 1.0, 0.0, 3.0, 1.5, 1.4, yaw)
        gt = Box3D(prop.x + off[0], prop.y + off[1], prop.z + off[2],
                   3.0, 1.5, 1.4, yaw + 0.2)
        t = canonical_encode(gt, prop).as_array()
        if yaw == 0.0:
            ref = t
        else:
            assert np.allclose(t, ref, atol=1e-12)


def test_infer_empty_cloud():
    det = small_detector()
    assert infer(det, np.zeros((0, 3))) == []


def test_infer_final_nms_within_class():
    det = small_detector()
    s = make_scenes(SCENE_CFG, 1, seed_base=3, class_templates=TEMPLATES)[0]
    dets = infer(det, s.cloud, InferConfig(score_threshold=0.0))
    for c in (1, 2, 3):
        boxes = [d.box for d in dets if d.class_id == c]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert bev_iou(boxes[i], boxes[j]) <= 0.1 + 1e-9
    # scores sorted descending
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)


def test_load_config_roundtrip(tmp_path):
    payload = {
        "scene": {"max_objects": 4, "x_range": [0.0, 20.0], "y_range": [-10.0, 10.0]},
        "train": {"epochs": 3, "use_tafe": False},
        "infer": {"score_threshold": 0.2},
        "ablation": {"use_pscl": True},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(payload))
    sections = load_config(path)
    assert sections["scene"].max_objects == 4
    assert sections["scene"].x_range == (0.0, 20.0)
    assert sections["train"].epochs == 3
    assert sections["train"].use_tafe is False
    assert sections["infer"].score_threshold == 0.2
    assert sections["ablation"] == {"use_pscl": True}


def test_load_config_rejects_unknown(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"bogus": {}}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(path)
    path.write_text(json.dumps({"train": {"nope": 1}}))
    with pytest.raises(ValueError, match="nope"):
        load_config(path)


def test_loss_log_csv_header():
    log = [{"epoch": 0, "l_rpn": 1.0, "l_conf": 0.5, "l_reg": 0.25,
            "l_temp": 0.1, "l_contra": 0.2, "total": 2.05}]
    text = loss_log_csv(log)
    lines = text.strip().splitlines()
    assert lines[0] == "epoch,l_rpn,l_conf,l_reg,l_temp,l_contra,total"
    assert lines[1].startswith("0,1.000000,0.500000,")
