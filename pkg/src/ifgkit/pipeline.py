"""Two-stage detector on synthetic scenes: BEV-grid RPN plus point-pooled
refinement with the template-feature and contrastive training heads.

The first stage scores a small bank of yaw/class anchors per BEV cell from
hand-crafted occupancy features; the second stage pools raw points inside
each proposal, encodes them with a shared MLP + max-pool, and branches into
confidence, box-residual, template-feature, and projection heads. The two
auxiliary heads only shape training; inference never evaluates them.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .assign import (IGNORED, AssignmentConfig, anchor_targets, label_proposals,
                     match_proposals_to_gt, sample_balanced)
from .geom import (Box3D, RegressionTarget, decode_box, encode_box,
                   heading_aligned, nms, wrap_angle)
from .netcore import (Adam, FeatureExtractorConfig, IntrinsicFeatureExtractor,
                      MLP, ParamStore, Tensor, l2_normalize, load_checkpoint,
                      save_checkpoint)
from .pointops import from_box_frame, points_in_box, to_box_frame
from .scenes import SceneGenConfig, SceneSample, generate_scene
from .templates import CANONICAL_DIMS, Template, adjust_template, generate_template

DELTA_CLIP = 3.0


def canonical_encode(gt: Box3D, proposal: Box3D) -> RegressionTarget:
    """Box residual with the ground truth expressed in the proposal's frame.

    The refinement stage sees only points in the proposal's local frame, so
    its residuals must be local too: the proposal maps to an axis-aligned box
    at the origin, the ground truth is rotated/translated along with it, and
    the usual residual encoding is applied to that pair.
    """
    gt = heading_aligned(gt, proposal.theta)
    lc = to_box_frame(np.array([[gt.x, gt.y, gt.z]]), proposal)[0]
    local_gt = Box3D(lc[0], lc[1], lc[2], gt.l, gt.w, gt.h,
                     wrap_angle(gt.theta - proposal.theta))
    origin = Box3D(0.0, 0.0, 0.0, proposal.l, proposal.w, proposal.h, 0.0)
    return encode_box(local_gt, origin)


def canonical_decode(deltas: RegressionTarget, proposal: Box3D) -> Box3D:
    """Inverse of canonical_encode: local residuals back to a world box."""
    origin = Box3D(0.0, 0.0, 0.0, proposal.l, proposal.w, proposal.h, 0.0)
    local = decode_box(deltas, origin)
    center = from_box_frame(np.array([[local.x, local.y, local.z]]), proposal)[0]
    return Box3D(center[0], center[1], center[2], local.l, local.w, local.h,
                 wrap_angle(local.theta + proposal.theta))


@dataclass
class RpnConfig:
    cell_size: float = 0.4
    yaw_anchors: tuple[float, ...] = (0.0, math.pi / 2)
    hidden: int = 64
    pre_nms_top: int = 512
    train_nms_threshold: float = 0.8
    train_keep: int = 128


@dataclass
class RefineConfig:
    pool_margin: float = 1.2
    max_pool_points: int = 96
    encoder_sizes: tuple[int, ...] = (3, 32, 64)
    feature_dim: int = 16
    projection_dim: int = 128


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    seed: int = 0
    use_tafe: bool = True
    use_pscl: bool = True
    loss_weights: dict = field(default_factory=dict)
    gt_proposal_mix: bool = True  # append jittered GT boxes to stage-two proposals
    gt_proposal_copies: int = 2
    gt_jitter_xyz: float = 0.25
    gt_jitter_theta: float = 0.25
    gt_tight_copies: int = 2  # near-exact copies that feed the auxiliary heads
    gt_tight_jitter: float = 0.03
    reg_iou_min: float = 0.3  # lowest proposal IoU that trains the box head
    contrastive_tau: float = 0.1
    template_mu: float = 0.55


@dataclass
class InferConfig:
    nms_threshold: float = 0.7
    nms_keep: int = 100
    final_nms_threshold: float = 0.1
    score_threshold: float = 0.05
    refine_steps: int = 2  # refinement passes; each re-pools the refined box


@dataclass
class Detection:
    box: Box3D
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must be in [0, 1]")


# -- anchors and grid features ---------------------------------------------


class AnchorGrid:
    """Fixed anchor bank over the BEV grid: one anchor per (cell, class, yaw)."""

    def __init__(self, scene_cfg: SceneGenConfig, rpn_cfg: RpnConfig):
        self.cell = rpn_cfg.cell_size
        self.x0, x1 = scene_cfg.x_range
        self.y0, y1 = scene_cfg.y_range
        self.z0 = scene_cfg.z_range[0]
        self.nx = int(round((x1 - self.x0) / self.cell))
        self.ny = int(round((y1 - self.y0) / self.cell))
        self.yaws = rpn_cfg.yaw_anchors
        self.classes = (1, 2, 3)
        self.per_cell = len(self.classes) * len(self.yaws)

        boxes = []
        cls = []
        for ix in range(self.nx):
            cx = self.x0 + (ix + 0.5) * self.cell
            for iy in range(self.ny):
                cy = self.y0 + (iy + 0.5) * self.cell
                for c in self.classes:
                    l, w, h = CANONICAL_DIMS[c]
                    for yaw in self.yaws:
                        boxes.append(Box3D(cx, cy, self.z0 + 0.5 * h, l, w, h, yaw))
                        cls.append(c)
        self.boxes = boxes
        self.anchor_classes = np.array(cls, dtype=int)
        self.n_anchors = len(boxes)

    def cell_features(self, cloud: np.ndarray) -> np.ndarray:
        """(n_cells, 36) hand features: per-cell occupancy stats over a 3x3 window."""
        nx, ny = self.nx, self.ny
        count = np.zeros((nx, ny))
        zsum = np.zeros((nx, ny))
        zsq = np.zeros((nx, ny))
        zmax = np.zeros((nx, ny))
        if len(cloud):
            ix = np.floor((cloud[:, 0] - self.x0) / self.cell).astype(int)
            iy = np.floor((cloud[:, 1] - self.y0) / self.cell).astype(int)
            ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
            ix, iy = ix[ok], iy[ok]
            z = cloud[ok, 2] - self.z0
            np.add.at(count, (ix, iy), 1.0)
            np.add.at(zsum, (ix, iy), z)
            np.add.at(zsq, (ix, iy), z * z)
            np.maximum.at(zmax, (ix, iy), z)
        nonzero = np.maximum(count, 1.0)
        mean = zsum / nonzero
        var = np.maximum(zsq / nonzero - mean * mean, 0.0)
        feats = np.stack([np.log1p(count), mean, zmax, var], axis=-1)  # (nx, ny, 4)
        padded = np.zeros((nx + 2, ny + 2, 4))
        padded[1:-1, 1:-1] = feats
        window = [padded[1 + dx:nx + 1 + dx, 1 + dy:ny + 1 + dy]
                  for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
        return np.concatenate(window, axis=-1).reshape(nx * ny, 36)


# -- detector --------------------------------------------------------------


class Detector:
    """Parameter container plus the forward passes of both stages."""

    def __init__(self, scene_cfg: SceneGenConfig, rpn_cfg: RpnConfig,
                 refine_cfg: RefineConfig, extractor_cfg: FeatureExtractorConfig,
                 seed: int = 0):
        self.scene_cfg = scene_cfg
        self.rpn_cfg = rpn_cfg
        self.refine_cfg = refine_cfg
        self.extractor_cfg = extractor_cfg
        self.grid = AnchorGrid(scene_cfg, rpn_cfg)
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        out_per_cell = self.grid.per_cell * 8  # score + 7 residuals per anchor
        self.rpn_mlp = MLP(self.store, "rpn", [36, rpn_cfg.hidden, out_per_cell], rng)
        enc = list(refine_cfg.encoder_sizes)
        self.encoder = MLP(self.store, "refine.encoder", enc, rng, relu_last=True)
        feat = enc[-1]
        self.conf_head = MLP(self.store, "refine.conf", [feat, 32, 1], rng)
        self.reg_head = MLP(self.store, "refine.reg", [feat, 32, 7], rng)
        self.feat_head = MLP(self.store, "refine.feat",
                             [feat, 32, refine_cfg.feature_dim], rng)
        self.proj_head = MLP(self.store, "refine.proj",
                             [feat, refine_cfg.projection_dim], rng)
        self.extractor = IntrinsicFeatureExtractor(self.store, extractor_cfg, rng)

    # -- stage one ---------------------------------------------------------

    def rpn_forward(self, cell_features: np.ndarray):
        """Per-anchor scores and residuals. Returns (scores, deltas) tensors
        of shapes (n_anchors,) and (n_anchors, 7)."""
        out = self.rpn_mlp(Tensor(cell_features))  # (n_cells, per_cell * 8)
        n = self.grid.n_anchors
        out = out.reshape(n, 8)
        scores = out[:, 0].sigmoid()
        deltas = out[:, 1:]
        return scores, deltas

    def proposals_from_rpn(self, scores: np.ndarray, deltas: np.ndarray,
                           top_k: int, nms_threshold: float, keep: int):
        """Decode the best-scoring anchors and suppress overlaps.

        The candidate and keep budgets are split evenly across classes so
        that abundant large-object anchors cannot crowd the small classes
        out of the proposal set. Returns (boxes, anchor indices) with at
        most `keep` proposals.
        """
        n_classes = len(self.grid.classes)
        boxes_out: list[Box3D] = []
        idx_out: list[int] = []
        for c in self.grid.classes:
            mask = np.flatnonzero(self.grid.anchor_classes == c)
            k = min(top_k // n_classes, len(mask))
            if k == 0:
                continue
            cand = mask[np.argpartition(-scores[mask], k - 1)[:k]]
            cand = cand[np.argsort(-scores[cand], kind="stable")]
            boxes = [decode_box(RegressionTarget(*np.clip(deltas[i], -DELTA_CLIP,
                                                          DELTA_CLIP)),
                                self.grid.boxes[i]) for i in cand]
            kept = nms(boxes, scores[cand], nms_threshold,
                       max(keep // n_classes, 1))
            boxes_out.extend(boxes[i] for i in kept)
            idx_out.extend(int(cand[i]) for i in kept)
        return boxes_out, np.array(idx_out, dtype=int)

    # -- stage two ---------------------------------------------------------

    def refine_forward(self, cloud: np.ndarray, proposals: list[Box3D],
                       with_heads: bool = True):
        """Pool points per proposal and run the refinement heads.

        Returns a dict with tensors conf (P,), deltas (P, 7), and, when
        with_heads is set, alpha (P, feature_dim) and proj (P, proj_dim,
        unit rows); plus an empty-pool flag array.
        """
        cfg = self.refine_cfg
        cap = cfg.max_pool_points
        p = len(proposals)
        pooled = np.zeros((p, cap, 3))
        empty = np.zeros(p, dtype=bool)
        for i, box in enumerate(proposals):
            idx = points_in_box(cloud, box, margin=cfg.pool_margin)
            if len(idx) == 0:
                empty[i] = True
                continue
            if len(idx) > cap:
                stride = len(idx) / cap
                idx = idx[(np.arange(cap) * stride).astype(int)]
            local = to_box_frame(cloud[idx], box)
            pooled[i, :len(idx)] = local
            if len(idx) < cap:
                pooled[i, len(idx):] = local[0]  # repeat; max-pool ignores dupes
        feats = self.encoder(Tensor(pooled.reshape(p * cap, 3)))
        feat_dim = feats.data.shape[-1]
        feats = feats.reshape(p, cap, feat_dim).max(axis=1)
        feats = feats * Tensor((~empty).astype(float)[:, None])  # zero fallback

        conf = self.conf_head(feats).reshape(p).sigmoid()
        deltas = self.reg_head(feats)
        out = {"conf": conf, "deltas": deltas, "empty": empty, "features": feats}
        if with_heads:
            out["alpha"] = self.feat_head(feats)
            raw = self.proj_head(feats)
            norms = np.linalg.norm(raw.data, axis=1)
            fix = np.zeros_like(raw.data)
            fix[norms < 1e-9, 0] = 1.0  # degenerate rows get a unit stand-in
            out["proj"] = l2_normalize(raw + Tensor(fix))
        return out

    # -- persistence -------------------------------------------------------

    def save(self, path):
        save_checkpoint(path, self.store.state_dict())

    def load(self, path):
        self.store.load_state_dict(load_checkpoint(path))


def build_detector(scene_cfg: SceneGenConfig | None = None,
                   rpn_cfg: RpnConfig | None = None,
                   refine_cfg: RefineConfig | None = None,
                   extractor_cfg: FeatureExtractorConfig | None = None,
                   seed: int = 0) -> Detector:
    return Detector(scene_cfg or SceneGenConfig(), rpn_cfg or RpnConfig(),
                    refine_cfg or RefineConfig(),
                    extractor_cfg or FeatureExtractorConfig(), seed=seed)


# -- training --------------------------------------------------------------


@dataclass
class PreparedScene:
    sample: SceneSample
    cell_features: np.ndarray
    anchor_labels: np.ndarray
    anchor_reg_targets: np.ndarray
    intrinsic_targets: np.ndarray | None  # (n_gt, feature_dim)


def make_templates(k: int = 1024, seed: int = 0) -> dict[int, Template]:
    return {c: generate_template(c, k=k, seed=seed) for c in (1, 2, 3)}


def prepare_scene(detector: Detector, sample: SceneSample,
                  class_templates: dict[int, Template],
                  assign_cfg: AssignmentConfig,
                  with_intrinsic_targets: bool = True) -> PreparedScene:
    """Cache everything about a scene that does not depend on trainable state.

    Intrinsic targets are extractor outputs on the adjusted GT templates;
    they are treated as constants during training (no gradient flows into
    them), so caching them once is exact.
    """
    feats = detector.grid.cell_features(sample.cloud)
    labels, targets, _ = anchor_targets(detector.grid.boxes,
                                        detector.grid.anchor_classes,
                                        sample.gt_boxes, sample.gt_classes,
                                        assign_cfg)
    intr = None
    if with_intrinsic_targets and sample.gt_boxes:
        rows = []
        for box, cls in zip(sample.gt_boxes, sample.gt_classes):
            pts = adjust_template(class_templates[cls], box)
            rows.append(detector.extractor(pts).data.copy())
        intr = np.array(rows)
    return PreparedScene(sample, feats, labels, targets, intr)


def _jittered_gt_proposals(sample: SceneSample, rng: np.random.Generator,
                           cfg: TrainConfig) -> list[Box3D]:
    """Stage-two training proposals: jittered GTs plus anchor-like copies.

    The anchor-like copy (canonical class dims, yaw snapped to the nearest
    anchor yaw) matches the distribution the refinement stage sees from the
    RPN at inference, so the box head learns corrections of realistic size.
    """
    out = []
    for box, cls in zip(sample.gt_boxes, sample.gt_classes):
        for _ in range(cfg.gt_proposal_copies):
            dx, dy, dz = rng.normal(0.0, cfg.gt_jitter_xyz, size=3)
            dtheta = rng.normal(0.0, cfg.gt_jitter_theta)
            out.append(Box3D(box.x + dx, box.y + dy, box.z + dz,
                             box.l, box.w, box.h, box.theta + dtheta))
        # near-exact copies stay above the strict auxiliary IoU gates, so
        # every GT contributes contrastive positives and template targets
        for _ in range(cfg.gt_tight_copies):
            dx, dy, dz = rng.normal(0.0, cfg.gt_tight_jitter, size=3)
            dtheta = rng.normal(0.0, cfg.gt_tight_jitter)
            out.append(Box3D(box.x + dx, box.y + dy, box.z + dz,
                             box.l, box.w, box.h, box.theta + dtheta))
        dims = CANONICAL_DIMS[cls]
        yaw = round(box.theta / (math.pi / 2)) * (math.pi / 2)
        dx, dy = rng.uniform(-0.2, 0.2, size=2)
        out.append(Box3D(box.x + dx, box.y + dy, box.z, dims[0], dims[1],
                         dims[2], yaw))
    return out


def train_step(detector: Detector, prep: PreparedScene, train_cfg: TrainConfig,
               assign_cfg: AssignmentConfig, rng: np.random.Generator):
    """One scene's forward/backward. Returns (total tensor, breakdown dict)."""
    sample = prep.sample
    scores, deltas = detector.rpn_forward(prep.cell_features)

    # stage-one loss on non-ignored anchors
    keep = np.flatnonzero(prep.anchor_labels != IGNORED)
    fg = np.flatnonzero(prep.anchor_labels >= 1)
    batch = losses.AnchorBatch(
        cls_pred=scores[keep],
        cls_labels=(prep.anchor_labels[keep] >= 1).astype(float),
        reg_pred=deltas[fg] if len(fg) else None,
        reg_targets=prep.anchor_reg_targets[fg] if len(fg) else None,
        n_fg=len(fg),
    )
    l_rpn, rpn_parts = losses.rpn_loss(batch)

    # stage-two proposals (scores detached for selection; standard practice)
    proposals, _ = detector.proposals_from_rpn(
        scores.data, deltas.data, detector.rpn_cfg.pre_nms_top,
        detector.rpn_cfg.train_nms_threshold, detector.rpn_cfg.train_keep)
    if train_cfg.gt_proposal_mix:
        proposals = proposals + _jittered_gt_proposals(sample, rng, train_cfg)

    parts = {"l_rpn": float(l_rpn.data), "l_conf": 0.0, "l_reg": 0.0,
             "l_temp": 0.0, "l_contra": 0.0}
    if not proposals:
        return l_rpn, parts

    ious, gt_idx = match_proposals_to_gt(proposals, sample.gt_boxes)
    sample_seed = int(rng.integers(0, 2 ** 31))
    plabels = label_proposals(ious, gt_idx, sample.gt_classes, assign_cfg)
    chosen = sample_balanced(plabels, n=assign_cfg.train_keep,
                             pos_iou=assign_cfg.positive_sample_iou,
                             seed=sample_seed)
    sub = [proposals[i] for i in chosen]
    sub_ious = ious[chosen]
    sub_gt = gt_idx[chosen]
    sub_labels = [plabels[i] for i in chosen]

    head = detector.refine_forward(sample.cloud, sub, with_heads=True)
    valid = ~head["empty"]

    conf_targets = np.array([losses.confidence_label(v) for v in sub_ious])
    n_valid = max(int(valid.sum()), 1)
    l_conf = losses.bce_sum(head["conf"][np.flatnonzero(valid)],
                            conf_targets[valid]) * (1.0 / n_valid)

    pos = np.flatnonzero((sub_ious >= train_cfg.reg_iou_min) & valid)
    if len(pos) and sample.gt_boxes:
        reg_targets = np.array([
            canonical_encode(sample.gt_boxes[sub_gt[i]], sub[i]).as_array()
            for i in pos
        ])
        l_reg = losses.smooth_l1_sum(head["deltas"][pos], reg_targets) \
            * (1.0 / len(pos))
    else:
        l_reg = Tensor(0.0)

    l_temp = Tensor(0.0)
    if train_cfg.use_tafe and prep.intrinsic_targets is not None:
        part = np.flatnonzero((sub_ious > train_cfg.template_mu) & valid)
        if len(part):
            tbatch = losses.TemplateLossBatch(
                proposal_features=head["alpha"][part],
                target_features=prep.intrinsic_targets[sub_gt[part]],
                ious=sub_ious[part],
                mu=train_cfg.template_mu,
            )
            l_temp, _ = losses.template_loss(tbatch)

    l_contra = Tensor(0.0)
    if train_cfg.use_pscl:
        usable = np.flatnonzero(valid
                                & np.array([lb.class_label != IGNORED
                                            for lb in sub_labels]))
        if len(usable) >= 2:
            cbatch = losses.ContrastiveBatch(
                features=head["proj"][usable],
                labels=np.array([sub_labels[i].class_label for i in usable]),
                tau=train_cfg.contrastive_tau,
            )
            l_contra, _ = losses.supcon_loss(cbatch)
            l_contra = l_contra * (1.0 / len(usable))

    l_rcnn, _ = losses.rcnn_loss(l_conf, l_reg, l_temp, l_contra,
                                 train_cfg.loss_weights)
    total = l_rpn + l_rcnn
    parts.update({"l_conf": float(l_conf.data), "l_reg": float(l_reg.data),
                  "l_temp": float(l_temp.data), "l_contra": float(l_contra.data)})
    return total, parts


def train(detector: Detector, samples: list[SceneSample], train_cfg: TrainConfig,
          assign_cfg: AssignmentConfig | None = None,
          class_templates: dict[int, Template] | None = None):
    """Adam training over the given scenes. Returns a per-epoch loss log.

    The log rows are dicts: epoch, l_rpn, l_conf, l_reg, l_temp, l_contra,
    total. Raises on a non-finite loss after restoring the last finite state.
    """
    assign_cfg = assign_cfg or AssignmentConfig()
    class_templates = class_templates or make_templates()
    prepared = [prepare_scene(detector, s, class_templates, assign_cfg,
                              with_intrinsic_targets=train_cfg.use_tafe)
                for s in samples]
    opt = Adam(detector.store, lr=train_cfg.learning_rate)
    rng = np.random.default_rng(train_cfg.seed)
    log = []
    last_good = detector.store.state_dict()
    for epoch in range(train_cfg.epochs):
        sums = {"l_rpn": 0.0, "l_conf": 0.0, "l_reg": 0.0, "l_temp": 0.0,
                "l_contra": 0.0, "total": 0.0}
        for prep in prepared:
            detector.store.zero_grad()
            total, parts = train_step(detector, prep, train_cfg, assign_cfg, rng)
            if not np.isfinite(total.data):
                detector.store.load_state_dict(last_good)
                raise RuntimeError(f"loss diverged at epoch {epoch}")
            total.backward()
            opt.step()
            for k, v in parts.items():
                sums[k] += v
            sums["total"] += float(total.data)
        n = len(prepared)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        log.append(row)
        last_good = detector.store.state_dict()
    return log


def loss_log_csv(log: list[dict]) -> str:
    out = ["epoch,l_rpn,l_conf,l_reg,l_temp,l_contra,total"]
    for row in log:
        out.append(",".join([str(row["epoch"])]
                            + [f"{row[k]:.6f}" for k in
                               ("l_rpn", "l_conf", "l_reg", "l_temp",
                                "l_contra", "total")]))
    return "\n".join(out) + "\n"


# -- inference -------------------------------------------------------------


def infer(detector: Detector, cloud: np.ndarray,
          infer_cfg: InferConfig | None = None) -> list[Detection]:
    """Full two-stage inference; the training-only heads are not evaluated."""
    cfg = infer_cfg or InferConfig()
    if len(cloud) == 0:
        return []
    feats = detector.grid.cell_features(cloud)
    scores, deltas = detector.rpn_forward(feats)
    proposals, anchor_idx = detector.proposals_from_rpn(
        scores.data, deltas.data, detector.rpn_cfg.pre_nms_top,
        cfg.nms_threshold, cfg.nms_keep)
    if not proposals:
        return []
    refined = proposals
    for _ in range(max(cfg.refine_steps, 1)):
        head = detector.refine_forward(cloud, refined, with_heads=False)
        refined = [
            b if head["empty"][i] else canonical_decode(
                RegressionTarget(*np.clip(head["deltas"].data[i], -DELTA_CLIP,
                                          DELTA_CLIP)), b)
            for i, b in enumerate(refined)
        ]
    conf = head["conf"].data
    classes = detector.grid.anchor_classes[anchor_idx]
    detections = []
    for class_id in (1, 2, 3):
        idx = np.flatnonzero((classes == class_id)
                             & (conf >= cfg.score_threshold)
                             & ~head["empty"])
        if not len(idx):
            continue
        boxes = [refined[i] for i in idx]
        kept = nms(boxes, conf[idx], cfg.final_nms_threshold, len(idx))
        detections.extend(Detection(boxes[i], int(class_id), float(conf[idx[i]]))
                          for i in kept)
    detections.sort(key=lambda d: -d.score)
    return detections


def timed_infer(detector: Detector, clouds: list[np.ndarray],
                infer_cfg: InferConfig | None = None):
    """(detections per cloud, wall seconds) for inference-cost comparisons."""
    t0 = time.perf_counter()
    results = [infer(detector, c, infer_cfg) for c in clouds]
    return results, time.perf_counter() - t0


# -- configuration file ----------------------------------------------------

_CONFIG_SECTIONS = {
    "scene": SceneGenConfig,
    "rpn": RpnConfig,
    "refine": RefineConfig,
    "train": TrainConfig,
    "infer": InferConfig,
    "ablation": None,  # plain dict: {"use_tafe": bool, "use_pscl": bool}
}


def load_config(path) -> dict:
    """JSON config with sections scene/rpn/refine/train/infer/ablation.

    Unknown sections or keys are rejected.
    """
    with open(path) as f:
        raw = json.load(f)
    out = {}
    for section, payload in raw.items():
        if section not in _CONFIG_SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        cls = _CONFIG_SECTIONS[section]
        if cls is None:
            allowed = {"use_tafe", "use_pscl"}
            unknown = set(payload) - allowed
            if unknown:
                raise ValueError(f"unknown ablation keys {sorted(unknown)}")
            out[section] = dict(payload)
            continue
        fields = {f_.name for f_ in cls.__dataclass_fields__.values()}
        unknown = set(payload) - fields
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in payload.items()}
        out[section] = cls(**kwargs)
    return out


def make_scenes(cfg: SceneGenConfig, n: int, seed_base: int,
                class_templates: dict[int, Template]) -> list[SceneSample]:
    return [generate_scene(cfg, seed_base + i, class_templates) for i in range(n)]
