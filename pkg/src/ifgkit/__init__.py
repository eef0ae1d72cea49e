"""ifgkit: template-guided 3D object detection at desk scale.

Rotated-box geometry, point-cloud primitives, procedural class templates,
a minimal differentiable core, the detector loss stack (including the
supervised contrastive and template-feature losses), IoU-based target
assignment, a toy two-stage detector on synthetic LiDAR scenes, and
KITTI-style AP evaluation.
"""

from .geom import Box3D, RegressionTarget, bev_iou, box_corners, decode_box, \
    encode_box, iou3d, nms
from .pointops import ball_query, farthest_point_sampling, points_in_box
from .templates import Template, adjust_template, generate_template

__version__ = "0.1.0"

__all__ = [
    "Box3D", "RegressionTarget", "bev_iou", "box_corners", "decode_box",
    "encode_box", "iou3d", "nms", "ball_query", "farthest_point_sampling",
    "points_in_box", "Template", "adjust_template", "generate_template",
    "__version__",
]
