"""Desk-scale camera relocalization toolkit.

Scene-coordinate regression with an angle-based reprojection loss (plus
multi-view and photometric extensions), a RANSAC-PnP pose solver, and a
synthetic scene generator that provides ground truth for every claim.
"""

from anglereloc.geometry import (
    CameraIntrinsics,
    DepthStatus,
    PoseSE3,
    pose_error,
    project,
    ray_vector,
    world_to_camera,
)

__all__ = [
    "CameraIntrinsics",
    "DepthStatus",
    "PoseSE3",
    "pose_error",
    "project",
    "ray_vector",
    "world_to_camera",
]

__version__ = "0.1.0"
