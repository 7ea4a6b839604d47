"""Pinhole projection, rigid transforms, and ground-plane ray intersection.

Conventions (KITTI rectified camera frame):
    x right, y down, z forward.  "Distance" to an object is always its
    z-coordinate in this frame, in meters.  The ground plane sits at
    y = camera_height (the camera looks out from the origin, ground below).

All functions are pure and operate on immutable inputs; they are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AboveHorizon, DegenerateProjection

_W_EPS = 1e-9  # homogeneous scale below which a projection is degenerate


class Point3(NamedTuple):
    """3D point in the rectified camera frame (meters)."""
    x: float
    y: float
    z: float


class Pixel(NamedTuple):
    """Image-plane position in pixels.  May lie outside the image."""
    u: float
    v: float


def _as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected points of shape (N, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 camera matrix mapping homogeneous camera-frame points to pixels.

    ``entries`` rows produce (u*w, v*w, w); a perspective divide by w is
    always applied before any pixel-space use.  The image extent is carried
    along because horizontal flipping needs it.
    """
    entries: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("projection matrix entries must be finite")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation; ``apply`` maps p to R @ p + t."""
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        tr = np.array(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
            raise ValueError("rotation matrix is not orthonormal within 1e-6")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``inner`` first, then ``outer``."""
    return RigidTransform(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def apply_transform(transform: RigidTransform, pts) -> np.ndarray:
    """Apply R @ p + t to each point; returns an (N, 3) array."""
    arr = _as_points(pts)
    return arr @ transform.rotation.T + transform.translation


def project_point(P: ProjectionMatrix, point) -> Pixel:
    """Project one camera-frame point to pixel coordinates.

    Raises DegenerateProjection when the homogeneous scale is ~0 (point in
    the camera's principal plane).
    """
    x, y, z = (float(v) for v in point)
    h = P.entries @ (x, y, z, 1.0)
    if abs(h[2]) <= _W_EPS:
        raise DegenerateProjection(f"homogeneous scale {h[2]:g} for point ({x}, {y}, {z})")
    return Pixel(h[0] / h[2], h[1] / h[2])


def project_points(P: ProjectionMatrix, pts) -> np.ndarray:
    """Vectorized projection; returns (N, 2) pixels.

    Raises DegenerateProjection if any point has |w| <= 1e-9.
    """
    arr = _as_points(pts)
    hom = np.hstack([arr, np.ones((len(arr), 1))])
    proj = hom @ P.entries.T
    w = proj[:, 2]
    if np.any(np.abs(w) <= _W_EPS):
        raise DegenerateProjection("at least one point has near-zero homogeneous scale")
    return proj[:, :2] / w[:, None]


def pitch_rotation(pitch: float) -> np.ndarray:
    """Camera-from-ground rotation about the x-axis.

    Positive pitch tilts the optical axis downward (toward the ground);
    ``p_camera = pitch_rotation(pitch) @ p_ground``.
    """
    c, s = np.cos(pitch), np.sin(pitch)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_projection(K, image_width: int, image_height: int,
                    rotation=None, translation=None) -> ProjectionMatrix:
    """Assemble P = K @ [R | t] from a 3x3 intrinsic matrix."""
    K = np.asarray(K, dtype=np.float64)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    rt = np.hstack([R, t.reshape(3, 1)])
    return ProjectionMatrix(K @ rt, image_width, image_height)


def intersect_ray_ground(K, cam_height: float, pitch: float, px) -> Point3:
    """Intersect the camera ray through ``px`` with the ground plane.

    The ground plane is y = cam_height in the ground-aligned frame (y down,
    camera at the origin); the camera may be pitched about its x-axis by
    ``pitch`` (positive = looking down).  Returns the intersection in the
    ground-aligned frame, whose z-component is the forward (bird's-eye)
    distance.

    Raises AboveHorizon when the ray points at or above the horizon.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (3, 3):
        raise ValueError(f"intrinsic matrix must be 3x3, got {K.shape}")
    u, v = (float(c) for c in px)
    ray_cam = np.linalg.solve(K, np.array([u, v, 1.0]))
    ray_ground = pitch_rotation(pitch).T @ ray_cam
    if ray_ground[1] <= _W_EPS:
        raise AboveHorizon(f"pixel ({u:g}, {v:g}) backprojects at or above the horizon")
    t = cam_height / ray_ground[1]
    hit = t * ray_ground
    return Point3(hit[0], hit[1], hit[2])


def mirror_x(point) -> Point3:
    """Reflect a camera-frame point across the x = 0 plane."""
    x, y, z = (float(v) for v in point)
    return Point3(-x, y, z)


def flip_projection(P: ProjectionMatrix) -> ProjectionMatrix:
    """Projection matrix of the horizontally flipped image.

    Composes the pixel mirror u -> (W - 1 - u) with a world mirror
    x -> -x, so that for any 3D point X

        project(flip_projection(P), mirror_x(X)) == u-mirror of project(P, X).

    Both mirrors together keep the flipped matrix a physically valid
    camera (positive focal term) and make flip an involution.
    """
    w = float(P.image_width)
    m_pix = np.array([[-1.0, 0.0, w - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    m_world = np.diag([-1.0, 1.0, 1.0, 1.0])
    return ProjectionMatrix(m_pix @ P.entries @ m_world, P.image_width, P.image_height)
