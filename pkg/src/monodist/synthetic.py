"""Deterministic synthetic road scenes for desk-scale training and tests.

Each scene renders a checkerboard ground plane, a road band, and filled
object cuboids seen through a pinhole camera, and emits a mutually
consistent (image, calibration, labels, per-object LiDAR surface cloud)
tuple in the KITTI directory layout.

Geometry notes:
  * object distance is distributed uniformly over the configured range
    and apparent size follows the pinhole law, so the imagery is
    perspective-consistent;
  * a curved road bends laterally as x(z) = curvature * z^2 and objects
    take the local road heading as yaw;
  * curves are banked (superelevation): the ground under an object with
    lateral offset from the road centerline is raised or lowered by
    bank_factor * curvature * offset meters.  Flat scenes
    (curvature = 0) keep every object base at exactly camera height,
    which is what makes ground-plane back-projection exact there and
    measurably wrong on banked curves;
  * LiDAR points are sampled on the camera-visible cuboid faces only,
    slightly inset so that framing round-trips can never push them out
    of the box;
  * pixel intensity carries a distance cue (aerial-perspective fade
    toward the sky tone) plus per-object albedo jitter, so that distance
    is learnable from ROI content but not trivially readable.

Everything is driven by ``numpy.random.default_rng([seed, frame_index])``:
frames are independent, so parallel and serial generation agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import config_io
from .dataset_builder import (
    CALIB_DIR,
    IMAGE_DIR,
    LABEL_DIR,
    VELODYNE_DIR,
    Box3D,
    SceneSample,
    rotation_about_y,
    save_image,
)
from .errors import ConfigError
from .geometry import (
    Pixel,
    ProjectionMatrix,
    RigidTransform,
    make_projection,
    pitch_rotation,
    project_points,
)
from .kitti_io import (
    CalibSet,
    ExtendedAnnotation,
    KittiLabel,
    PointCloud,
    format_calib_file,
    format_label_file,
    write_velodyne_bin,
)

# base dims (height, width, length) in meters and sampling weight
CATEGORY_SPECS = {
    "Car": ((1.5, 1.7, 4.0), 0.50),
    "Van": ((2.0, 1.9, 5.0), 0.10),
    "Truck": ((2.9, 2.5, 8.5), 0.07),
    "Pedestrian": ((1.75, 0.65, 0.7), 0.21),
    "Cyclist": ((1.7, 0.6, 1.8), 0.12),
}

# velodyne -> camera: x_cam = -y_velo, y_cam = -z_velo, z_cam = x_velo
_VELO_TO_CAM_R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
_VELO_TO_CAM_T = np.array([0.0, -0.08, -0.27])

_SKY = np.array([0.70, 0.74, 0.80])
_CATEGORY_TINT = {
    "Car": np.array([0.58, 0.60, 0.66]),
    "Van": np.array([0.55, 0.57, 0.55]),
    "Truck": np.array([0.52, 0.50, 0.48]),
    "Pedestrian": np.array([0.70, 0.60, 0.55]),
    "Cyclist": np.array([0.62, 0.66, 0.58]),
}


@dataclass(frozen=True)
class SceneConfig:
    n_images: int = 20
    image_width: int = 320
    image_height: int = 96
    focal_length: float = 110.0
    cam_height: float = 1.5
    pitch: float = 0.0
    min_objects: int = 1
    max_objects: int = 4
    min_distance: float = 4.0
    max_distance: float = 45.0
    min_curvature: float = 0.0
    max_curvature: float = 0.0
    bank_factor: float = 30.0
    lateral_offsets: tuple[float, ...] = (-3.5, 0.0, 3.5)
    lateral_jitter: float = 0.8
    points_per_object: int = 160
    dim_jitter: float = 0.1
    pixel_noise: float = 0.01

    def __post_init__(self):
        if self.n_images <= 0:
            raise ConfigError("n_images must be positive")
        if self.image_width < 32 or self.image_height < 32:
            raise ConfigError("image must be at least 32 x 32")
        if self.focal_length <= 0 or self.cam_height <= 0:
            raise ConfigError("focal_length and cam_height must be positive")
        if self.min_objects < 0 or self.max_objects < self.min_objects:
            raise ConfigError("empty object count range")
        if not 0 < self.min_distance <= self.max_distance:
            raise ConfigError("empty or non-positive distance range")
        if self.min_curvature > self.max_curvature or self.min_curvature < 0:
            raise ConfigError("empty curvature range")
        if self.points_per_object < 10:
            raise ConfigError("points_per_object must be >= 10")
        if not self.lateral_offsets:
            raise ConfigError("lateral_offsets must be non-empty")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([
            [self.focal_length, 0.0, self.image_width / 2.0],
            [0.0, self.focal_length, self.image_height / 2.0],
            [0.0, 0.0, 1.0],
        ])


_SCENE_FIELD_TYPES = {
    "n_images": int, "image_width": int, "image_height": int,
    "focal_length": float, "cam_height": float, "pitch": float,
    "min_objects": int, "max_objects": int,
    "min_distance": float, "max_distance": float,
    "min_curvature": float, "max_curvature": float,
    "bank_factor": float,
    "lateral_offsets": config_io.parse_float_tuple,
    "lateral_jitter": float, "points_per_object": int,
    "dim_jitter": float, "pixel_noise": float,
}


def parse_scene_config(text: str) -> SceneConfig:
    return SceneConfig(**config_io.parse_flat_config(text, _SCENE_FIELD_TYPES))


def scene_calib(cfg: SceneConfig) -> CalibSet:
    P2 = make_projection(cfg.intrinsics, cfg.image_width, cfg.image_height,
                         rotation=pitch_rotation(cfg.pitch))
    return CalibSet(
        P2=P2,
        R0_rect=RigidTransform.identity(),
        Tr_velo_to_cam=RigidTransform(_VELO_TO_CAM_R, _VELO_TO_CAM_T),
    )


def _wrap_angle(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


def _visible_face_points(box: Box3D, n_points: int, rng) -> np.ndarray:
    """Sample LiDAR-style points on camera-visible faces, inset 2 mm."""
    h, w, l = box.dims
    R = rotation_about_y(box.yaw)
    center = np.asarray(box.center_bottom)
    inset = 2e-3
    # (axis, sign, area); local y in [-h, 0]; skip the bottom face (+y)
    faces = [
        (0, +1, w * h), (0, -1, w * h),   # +-x: width x height
        (2, +1, l * h), (2, -1, l * h),   # +-z: length x height
        (1, -1, l * w),                   # top
    ]
    visible = []
    for axis, sign, area in faces:
        normal_local = np.zeros(3)
        normal_local[axis] = sign
        normal = R @ normal_local
        face_center_local = np.zeros(3)
        half = {0: l / 2.0, 1: h / 2.0, 2: w / 2.0}[axis]
        face_center_local[axis] = sign * half
        face_center_local[1] += -h / 2.0  # box y spans [-h, 0]
        face_center = R @ face_center_local + center
        if float(normal @ face_center) < 0.0:  # faces the camera at origin
            visible.append((axis, sign, area))
    if not visible:  # degenerate viewpoint; fall back to all side faces
        visible = faces[:4]

    areas = np.array([f[2] for f in visible])
    counts = rng.multinomial(n_points, areas / areas.sum())
    half_ext = np.array([l / 2.0, h / 2.0, w / 2.0])
    pts_local = []
    for (axis, sign, _), count in zip(visible, counts):
        if count == 0:
            continue
        p = np.empty((count, 3))
        for ax in range(3):
            if ax == axis:
                p[:, ax] = sign * (half_ext[ax] - inset - rng.uniform(0, 2e-3, count))
            else:
                lim = half_ext[ax] - inset
                p[:, ax] = rng.uniform(-lim, lim, count)
        pts_local.append(p)
    pts = np.vstack(pts_local)
    pts[:, 1] -= h / 2.0  # shift local y from [-h/2, h/2] to [-h, 0]
    return pts @ R.T + center


def _fill_convex(image: np.ndarray, uv: np.ndarray, color: np.ndarray) -> None:
    """Paint the convex hull of projected points onto the image in place."""
    try:
        hull = ConvexHull(uv)
    except QhullError:
        return
    verts = uv[hull.vertices]  # counterclockwise
    h, w = image.shape[:2]
    lo = np.maximum(np.floor(verts.min(axis=0)).astype(int), 0)
    hi = np.minimum(np.ceil(verts.max(axis=0)).astype(int) + 1, (w, h))
    if np.any(hi <= lo):
        return
    us = np.arange(lo[0], hi[0]) + 0.5
    vs = np.arange(lo[1], hi[1]) + 0.5
    uu, vv = np.meshgrid(us, vs)
    inside = np.ones(uu.shape, dtype=bool)
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        cross = (b[0] - a[0]) * (vv - a[1]) - (b[1] - a[1]) * (uu - a[0])
        inside &= cross >= 0.0
    region = image[lo[1]:hi[1], lo[0]:hi[0]]
    region[inside] = color


def _render_ground(cfg: SceneConfig, curvature: float) -> np.ndarray:
    """Checkerboard ground + road band, faded toward the sky with distance."""
    w, h = cfg.image_width, cfg.image_height
    image = np.tile(_SKY, (h, w, 1)).astype(np.float64)
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    K = cfg.intrinsics
    rays = np.stack([(us - K[0, 2]) / K[0, 0], (vs - K[1, 2]) / K[1, 1],
                     np.ones_like(us)], axis=-1)
    rays = rays @ pitch_rotation(cfg.pitch)  # row form of R^T @ ray
    below = rays[..., 1] > 1e-6
    t = np.where(below, cfg.cam_height / np.where(below, rays[..., 1], 1.0), 0.0)
    gx = t * rays[..., 0]
    gz = t * rays[..., 2]
    checker = ((np.floor(gx) + np.floor(gz)) % 2.0) >= 1.0
    shade = np.where(checker, 0.52, 0.38)
    road = np.abs(gx - curvature * gz ** 2) < 4.2
    shade = np.where(road, 0.30, shade)
    lane = road & (np.abs(gx - curvature * gz ** 2) < 0.12) & ((gz % 4.0) < 2.0)
    shade = np.where(lane, 0.85, shade)
    fade = np.exp(-np.clip(gz, 0.0, None) / 120.0)
    ground_rgb = shade[..., None] * np.array([1.0, 0.98, 0.95])
    blended = ground_rgb * fade[..., None] + _SKY * (1.0 - fade[..., None])
    image[below] = blended[below]
    return image


def generate_scene(cfg: SceneConfig, seed: int, index: int) -> SceneSample:
    """Generate one scene; deterministic given (seed, index)."""
    rng = np.random.default_rng([seed, index])
    calib = scene_calib(cfg)
    P2 = calib.P2
    w, h = cfg.image_width, cfg.image_height

    curvature = 0.0
    if cfg.max_curvature > 0:
        curvature = float(rng.uniform(cfg.min_curvature, cfg.max_curvature))
        curvature *= float(rng.choice([-1.0, 1.0]))

    image = _render_ground(cfg, curvature)

    cats = list(CATEGORY_SPECS)
    weights = np.array([CATEGORY_SPECS[c][1] for c in cats])
    weights /= weights.sum()

    n_target = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    placed: list[dict] = []
    attempts = 0
    while len(placed) < n_target and attempts < 60 * max(n_target, 1):
        attempts += 1
        category = str(rng.choice(cats, p=weights))
        base_dims = np.array(CATEGORY_SPECS[category][0])
        dims = tuple(base_dims * rng.uniform(1 - cfg.dim_jitter, 1 + cfg.dim_jitter, 3))
        z = float(rng.uniform(cfg.min_distance, cfg.max_distance))
        lateral = float(rng.choice(cfg.lateral_offsets)
                        + rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter))
        x = curvature * z ** 2 + lateral
        y_bottom = cfg.cam_height - cfg.bank_factor * curvature * lateral
        heading = float(np.arctan(2.0 * curvature * z))
        yaw = _wrap_angle(heading - np.pi / 2.0)
        if category in ("Pedestrian", "Cyclist"):
            yaw = _wrap_angle(yaw + rng.uniform(-0.6, 0.6))
        box = Box3D(center_bottom=(x, y_bottom, z), dims=dims, yaw=yaw)

        corners = box.corners()
        if np.any(corners[:, 2] <= 0.5):
            continue
        uv = project_points(P2, corners)
        if (uv[:, 0].min() < 1.0 or uv[:, 0].max() > w - 2.0
                or uv[:, 1].min() < 1.0 or uv[:, 1].max() > h - 2.0):
            continue
        bbox = (float(uv[:, 0].min()), float(uv[:, 1].min()),
                float(uv[:, 0].max()), float(uv[:, 1].max()))
        if bbox[3] - bbox[1] < 3.0 or bbox[2] - bbox[0] < 2.0:
            continue

        # keep 3D boxes apart so each cloud segment holds only its object
        ok = True
        for other in placed:
            oc = other["box"].center_bottom
            d_xz = np.hypot(x - oc[0], z - oc[2])
            r_self = np.hypot(dims[2], dims[1]) / 2.0
            od = other["box"].dims
            r_other = np.hypot(od[2], od[1]) / 2.0
            if d_xz < r_self + r_other + 0.5:
                ok = False
                break
            ob = other["bbox"]
            ix = max(0.0, min(bbox[2], ob[2]) - max(bbox[0], ob[0]))
            iy = max(0.0, min(bbox[3], ob[3]) - max(bbox[1], ob[1]))
            inter = ix * iy
            union = ((bbox[2] - bbox[0]) * (bbox[3] - bbox[1])
                     + (ob[2] - ob[0]) * (ob[3] - ob[1]) - inter)
            if union > 0 and inter / union > 0.35:
                ok = False
                break
        if not ok:
            continue

        placed.append({"box": box, "bbox": bbox, "category": category,
                       "uv": uv, "z": z})

    # paint far to near so close objects occlude distant ones
    placed.sort(key=lambda o: -o["z"])
    cam_points = []
    for obj in placed:
        z = obj["z"]
        fade = float(np.exp(-z / 70.0))
        albedo = _CATEGORY_TINT[obj["category"]] * rng.uniform(0.94, 1.06)
        color = albedo * fade + _SKY * (1.0 - fade)
        _fill_convex(image, obj["uv"], np.clip(color, 0.0, 1.0))
        pts = _visible_face_points(obj["box"], cfg.points_per_object, rng)
        obj["points"] = pts
        cam_points.append(pts)

    if cfg.pixel_noise > 0:
        image = image + rng.normal(0.0, cfg.pixel_noise, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    image_id = f"{index:06d}"
    labels = []
    annotations = []
    # order objects near to far in the label file, like typical annotations
    placed.sort(key=lambda o: o["z"])
    for obj in placed:
        box: Box3D = obj["box"]
        x, _, z = box.center_bottom
        alpha = _wrap_angle(box.yaw - np.arctan2(x, z))
        label = KittiLabel(category=obj["category"], truncated=0.0, occluded=0,
                           alpha=alpha, bbox=obj["bbox"], dims=box.dims,
                           location=box.center_bottom, rotation_y=box.yaw)
        labels.append(label)
        # ground truth straight from the sampled points: percentile depth,
        # then that point's projection
        pts = obj["points"]
        order = np.argsort(pts[:, 2], kind="stable")
        idx = min(int(np.floor(0.1 * len(pts))), len(pts) - 1)
        src = pts[order[idx]]
        kp_uv = project_points(P2, src.reshape(1, 3))[0]
        annotations.append(ExtendedAnnotation.from_label(
            label, image_id, float(src[2]), Pixel(*kp_uv)))

    if cam_points:
        all_cam = np.vstack(cam_points)
        velo = (all_cam - _VELO_TO_CAM_T) @ _VELO_TO_CAM_R
        refl = rng.uniform(0.0, 1.0, (len(velo), 1))
        cloud = PointCloud(np.hstack([velo, refl]).astype(np.float32))
    else:
        cloud = PointCloud(np.zeros((0, 4), dtype=np.float32))

    return SceneSample(image=image, calib=calib, annotations=annotations,
                       cloud=cloud, image_id=image_id, labels=labels)


def generate_synthetic_dataset(cfg: SceneConfig, seed: int) -> list[SceneSample]:
    return [generate_scene(cfg, seed, i) for i in range(cfg.n_images)]


def write_kitti_layout(samples, out_dir) -> None:
    """Write samples as a KITTI-layout dataset directory."""
    out = Path(out_dir)
    for sub in (IMAGE_DIR, LABEL_DIR, CALIB_DIR, VELODYNE_DIR):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for sample in samples:
        fid = sample.image_id
        save_image(out / IMAGE_DIR / f"{fid}.png", sample.image)
        labels = sample.labels
        if labels is None:
            labels = [a.to_label() for a in sample.annotations]
        (out / LABEL_DIR / f"{fid}.txt").write_text(format_label_file(labels))
        (out / CALIB_DIR / f"{fid}.txt").write_text(format_calib_file(sample.calib))
        (out / VELODYNE_DIR / f"{fid}.bin").write_bytes(write_velodyne_bin(sample.cloud))
