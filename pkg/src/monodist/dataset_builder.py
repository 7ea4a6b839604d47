"""Ground-truth construction from LiDAR, dataset splitting, and augmentation.

The construction pipeline, per object: transform the velodyne cloud into
the rectified camera frame, keep the points inside the object's 3D box,
sort them by forward distance (z), take the point at index
floor(percentile_ratio * count) -- a low percentile rather than the
closest point, so stray foreground returns do not set the distance --
and project that point into the image to obtain the keypoint.

Depth is always the camera-frame z-coordinate, not Euclidean range.
Segmented points are NOT pre-filtered to the image frustum before
sorting; the construction report records this so the choice is auditable.
Objects whose keypoint projects outside the image are dropped, not
clamped: a pixel-space loss cannot use off-image targets.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateProjection, EmptySegment
from .geometry import (
    Pixel,
    Point3,
    apply_transform,
    compose,
    flip_projection,
    project_point,
)
from .kitti_io import (
    DONT_CARE,
    CalibSet,
    ExtendedAnnotation,
    KittiLabel,
    PointCloud,
    parse_calib_file,
    parse_label_file,
    read_velodyne_bin,
)

# KITTI directory layout shared by real and synthetic datasets
IMAGE_DIR = "image_2"
LABEL_DIR = "label_2"
CALIB_DIR = "calib"
VELODYNE_DIR = "velodyne"


def rotation_about_y(yaw: float) -> np.ndarray:
    """KITTI object yaw: rotation about the camera y (down) axis."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box in the rectified camera frame.

    ``center_bottom`` is the middle of the bottom face (KITTI location
    convention, y down): the box spans y in [center_y - height, center_y].
    """
    center_bottom: tuple[float, float, float]
    dims: tuple[float, float, float]     # height, width, length (m)
    yaw: float

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"box dims must be positive, got {self.dims}")

    @classmethod
    def from_label(cls, label: KittiLabel) -> "Box3D":
        return cls(center_bottom=label.location, dims=label.dims,
                   yaw=label.rotation_y)

    def corners(self) -> np.ndarray:
        """The 8 corners, (8, 3), camera frame."""
        h, w, l = self.dims
        xs = np.array([l, l, l, l, -l, -l, -l, -l]) / 2.0
        ys = np.array([0.0, 0.0, -h, -h, 0.0, 0.0, -h, -h])
        zs = np.array([w, -w, w, -w, w, -w, w, -w]) / 2.0
        local = np.column_stack([xs, ys, zs])
        return local @ rotation_about_y(self.yaw).T + np.asarray(self.center_bottom)


@dataclass(frozen=True)
class BuilderConfig:
    percentile_ratio: float = 0.1
    min_points: int = 1

    def __post_init__(self):
        if not 0.0 < self.percentile_ratio < 1.0:
            raise ValueError("percentile_ratio must lie in (0, 1)")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


def segment_points_in_box(points, box: Box3D) -> np.ndarray:
    """Points inside the oriented box, boundary included; (M, 3) array."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    # rotate offsets by -yaw: row-vector form of R_y(yaw)^T @ d
    local = (pts - np.asarray(box.center_bottom)) @ rotation_about_y(box.yaw)
    h, w, l = box.dims
    inside = (
        (np.abs(local[:, 0]) <= l / 2.0)
        & (local[:, 1] <= 0.0) & (local[:, 1] >= -h)
        & (np.abs(local[:, 2]) <= w / 2.0)
    )
    return pts[inside]


def extract_gt_distance(segmented, cfg: BuilderConfig = BuilderConfig()) -> tuple[float, Point3]:
    """Distance (and its source point) from a segmented point set.

    Sorts by z ascending and picks index floor(percentile_ratio * count),
    clamped to the valid range.  The ordering is stable, so ties cannot
    reorder across runs.
    """
    pts = np.asarray(segmented, dtype=np.float64).reshape(-1, 3)
    if len(pts) < max(1, cfg.min_points):
        raise EmptySegment(f"{len(pts)} point(s), need >= {max(1, cfg.min_points)}")
    order = np.argsort(pts[:, 2], kind="stable")
    idx = min(int(np.floor(cfg.percentile_ratio * len(pts))), len(pts) - 1)
    src = pts[order[idx]]
    return float(src[2]), Point3(*src)


@dataclass
class ConstructionReport:
    """Per-reason bookkeeping of kept and dropped objects."""
    kept: int = 0
    drops: Counter = field(default_factory=Counter)
    frustum_prefilter: bool = False  # points are NOT pre-filtered to the image

    DROP_REASONS = ("invalid_box", "empty_segment", "nonpositive_depth",
                    "keypoint_outside")

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def merge(self, other: "ConstructionReport") -> None:
        self.kept += other.kept
        self.drops.update(other.drops)

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "dropped": self.dropped,
            "drops": {k: self.drops.get(k, 0) for k in self.DROP_REASONS},
            "frustum_prefilter": self.frustum_prefilter,
        }

    def summary(self) -> str:
        parts = [f"kept={self.kept}", f"dropped={self.dropped}"]
        parts += [f"{k}={self.drops.get(k, 0)}" for k in self.DROP_REASONS]
        parts.append(f"frustum_prefilter={str(self.frustum_prefilter).lower()}")
        return " ".join(parts)


def build_ground_truth(labels, calib: CalibSet, cloud: PointCloud,
                       cfg: BuilderConfig = BuilderConfig(),
                       image_id: str = "") -> tuple[list[ExtendedAnnotation], ConstructionReport]:
    """Construct distance + keypoint ground truth for one frame.

    Nothing fatal happens per object: labels whose box holds no points,
    whose selected point has non-positive depth, or whose keypoint lands
    outside the image are dropped and tallied in the report.
    """
    report = ConstructionReport()
    velo_to_rect = compose(calib.R0_rect, calib.Tr_velo_to_cam)
    cam_pts = apply_transform(velo_to_rect, cloud.xyz) if len(cloud) else np.zeros((0, 3))

    P = calib.P2
    out = []
    for label in labels:
        try:
            box = Box3D.from_label(label)
        except ValueError:
            report.drops["invalid_box"] += 1
            continue
        segment = segment_points_in_box(cam_pts, box)
        try:
            distance, src = extract_gt_distance(segment, cfg)
        except EmptySegment:
            report.drops["empty_segment"] += 1
            continue
        if distance <= 0.0:
            report.drops["nonpositive_depth"] += 1
            continue
        try:
            keypoint = project_point(P, src)
        except DegenerateProjection:
            report.drops["nonpositive_depth"] += 1
            continue
        if not (0.0 <= keypoint.u < P.image_width and 0.0 <= keypoint.v < P.image_height):
            report.drops["keypoint_outside"] += 1
            continue
        out.append(ExtendedAnnotation.from_label(label, image_id, distance, keypoint))
        report.kept += 1
    return out, report


def split_dataset(image_ids, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then prefix split: train gets floor(ratio * n) ids."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    ids = list(image_ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_train = int(np.floor(ratio * len(ids)))
    return shuffled[:n_train], shuffled[n_train:]


@dataclass
class SceneSample:
    """One training/evaluation example: image, calibration, objects.

    ``cloud`` is carried when the sample came from generation or disk so
    that ground-truth construction can be re-run against it.
    """
    image: np.ndarray                     # H x W x 3, float in [0, 1]
    calib: CalibSet
    annotations: list[ExtendedAnnotation]
    cloud: PointCloud | None = None
    image_id: str = ""
    labels: list[KittiLabel] | None = None  # raw KITTI labels when known


def horizontal_flip_sample(sample: SceneSample) -> SceneSample:
    """Mirror a sample in u: image, boxes, keypoints, and camera matrix.

    Distances are unchanged.  3D passthrough fields are mirrored too
    (x -> -x, yaw -> pi - yaw) so the flipped annotations stay consistent
    with the flipped projection matrix.
    """
    img = np.ascontiguousarray(sample.image[:, ::-1, :])
    w = sample.image.shape[1]

    def wrap(a: float) -> float:
        return float((a + np.pi) % (2.0 * np.pi) - np.pi)

    flipped_anns = []
    for ann in sample.annotations:
        l, t, r, b = ann.bbox
        x, y, z = ann.location
        flipped_anns.append(replace(
            ann,
            bbox=(w - 1.0 - r, t, w - 1.0 - l, b),
            keypoint=Pixel(w - 1.0 - ann.keypoint.u, ann.keypoint.v),
            location=(-x, y, z),
            rotation_y=wrap(np.pi - ann.rotation_y),
            alpha=wrap(np.pi - ann.alpha),
        ))
    calib = CalibSet(P2=flip_projection(sample.calib.P2),
                     R0_rect=sample.calib.R0_rect,
                     Tr_velo_to_cam=sample.calib.Tr_velo_to_cam)
    return SceneSample(image=img, calib=calib, annotations=flipped_anns,
                       cloud=sample.cloud, image_id=sample.image_id)


@dataclass
class StatsReport:
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    category_counts: dict
    total: int
    out_of_range: int

    def lines(self) -> list[str]:
        out = [f"objects: {self.total} ({self.out_of_range} outside histogram range)"]
        for lo, hi, n in zip(self.bin_edges[:-1], self.bin_edges[1:], self.bin_counts):
            out.append(f"  [{lo:5.1f}, {hi:5.1f}) m : {int(n)}")
        out.append("categories:")
        for cat, n in sorted(self.category_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            out.append(f"  {cat}: {n}")
        return out


def dataset_stats(anns, bin_width: float = 5.0, max_distance: float = 110.0) -> StatsReport:
    """Distance histogram and per-category counts over annotations."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    distances = np.array([a.distance for a in anns], dtype=np.float64)
    edges = np.arange(0.0, max_distance + bin_width / 2, bin_width)
    counts, _ = np.histogram(distances, bins=edges) if len(distances) else (
        np.zeros(len(edges) - 1, dtype=int), edges)
    in_range = int(counts.sum())
    cats = Counter(a.category for a in anns)
    return StatsReport(bin_edges=edges, bin_counts=counts,
                       category_counts=dict(cats), total=len(distances),
                       out_of_range=len(distances) - in_range)


# --- KITTI directory access -----------------------------------------------------

def load_image(path) -> np.ndarray:
    """Decode an image to H x W x 3 float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def list_frame_ids(root) -> list[str]:
    root = Path(root)
    return sorted(p.stem for p in (root / LABEL_DIR).glob("*.txt"))


def load_frame(root, frame_id: str) -> tuple[list[KittiLabel], CalibSet, PointCloud]:
    """Read one frame's labels, calibration, and velodyne scan."""
    root = Path(root)
    labels = parse_label_file((root / LABEL_DIR / f"{frame_id}.txt").read_text())
    image_path = root / IMAGE_DIR / f"{frame_id}.png"
    image_size = None
    if image_path.exists():
        with Image.open(image_path) as im:
            image_size = im.size
    calib = parse_calib_file((root / CALIB_DIR / f"{frame_id}.txt").read_text(),
                             image_size=image_size)
    cloud = read_velodyne_bin((root / VELODYNE_DIR / f"{frame_id}.bin").read_bytes())
    return labels, calib, cloud


def load_scene_samples(root, anns) -> list[SceneSample]:
    """Group extended annotations by image and attach images + calibration."""
    root = Path(root)
    by_image: dict[str, list[ExtendedAnnotation]] = {}
    for ann in anns:
        by_image.setdefault(ann.image_id, []).append(ann)
    samples = []
    for image_id in sorted(by_image):
        image = load_image(root / IMAGE_DIR / f"{image_id}.png")
        calib = parse_calib_file((root / CALIB_DIR / f"{image_id}.txt").read_text(),
                                 image_size=(image.shape[1], image.shape[0]))
        samples.append(SceneSample(image=image, calib=calib,
                                   annotations=by_image[image_id],
                                   image_id=image_id))
    return samples
