"""Parsers and writers for KITTI-format files and extended annotations.

Formats handled:
  * object label files: 15 whitespace-separated fields per line
    (type, truncated, occluded, alpha, bbox x4, dims x3, location x3,
    rotation_y)
  * calibration files: ``KEY: v1 v2 ...`` lines; P2 is the left color
    camera (KITTI annotates 2D boxes on it, which is why it is the one
    consumed here; the choice is documented, not silent), R0_rect is a
    3x3 rotation, Tr_velo_to_cam a 3x4 rigid transform
  * velodyne scans: raw little-endian float32 (x, y, z, reflectance)
    records, no header
  * extended annotations: this toolkit's output format -- one object per
    line of ``key=value`` tokens appending ground-truth distance and
    keypoint to the KITTI label fields

Parsing never mutates inputs; identical bytes give identical values on
every platform.  Numbers are written with 6 decimal places, which exceeds
LiDAR accuracy and keeps files stable for golden tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import (
    MalformedCalib,
    MalformedLabel,
    MissingCalibKey,
    SchemaViolation,
    TruncatedScan,
)
from .geometry import Pixel, ProjectionMatrix, RigidTransform

# Image size of the standard KITTI object-detection camera 2 frames, used
# when a calib file carries no IMG_SIZE record and no size is supplied.
KITTI_IMAGE_SIZE = (1242, 375)

DONT_CARE = "DontCare"


@dataclass(frozen=True)
class KittiLabel:
    category: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]          # left, top, right, bottom (px)
    dims: tuple[float, float, float]                 # height, width, length (m)
    location: tuple[float, float, float]             # bottom-center, camera frame (m)
    rotation_y: float


@dataclass(frozen=True)
class CalibSet:
    P2: ProjectionMatrix
    R0_rect: RigidTransform
    Tr_velo_to_cam: RigidTransform


@dataclass(frozen=True)
class PointCloud:
    """N x 4 array of (x, y, z, reflectance) in the velodyne frame."""
    points: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3].astype(np.float64)


@dataclass(frozen=True)
class ExtendedAnnotation:
    """A KITTI label extended with its ground-truth distance and keypoint."""
    image_id: str
    category: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]
    dims: tuple[float, float, float]
    location: tuple[float, float, float]
    rotation_y: float
    distance: float
    keypoint: Pixel

    @classmethod
    def from_label(cls, label: KittiLabel, image_id: str, distance: float,
                   keypoint: Pixel) -> "ExtendedAnnotation":
        return cls(image_id=image_id, category=label.category,
                   truncated=label.truncated, occluded=label.occluded,
                   alpha=label.alpha, bbox=label.bbox, dims=label.dims,
                   location=label.location, rotation_y=label.rotation_y,
                   distance=distance, keypoint=Pixel(*keypoint))

    def to_label(self) -> KittiLabel:
        return KittiLabel(category=self.category, truncated=self.truncated,
                          occluded=self.occluded, alpha=self.alpha,
                          bbox=self.bbox, dims=self.dims,
                          location=self.location, rotation_y=self.rotation_y)


# --- label files -------------------------------------------------------------

def parse_label_file(text: str) -> list[KittiLabel]:
    """Parse a KITTI object label file (one object per non-empty line)."""
    labels = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 15:
            raise MalformedLabel(line_no, f"expected 15 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise MalformedLabel(line_no, str(exc)) from None
        labels.append(KittiLabel(
            category=parts[0],
            truncated=vals[0],
            occluded=int(vals[1]),
            alpha=vals[2],
            bbox=tuple(vals[3:7]),
            dims=tuple(vals[7:10]),
            location=tuple(vals[10:13]),
            rotation_y=vals[13],
        ))
    return labels


def format_label_file(labels: Iterable[KittiLabel]) -> str:
    """Serialize labels back to the 15-field KITTI text format."""
    lines = []
    for lb in labels:
        nums = [lb.truncated, float(lb.occluded), lb.alpha, *lb.bbox, *lb.dims,
                *lb.location, lb.rotation_y]
        lines.append(lb.category + " " + " ".join(f"{v:.6f}" for v in nums))
    return "\n".join(lines) + ("\n" if lines else "")


# --- calibration files --------------------------------------------------------

def _calib_records(text: str) -> dict[str, list[float]]:
    records = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        try:
            records[key] = [float(v) for v in rest.split()]
        except ValueError as exc:
            raise MalformedCalib(key, str(exc)) from None
    return records


def parse_calib_file(text: str, image_size: tuple[int, int] | None = None) -> CalibSet:
    """Parse a KITTI calibration file into the transforms this toolkit uses.

    KITTI calib files do not store the image extent, which ProjectionMatrix
    needs for flipping.  Resolution order: the ``image_size`` argument, an
    optional ``IMG_SIZE: w h`` record (written by the synthetic generator),
    then the standard KITTI size.
    """
    records = _calib_records(text)

    def take(name: str, count: int) -> list[float]:
        if name not in records:
            raise MissingCalibKey(name)
        vals = records[name]
        if len(vals) != count:
            raise MalformedCalib(name, f"expected {count} values, got {len(vals)}")
        return vals

    p2 = np.array(take("P2", 12)).reshape(3, 4)
    r0 = np.array(take("R0_rect", 9)).reshape(3, 3)
    tr = np.array(take("Tr_velo_to_cam", 12)).reshape(3, 4)

    if image_size is None:
        if "IMG_SIZE" in records:
            w, h = (int(v) for v in take("IMG_SIZE", 2))
            image_size = (w, h)
        else:
            image_size = KITTI_IMAGE_SIZE
    try:
        r0_t = RigidTransform(r0, np.zeros(3))
    except ValueError as exc:
        raise MalformedCalib("R0_rect", str(exc)) from None
    try:
        tr_t = RigidTransform(tr[:, :3], tr[:, 3])
    except ValueError as exc:
        raise MalformedCalib("Tr_velo_to_cam", str(exc)) from None
    return CalibSet(
        P2=ProjectionMatrix(p2, image_size[0], image_size[1]),
        R0_rect=r0_t,
        Tr_velo_to_cam=tr_t,
    )


def format_calib_file(calib: CalibSet, include_image_size: bool = True) -> str:
    """Serialize a CalibSet using KITTI's record layout."""
    def row(vals):
        return " ".join(f"{v:.12e}" for v in vals)

    tr = np.hstack([calib.Tr_velo_to_cam.rotation,
                    calib.Tr_velo_to_cam.translation.reshape(3, 1)])
    lines = [
        "P2: " + row(calib.P2.entries.ravel()),
        "R0_rect: " + row(calib.R0_rect.rotation.ravel()),
        "Tr_velo_to_cam: " + row(tr.ravel()),
    ]
    if include_image_size:
        lines.append(f"IMG_SIZE: {calib.P2.image_width} {calib.P2.image_height}")
    return "\n".join(lines) + "\n"


# --- velodyne scans ------------------------------------------------------------

def read_velodyne_bin(data: bytes) -> PointCloud:
    """Decode a raw velodyne scan; reflectance is clamped to [0, 1].

    Out-of-range reflectance values are data noise in real scans, not
    errors, so they are clamped rather than rejected.
    """
    if len(data) % 16 != 0:
        raise TruncatedScan(f"scan length {len(data)} is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()
    np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
    return PointCloud(pts)


def write_velodyne_bin(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


# --- extended annotations -------------------------------------------------------

# Fixed key order keeps the files diffable and golden-test stable.
_ANN_KEYS = (
    "image_id", "category", "truncated", "occluded", "alpha",
    "bbox_left", "bbox_top", "bbox_right", "bbox_bottom",
    "dim_height", "dim_width", "dim_length",
    "loc_x", "loc_y", "loc_z", "rotation_y",
    "distance", "keypoint_u", "keypoint_v",
)
_STRING_KEYS = {"image_id", "category"}
_INT_KEYS = {"occluded"}


def _ann_to_record(ann: ExtendedAnnotation) -> dict:
    return {
        "image_id": ann.image_id,
        "category": ann.category,
        "truncated": ann.truncated,
        "occluded": ann.occluded,
        "alpha": ann.alpha,
        "bbox_left": ann.bbox[0], "bbox_top": ann.bbox[1],
        "bbox_right": ann.bbox[2], "bbox_bottom": ann.bbox[3],
        "dim_height": ann.dims[0], "dim_width": ann.dims[1],
        "dim_length": ann.dims[2],
        "loc_x": ann.location[0], "loc_y": ann.location[1],
        "loc_z": ann.location[2],
        "rotation_y": ann.rotation_y,
        "distance": ann.distance,
        "keypoint_u": ann.keypoint.u, "keypoint_v": ann.keypoint.v,
    }


def _record_to_ann(rec: dict) -> ExtendedAnnotation:
    return ExtendedAnnotation(
        image_id=rec["image_id"],
        category=rec["category"],
        truncated=rec["truncated"],
        occluded=rec["occluded"],
        alpha=rec["alpha"],
        bbox=(rec["bbox_left"], rec["bbox_top"], rec["bbox_right"], rec["bbox_bottom"]),
        dims=(rec["dim_height"], rec["dim_width"], rec["dim_length"]),
        location=(rec["loc_x"], rec["loc_y"], rec["loc_z"]),
        rotation_y=rec["rotation_y"],
        distance=rec["distance"],
        keypoint=Pixel(rec["keypoint_u"], rec["keypoint_v"]),
    )


def write_extended_annotations(anns: Iterable[ExtendedAnnotation], sink) -> None:
    """Write one key=value record per object, in input order.

    ``sink`` may be a path or an open text file.
    """
    own = isinstance(sink, (str, Path))
    fh: TextIO = open(sink, "w") if own else sink
    try:
        for ann in anns:
            rec = _ann_to_record(ann)
            tokens = []
            for key in _ANN_KEYS:
                val = rec[key]
                if key in _STRING_KEYS:
                    tokens.append(f"{key}={val}")
                elif key in _INT_KEYS:
                    tokens.append(f"{key}={int(val)}")
                else:
                    tokens.append(f"{key}={float(val):.6f}")
            fh.write(" ".join(tokens) + "\n")
    finally:
        if own:
            fh.close()


def read_extended_annotations(source) -> list[ExtendedAnnotation]:
    """Read extended annotations; inverse of write within 1e-6 per field."""
    own = isinstance(source, (str, Path))
    fh: TextIO = open(source) if own else source
    try:
        text = fh.read()
    finally:
        if own:
            fh.close()

    anns = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rec = {}
        for token in line.split():
            key, sep, val = token.partition("=")
            if not sep:
                raise SchemaViolation(line_no, f"token without '=': {token!r}")
            rec[key] = val
        missing = [k for k in _ANN_KEYS if k not in rec]
        if missing:
            raise SchemaViolation(line_no, f"missing keys: {', '.join(missing)}")
        parsed = {}
        for key in _ANN_KEYS:
            raw = rec[key]
            if key in _STRING_KEYS:
                parsed[key] = raw
            else:
                try:
                    parsed[key] = int(raw) if key in _INT_KEYS else float(raw)
                except ValueError:
                    raise SchemaViolation(line_no, f"non-numeric {key}={raw!r}") from None
        anns.append(_record_to_ann(parsed))
    return anns
