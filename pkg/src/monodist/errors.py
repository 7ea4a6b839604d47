"""Exception types raised across the toolkit.

Kept in one module so that geometry, parsing, model, and evaluation code
can share error classes without circular imports.
"""


class MonodistError(Exception):
    """Base class for all toolkit errors."""


# geometry ------------------------------------------------------------------

class DegenerateProjection(MonodistError):
    """Homogeneous scale of a projected point is (numerically) zero."""


class AboveHorizon(MonodistError):
    """Back-projected ray does not intersect the ground plane in front of
    the camera (pixel at or above the horizon line)."""


# kitti_io ------------------------------------------------------------------

class MalformedLabel(MonodistError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed label line {line_no}" + (f": {reason}" if reason else ""))


class MissingCalibKey(MonodistError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"calibration record missing: {name}")


class MalformedCalib(MonodistError):
    def __init__(self, name: str, reason: str = ""):
        self.name = name
        super().__init__(f"malformed calibration record {name}" + (f": {reason}" if reason else ""))


class TruncatedScan(MonodistError):
    """Velodyne binary blob length is not a multiple of 16 bytes."""


class SchemaViolation(MonodistError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"bad annotation record at line {line_no}" + (f": {reason}" if reason else ""))


# dataset_builder -----------------------------------------------------------

class EmptySegment(MonodistError):
    """No LiDAR points fell inside the object's 3D box."""


class ConfigError(MonodistError):
    """Invalid or inconsistent configuration values."""


# nnet ----------------------------------------------------------------------

class BadImageShape(MonodistError):
    """Input image is not an H x W x 3 array of finite values."""


class DegenerateBox(MonodistError):
    """Box has zero area on the feature grid after clamping."""


# losses --------------------------------------------------------------------

class LengthMismatch(MonodistError):
    """Prediction and target sequences differ in length (or are empty)."""


class GradMismatch(MonodistError):
    """Analytic gradient disagrees with finite differences beyond tolerance."""


# trainer -------------------------------------------------------------------

class EmptyDataset(MonodistError):
    """Training requested on a dataset with no usable samples."""


class MissingKeypointTargets(MonodistError):
    """Enhanced-mode training requires keypoint targets and a projection
    matrix on every sample."""


class UnknownConfigKey(ConfigError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown config key: {key}")


# baselines -----------------------------------------------------------------

class DegenerateData(MonodistError):
    """All regression targets identical within the epsilon tube."""


# metrics -------------------------------------------------------------------

class NonPositivePrediction(MonodistError):
    """A predicted distance was <= 0 where a positive value is required."""


class AlignmentError(MonodistError):
    """Predictions and annotations do not share the same object ids."""
