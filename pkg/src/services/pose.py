"""Pose math: unit quaternions, log map, error metrics, fusion and pose files.

Quaternions are scalar-first ``(w, x, y, z)``. The log map uses the half-angle
convention of the MapNet family: for a rotation by angle ``theta`` the log
vector has norm ``theta / 2``.
"""

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from src.core.errors import (
    DataValidationError,
    DegenerateFusionError,
    InvalidArgumentError,
    ParseError,
)

UNIT_TOLERANCE = 1e-6
ZERO_VECTOR_EPS = 1e-12
FUSION_EPS = 1e-9
ORTHONORMAL_TOLERANCE = 1e-4
TRAJECTORY_HEADER = ("t", "x", "y", "z", "qw", "qx", "qy", "qz")

Vector3 = tuple[float, float, float]


@dataclass(frozen=True, slots=True)
class Quaternion:
    """Scalar-first quaternion."""

    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float] | npt.NDArray[np.floating]) -> "Quaternion":
        w, x, y, z = (float(v) for v in values)
        return cls(w, x, y, z)

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def dot(self, other: "Quaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def negated(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if not math.isfinite(n) or n < ZERO_VECTOR_EPS:
            raise InvalidArgumentError("cannot normalize a zero or non-finite quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def is_unit(self, tol: float = UNIT_TOLERANCE) -> bool:
        n2 = self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
        return abs(n2 - 1.0) <= tol

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product."""
        return Quaternion(
            self.w * other.w - self.x * other.x - self.y * other.y - self.z * other.z,
            self.w * other.x + self.x * other.w + self.y * other.z - self.z * other.y,
            self.w * other.y - self.x * other.z + self.y * other.w + self.z * other.x,
            self.w * other.z + self.x * other.y - self.y * other.x + self.z * other.w,
        )


@dataclass(frozen=True, slots=True)
class LogQuat:
    """Log of a unit quaternion: half-angle scaled rotation axis (radians)."""

    v: Vector3


@dataclass(frozen=True, slots=True)
class Pose:
    """Translation in meters plus unit orientation."""

    t: Vector3
    q: Quaternion

    @classmethod
    def identity(cls) -> "Pose":
        return cls((0.0, 0.0, 0.0), Quaternion.identity())


@dataclass(frozen=True, slots=True)
class Trajectory:
    """Timestamped poses with strictly increasing timestamps."""

    samples: tuple[tuple[float, Pose], ...]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def timestamps(self) -> npt.NDArray[np.float64]:
        return np.array([ts for ts, _ in self.samples], dtype=np.float64)

    @property
    def positions(self) -> npt.NDArray[np.float64]:
        return np.array([pose.t for _, pose in self.samples], dtype=np.float64).reshape(-1, 3)

    @property
    def poses(self) -> list[Pose]:
        return [pose for _, pose in self.samples]


def _require_finite(values: Iterable[float], what: str) -> None:
    if not all(math.isfinite(v) for v in values):
        raise InvalidArgumentError(f"{what} must be finite")


def _require_unit(q: Quaternion, what: str = "quaternion") -> None:
    _require_finite((q.w, q.x, q.y, q.z), what)
    if not q.is_unit():
        raise InvalidArgumentError(f"{what} is not unit (norm {q.norm():.9f})")


def quat_log(q: Quaternion) -> LogQuat:
    """Logarithm of a unit quaternion on the canonical (w >= 0) hemisphere."""
    _require_unit(q)
    if q.w < 0:
        q = q.negated()
    vec_norm = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
    if vec_norm < ZERO_VECTOR_EPS:
        return LogQuat((0.0, 0.0, 0.0))
    angle = math.acos(min(1.0, max(-1.0, q.w)))
    scale = angle / vec_norm
    return LogQuat((q.x * scale, q.y * scale, q.z * scale))


def quat_exp(v: LogQuat | Sequence[float]) -> Quaternion:
    """Inverse of :func:`quat_log`."""
    vx, vy, vz = (float(c) for c in (v.v if isinstance(v, LogQuat) else v))
    _require_finite((vx, vy, vz), "log quaternion")
    n = math.sqrt(vx * vx + vy * vy + vz * vz)
    if n < ZERO_VECTOR_EPS:
        return Quaternion.identity()
    s = math.sin(n) / n
    return Quaternion(math.cos(n), vx * s, vy * s, vz * s)


def translation_error(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two positions (meters)."""
    _require_finite((*a, *b), "translation")
    return math.dist(a, b)


def rotation_error_deg(p: Quaternion, q: Quaternion) -> float:
    """Angle of the relative rotation between two unit quaternions (degrees)."""
    _require_unit(p, "first quaternion")
    _require_unit(q, "second quaternion")
    return math.degrees(2.0 * math.acos(min(1.0, abs(p.dot(q)))))


def fuse_pair(a: Pose, b: Pose) -> Pose:
    """Average two poses: mean translation, normalized hemisphere-aligned sum."""
    if a == b:
        return a
    _require_unit(a.q, "first quaternion")
    _require_unit(b.q, "second quaternion")
    qb = b.q.negated() if a.q.dot(b.q) < 0 else b.q
    summed = Quaternion(a.q.w + qb.w, a.q.x + qb.x, a.q.y + qb.y, a.q.z + qb.z)
    n = summed.norm()
    if n < FUSION_EPS:
        raise DegenerateFusionError("orientations cancel out")
    t = (
        (a.t[0] + b.t[0]) / 2.0,
        (a.t[1] + b.t[1]) / 2.0,
        (a.t[2] + b.t[2]) / 2.0,
    )
    return Pose(t, Quaternion(summed.w / n, summed.x / n, summed.y / n, summed.z / n))


def quat_from_axis_angle(axis: Sequence[float], angle_rad: float) -> Quaternion:
    """Unit quaternion rotating by ``angle_rad`` about ``axis``."""
    ax = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(ax))
    if n < ZERO_VECTOR_EPS:
        raise InvalidArgumentError("rotation axis must be non-zero")
    ax = ax / n
    half = angle_rad / 2.0
    s = math.sin(half)
    return Quaternion(math.cos(half), float(ax[0]) * s, float(ax[1]) * s, float(ax[2]) * s)


def quat_from_matrix(rotation: npt.NDArray[np.floating]) -> Quaternion:
    """Convert a proper rotation matrix to a quaternion with w >= 0."""
    x, y, z, w = Rotation.from_matrix(rotation).as_quat()
    q = Quaternion(float(w), float(x), float(y), float(z))
    return q.negated() if q.w < 0 else q


def parse_homogeneous_matrix(text: str) -> Pose:
    """Parse a row-major 4x4 camera-to-world matrix (16 whitespace-separated reals)."""
    tokens = text.split()
    if len(tokens) != 16:
        raise ParseError(f"expected 16 values, got {len(tokens)}")
    try:
        m = np.array([float(tok) for tok in tokens], dtype=np.float64).reshape(4, 4)
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}") from exc
    if not np.all(np.isfinite(m)):
        raise ParseError("matrix contains non-finite values")
    if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > UNIT_TOLERANCE:
        raise DataValidationError("last row must be (0, 0, 0, 1)")
    rot = m[:3, :3]
    deviation = float(np.max(np.abs(rot.T @ rot - np.eye(3))))
    if deviation > ORTHONORMAL_TOLERANCE:
        raise DataValidationError(f"rotation block not orthonormal (deviation {deviation:.3g})")
    if np.linalg.det(rot) <= 0:
        raise DataValidationError("rotation block is a reflection")
    t = (float(m[0, 3]), float(m[1, 3]), float(m[2, 3]))
    return Pose(t, quat_from_matrix(rot))


def load_matrix_file(path: Path | str) -> Pose:
    """Read a 7Scenes-style ``frame-XXXXXX.pose.txt`` file."""
    return parse_homogeneous_matrix(Path(path).read_text())


def load_matrix_sequence(directory: Path | str, rate_hz: float) -> Trajectory:
    """Trajectory from the sorted ``*.pose.txt`` files of one sequence, sampled at ``rate_hz``."""
    files = sorted(Path(directory).glob("*.pose.txt"))
    if not files:
        raise DataValidationError(f"no .pose.txt files in {directory}")
    return make_trajectory((i / rate_hz, load_matrix_file(p)) for i, p in enumerate(files))


def make_trajectory(samples: Iterable[tuple[float, Pose]]) -> Trajectory:
    """Build a trajectory, enforcing strictly increasing timestamps."""
    items = tuple(samples)
    for i in range(1, len(items)):
        if not items[i][0] > items[i - 1][0]:
            raise DataValidationError(
                f"timestamps must increase strictly (sample {i}: {items[i][0]!r} "
                f"after {items[i - 1][0]!r})"
            )
    return Trajectory(items)


def load_trajectory_csv(path: Path | str) -> Trajectory:
    """Load a ``t,x,y,z,qw,qx,qy,qz`` CSV; quaternions are normalized on load."""
    samples: list[tuple[float, Pose]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = [cell.strip() for cell in row]
            if lineno == 1 and tuple(cells) == TRAJECTORY_HEADER:
                continue
            if len(cells) != 8:
                raise ParseError(f"expected 8 fields, got {len(cells)}", line=lineno)
            try:
                values = [float(cell) for cell in cells]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", line=lineno)
            try:
                q = Quaternion.from_array(values[4:]).normalized()
            except InvalidArgumentError as exc:
                raise DataValidationError(f"line {lineno}: {exc}") from exc
            samples.append((values[0], Pose((values[1], values[2], values[3]), q)))
    if not samples:
        raise DataValidationError(f"{path}: trajectory is empty")
    return make_trajectory(samples)


def save_trajectory_csv(traj: Trajectory, path: Path | str) -> None:
    """Write a trajectory CSV with a header line and round-trip precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for ts, pose in traj.samples:
            q = pose.q
            writer.writerow(
                f"{v:.17g}" for v in (ts, *pose.t, q.w, q.x, q.y, q.z)
            )
