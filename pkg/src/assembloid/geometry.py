"""Point clouds, rigid poses and alignment.

Clouds are plain ``(n, 3)`` float arrays. Quaternions are ``(w, x, y, z)``.
A pose maps canonical part coordinates to world coordinates as
``R @ p + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree


class InvalidInputError(ValueError):
    """Raised for empty or non-finite point clouds and malformed poses."""


class CorrespondenceError(ValueError):
    """Raised when two inputs that must be index-aligned are not."""


class DegenerateGeometryError(ValueError):
    """Raised when rotation is unobservable (fewer than 3 points, collinear)."""


def as_cloud(points) -> np.ndarray:
    """Validate and return ``points`` as a read-only ``(n, 3)`` float64 array."""
    arr = np.array(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"expected an (n, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidInputError("point cloud is empty")
    if not np.isfinite(arr).all():
        raise InvalidInputError("point cloud has non-finite coordinates")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# quaternion helpers

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if q.shape != (4,) or not np.isfinite(q).all() or n == 0.0:
        raise InvalidInputError(f"invalid quaternion {q!r}")
    q = q / n
    # canonical hemisphere so that equal rotations serialize identically
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return normalize_quat(q)


def axis_angle_quat(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return normalize_quat([np.cos(half), *(np.sin(half) * axis)])


def geodesic_rotation_distance(a, b) -> float:
    """Angle in degrees, in [0, 180], of the rotation taking ``a`` to ``b``.

    Uses atan2 on the relative quaternion, which stays accurate near zero
    where ``2 * arccos(|<a, b>|)`` loses half the significant digits.
    """
    rel = quat_multiply(quat_conjugate(np.asarray(a, float)), np.asarray(b, float))
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))))


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True, eq=False)
class Pose:
    quat: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = normalize_quat(self.quat)
        t = np.array(self.trans, dtype=np.float64)
        if t.shape != (3,) or not np.isfinite(t).all():
            raise InvalidInputError(f"invalid translation {self.trans!r}")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, R, t) -> Pose:
        return cls(matrix_to_quat(R), t)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def inverse(self) -> Pose:
        qi = quat_conjugate(self.quat)
        return Pose(qi, -quat_to_matrix(qi) @ self.trans)

    def to_json(self) -> dict:
        return {"quat": [float(v) for v in self.quat], "trans": [float(v) for v in self.trans]}

    @classmethod
    def from_json(cls, obj: dict) -> Pose:
        return cls(obj["quat"], obj["trans"])

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return (geodesic_rotation_distance(self.quat, other.quat) <= np.degrees(atol)
                and np.allclose(self.trans, other.trans, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Pose(quat={self.quat.tolist()}, trans={self.trans.tolist()})"


def apply_pose(cloud, pose: Pose) -> np.ndarray:
    """Rotate then translate ``cloud``; point order is preserved."""
    cloud = as_cloud(cloud)
    return cloud @ pose.rotation.T + pose.trans


def compose(outer: Pose, inner: Pose) -> Pose:
    """Pose equivalent to applying ``inner`` first, then ``outer``."""
    q = quat_multiply(outer.quat, inner.quat)
    return Pose(q, outer.rotation @ inner.trans + outer.trans)


def inverse(pose: Pose) -> Pose:
    return pose.inverse()


# ---------------------------------------------------------------------------
# parts and scenes


@dataclass(frozen=True, eq=False)
class Part:
    id: int
    canonical: np.ndarray
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        object.__setattr__(self, "canonical", as_cloud(self.canonical))
        object.__setattr__(self, "id", int(self.id))

    def placed(self) -> np.ndarray:
        return apply_pose(self.canonical, self.pose)

    def with_pose(self, pose: Pose) -> Part:
        return replace(self, pose=pose)

    @property
    def n_points(self) -> int:
        return self.canonical.shape[0]


@dataclass(frozen=True, eq=False)
class Scene:
    parts: tuple
    label: str = "chair"

    MAX_PARTS = 20

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise InvalidInputError("scene has no parts")
        if len(parts) > self.MAX_PARTS:
            raise InvalidInputError(f"scene has {len(parts)} parts, cap is {self.MAX_PARTS}")
        ids = [p.id for p in parts]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate part ids {ids}")
        object.__setattr__(self, "parts", parts)

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def poses(self) -> list[Pose]:
        return [p.pose for p in self.parts]

    def with_poses(self, poses) -> Scene:
        poses = list(poses)
        if len(poses) != len(self.parts):
            raise CorrespondenceError("pose count does not match part count")
        return replace(self, parts=tuple(p.with_pose(q) for p, q in zip(self.parts, poses)))

    def slices(self) -> list[slice]:
        out, start = [], 0
        for p in self.parts:
            out.append(slice(start, start + p.n_points))
            start += p.n_points
        return out

    def render(self) -> np.ndarray:
        """All placed parts concatenated in part order."""
        return np.concatenate([p.placed() for p in self.parts], axis=0)


# ---------------------------------------------------------------------------
# distances


def nearest_sq(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared distance from each point of ``a`` to its nearest point in ``b``, and its index."""
    _, idx = cKDTree(b).query(a, k=1)
    d2 = ((a - b[idx]) ** 2).sum(axis=1)
    return d2, idx


def chamfer(a, b) -> float:
    """Symmetric squared chamfer; each direction is averaged over its own cloud."""
    a, b = as_cloud(a), as_cloud(b)
    d_ab, _ = nearest_sq(a, b)
    d_ba, _ = nearest_sq(b, a)
    return float(d_ab.mean() + d_ba.mean())


# ---------------------------------------------------------------------------
# rigid alignment


@dataclass(frozen=True, eq=False)
class RigidAlignment:
    quat: np.ndarray
    trans: np.ndarray
    residual: float
    history: tuple = ()
    fallback: bool = False

    @property
    def pose(self) -> Pose:
        return Pose(self.quat, self.trans)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean((x ** 2).sum(axis=1))))


def kabsch_align(source, target) -> RigidAlignment:
    """Least-squares rigid transform taking ``source[i]`` onto ``target[i]``."""
    src, dst = as_cloud(source), as_cloud(target)
    if src.shape != dst.shape:
        raise CorrespondenceError(f"point counts differ: {src.shape[0]} vs {dst.shape[0]}")
    if src.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 points to observe rotation")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("source points are collinear")
    U, _, Vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cd - R @ cs
    pose = Pose.from_matrix(R, t)
    residual = _rms(src @ pose.rotation.T + pose.trans - dst)
    return RigidAlignment(pose.quat, pose.trans, residual)


def centroid_align(source, target) -> RigidAlignment:
    """Translation-only fallback when rotation is unobservable."""
    src, dst = as_cloud(source), as_cloud(target)
    t = dst.mean(axis=0) - src.mean(axis=0)
    if src.shape == dst.shape:
        residual = _rms(src + t - dst)
    else:
        residual = float(np.sqrt(nearest_sq(src + t, dst)[0].mean()))
    return RigidAlignment(IDENTITY_QUAT.copy(), t, residual, fallback=True)


def icp_align(source, target, max_iters: int = 30, tol: float = 1e-10) -> RigidAlignment:
    """Point-to-point ICP starting from the identity.

    Each iteration matches the currently transformed source to its nearest
    target points and re-solves the transform from the original source.
    ``history`` holds the residual after every iteration and never increases.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    src, dst = as_cloud(source), as_cloud(target)
    tree = cKDTree(dst)
    pose = Pose()
    history = []
    for _ in range(max_iters):
        moved = src @ pose.rotation.T + pose.trans
        _, idx = tree.query(moved, k=1)
        try:
            step = kabsch_align(src, dst[idx])
        except DegenerateGeometryError:
            fb = centroid_align(src, dst)
            return RigidAlignment(fb.quat, fb.trans, fb.residual, tuple(history) + (fb.residual,), True)
        if history and step.residual > history[-1]:
            # ties in nearest-neighbour matching can only cost rounding
            break
        pose = step.pose
        history.append(step.residual)
        if len(history) > 1 and history[-2] - history[-1] < tol:
            break
    return RigidAlignment(pose.quat, pose.trans, history[-1], tuple(history))
