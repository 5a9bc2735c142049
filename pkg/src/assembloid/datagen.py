"""Procedural cuboid furniture/airplane shapes and pose perturbation levels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Part, Pose, Scene, axis_angle_quat, normalize_quat, quat_multiply

FAMILIES = ("chair", "table", "airplane")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple


@dataclass(frozen=True)
class ShapeSpec:
    """What to build. ``boxes`` overrides the family layout when given."""

    family: str = "chair"
    points_per_part: int = 128
    seed: int = 0
    legs: int = 4
    arms: bool = False
    jitter: float = 0.15
    boxes: tuple = field(default=())


@dataclass(frozen=True)
class NoiseLevel:
    name: str
    max_angle_deg: float
    trans_sigma: float
    uniform: bool = False


LEVELS = {
    "slight": NoiseLevel("slight", 15.0, 0.05),
    "moderate": NoiseLevel("moderate", 45.0, 0.15),
    "substantial": NoiseLevel("substantial", 90.0, 0.30),
    "excessive": NoiseLevel("excessive", 180.0, 0.5, uniform=True),
}
LEVEL_ORDER = ("slight", "moderate", "substantial", "excessive")


def _j(rng, value, jitter):
    return value * (1.0 + jitter * rng.uniform(-1.0, 1.0))


def _chair(rng, spec):
    w, d = _j(rng, 0.45, spec.jitter), _j(rng, 0.45, spec.jitter)
    th = _j(rng, 0.05, spec.jitter)
    h = _j(rng, 0.42, spec.jitter)
    leg = _j(rng, 0.05, spec.jitter)
    back_h = _j(rng, 0.45, spec.jitter)
    boxes = [Box((0.0, h + th / 2, 0.0), (w, th, d))]
    if spec.legs == 4:
        for sx in (-1, 1):
            for sz in (-1, 1):
                boxes.append(Box((sx * (w - leg) / 2, h / 2, sz * (d - leg) / 2), (leg, h, leg)))
    elif spec.legs == 2:
        # sled-style panel legs running front to back
        for sx in (-1, 1):
            boxes.append(Box((sx * (w - leg) / 2, h / 2, 0.0), (leg, h, d * 0.9)))
    else:
        raise SpecError("chair legs must be 2 or 4")
    boxes.append(Box((0.0, h + th + back_h / 2, -(d - th) / 2), (w, back_h, th)))
    if spec.arms:
        arm_h = back_h * 0.45
        for sx in (-1, 1):
            boxes.append(Box((sx * (w + leg) / 2, h + th + arm_h, 0.0), (leg, leg, d * 0.8)))
    return boxes


def _table(rng, spec):
    w, d = _j(rng, 0.9, spec.jitter), _j(rng, 0.55, spec.jitter)
    th = _j(rng, 0.05, spec.jitter)
    h = _j(rng, 0.6, spec.jitter)
    leg = _j(rng, 0.06, spec.jitter)
    boxes = [Box((0.0, h + th / 2, 0.0), (w, th, d))]
    for sx in (-1, 1):
        for sz in (-1, 1):
            boxes.append(Box((sx * (w / 2 - leg), h / 2, sz * (d / 2 - leg)), (leg, h, leg)))
    return boxes


def _airplane(rng, spec):
    length = _j(rng, 1.0, spec.jitter)
    body = _j(rng, 0.1, spec.jitter)
    span = _j(rng, 0.45, spec.jitter)
    chord = _j(rng, 0.18, spec.jitter)
    th = 0.02
    tail_span = _j(rng, 0.15, spec.jitter)
    return [
        Box((0.0, 0.0, 0.0), (body, body, length)),
        Box((-(body + span) / 2, 0.0, 0.05), (span, th, chord)),
        Box(((body + span) / 2, 0.0, 0.05), (span, th, chord)),
        Box((0.0, 0.0, -length / 2 + chord / 3), (2 * tail_span + body, th, chord * 0.6)),
        Box((0.0, body / 2 + tail_span / 2, -length / 2 + chord / 3), (th, tail_span, chord * 0.6)),
    ]


def family_boxes(spec: ShapeSpec, rng: np.random.Generator) -> list[Box]:
    if spec.boxes:
        return [b if isinstance(b, Box) else Box(tuple(b[0]), tuple(b[1])) for b in spec.boxes]
    builders = {"chair": _chair, "table": _table, "airplane": _airplane}
    if spec.family not in builders:
        raise SpecError(f"unknown family {spec.family!r}; expected one of {FAMILIES}")
    return builders[spec.family](rng, spec)


def sample_box_surface(size, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform on the surface of an origin-centred box."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array(size)
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    pts[np.arange(n), axis] = sign * np.array(size)[axis]
    return pts


def generate_scene(spec: ShapeSpec, rng: np.random.Generator | None = None) -> tuple[Scene, dict]:
    """Ground-truth scene, normalized to fit the unit cube centred at the origin.

    Canonical part clouds are centred on their box centre, so a part's pose
    translation is its location in the assembled shape.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.points_per_part < 3:
        raise SpecError("points_per_part must be >= 3")
    boxes = family_boxes(spec, rng)
    if not 2 <= len(boxes) <= Scene.MAX_PARTS:
        raise SpecError(f"part count {len(boxes)} outside [2, {Scene.MAX_PARTS}]")
    for b in boxes:
        if len(b.size) != 3 or min(b.size) <= 0:
            raise SpecError(f"box {b} needs three positive dimensions")
    centers = np.array([b.center for b in boxes], dtype=np.float64)
    sizes = np.array([b.size for b in boxes], dtype=np.float64)
    lo = (centers - sizes / 2).min(axis=0)
    hi = (centers + sizes / 2).max(axis=0)
    scale = 1.0 / (hi - lo).max()
    mid = (lo + hi) / 2
    centers = (centers - mid) * scale
    sizes = sizes * scale
    parts = []
    for k, (c, s) in enumerate(zip(centers, sizes)):
        pts = sample_box_surface(s, spec.points_per_part, rng)
        parts.append(Part(k, pts, Pose(trans=c)))
    meta = {
        "family": spec.family,
        "seed": spec.seed,
        "scale": float(scale),
        "boxes": [{"center": c.tolist(), "size": s.tolist()} for c, s in zip(centers, sizes)],
    }
    label = spec.family if not spec.boxes else "custom"
    return Scene(tuple(parts), label), meta


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform over SO(3): a normalized 4D Gaussian."""
    return normalize_quat(rng.standard_normal(4))


def random_axis(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def perturb(scene: Scene, level: NoiseLevel, rng: np.random.Generator) -> Scene:
    """Rotate each part in place and shift it; ``uniform`` levels scatter parts.

    Non-uniform levels pre-multiply each rotation by an axis-uniform rotation
    with angle uniform in ``[0, max_angle_deg]`` and add Gaussian translation.
    Uniform levels apply an SO(3)-uniform rotation and place the part anywhere
    in the unit cube.
    """
    if not level.uniform and level.max_angle_deg == 0.0 and level.trans_sigma == 0.0:
        return scene
    poses = []
    for pose in scene.poses:
        if level.uniform:
            q = quat_multiply(random_rotation(rng), pose.quat)
            t = rng.uniform(-0.5, 0.5, size=3)
        else:
            angle = np.radians(rng.uniform(0.0, level.max_angle_deg))
            q = quat_multiply(axis_angle_quat(random_axis(rng), angle), pose.quat)
            t = pose.trans + level.trans_sigma * rng.standard_normal(3)
        poses.append(Pose(q, t))
    return scene.with_poses(poses)
