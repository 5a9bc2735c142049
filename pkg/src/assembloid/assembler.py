"""Iterative zero-shot assembly: noise, denoise, align each part, repeat.

One iteration on a scene rendered to ``P_t``:

1. ``noisy = alpha_z * P_t + sigma_z * eps``
2. ``P_star = denoise_estimate(noisy)``
3. each part's slice of ``P_t`` is rigidly aligned to the same slice of ``P_star``
4. the alignment is composed onto the part's pose
5. optionally, overlapping parts are pushed apart
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .diffusion import NoiseSchedule, denoise_estimate, forward_noise
from .geometry import (
    DegenerateGeometryError,
    Pose,
    Scene,
    centroid_align,
    chamfer,
    compose,
    icp_align,
    kabsch_align,
)


@dataclass
class CollisionConfig:
    enabled: bool = False
    radius: float = 0.02
    count_threshold: int = 16
    sign: float = 0.5
    trigger: str = "above"
    every: int = 1

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("collision radius must be > 0")
        if self.count_threshold < 1:
            raise ValueError("count_threshold must be >= 1")
        if self.trigger not in ("above", "below"):
            raise ValueError(f"trigger must be 'above' or 'below', got {self.trigger!r}")
        if self.every < 1:
            raise ValueError("every must be >= 1")


@dataclass
class AssemblyConfig:
    T: int = 50
    z: int = 2
    align_mode: str = "kabsch"
    denoise_mode: str = "literal"
    collision: CollisionConfig = field(default_factory=CollisionConfig)
    seed: int = 0
    w: float = 1.0
    icp_iters: int = 30

    def __post_init__(self):
        if isinstance(self.collision, dict):
            self.collision = CollisionConfig(**self.collision)
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.align_mode not in ("kabsch", "icp"):
            raise ValueError(f"align_mode must be 'kabsch' or 'icp', got {self.align_mode!r}")
        if self.denoise_mode not in ("literal", "ddpm"):
            raise ValueError(f"denoise_mode must be 'literal' or 'ddpm', got {self.denoise_mode!r}")

    def check_schedule(self, schedule: NoiseSchedule) -> None:
        schedule.check(self.z)
        if self.z > schedule.Z / 10:
            warnings.warn(f"z={self.z} is large for Z={schedule.Z}; alignment degrades with noise", stacklevel=3)


@dataclass
class StepRecord:
    iteration: int
    poses: list
    residuals: list
    fallbacks: list
    chamfer_to_denoised: float
    collisions: list = field(default_factory=list)
    metrics: dict | None = None


@dataclass
class IterationTrace:
    initial_poses: list
    steps: list = field(default_factory=list)
    initial_metrics: dict | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def to_jsonl(self) -> str:
        """Line 0 is the initial state; then one line per iteration."""
        head = {"iteration": 0, "initial": True, "poses": self.initial_poses, "metrics": self.initial_metrics}
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(asdict(s), sort_keys=True) for s in self.steps]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> IterationTrace:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, rest = rows[0], rows[1:]
        return cls(head["poses"], [StepRecord(**r) for r in rest], head.get("metrics"))


class AssemblyError(RuntimeError):
    def __init__(self, msg, scene, trace):
        super().__init__(msg)
        self.scene = scene
        self.trace = trace


# ---------------------------------------------------------------------------
# collisions


def coincident_mask(a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Points of ``a`` with at least one point of ``b`` within ``radius`` (inclusive)."""
    _, idx = cKDTree(b).query(a, k=1)
    d2 = ((a - b[idx]) ** 2).sum(axis=1)
    return d2 <= radius * radius


def coincident_count(a, b, radius: float) -> int:
    """Number of points of ``a`` near ``b``; direction matters."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    return int(coincident_mask(np.asarray(a, float), np.asarray(b, float), radius).sum())


def total_coincident(scene: Scene, radius: float) -> int:
    """Sum of ``coincident_count`` over all ordered part pairs."""
    clouds = [p.placed() for p in scene.parts]
    return sum(coincident_count(clouds[i], clouds[j], radius)
               for i in range(len(clouds)) for j in range(len(clouds)) if i != j)


def _fallback_direction(pi: np.ndarray, pj: np.ndarray, i: int, j: int) -> np.ndarray:
    d = pi.mean(axis=0) - pj.mean(axis=0)
    n = np.linalg.norm(d)
    if n > 1e-12:
        return d / n
    # concentric parts: move along part i's thinnest axis, opposite ways for i<j and i>j
    _, vecs = np.linalg.eigh(np.cov((pi - pi.mean(axis=0)).T))
    axis = vecs[:, 0]
    axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
    return axis if i < j else -axis


def collision_displacements(scene: Scene, cfg: CollisionConfig) -> list[dict]:
    """Push events for every ordered pair, all computed from the same configuration.

    Displacement is ``(centroid(P_i) - centroid(coincident points of P_i)) * s``.
    When that vector is shorter than the coincidence radius the overlap is
    close to concentric and the formula gives no usable direction; the part
    is then moved ``s`` times its own extent along the line between part
    centroids (or its thinnest axis when the centroids coincide).
    """
    clouds = [p.placed() for p in scene.parts]
    events = []
    for i, pi in enumerate(clouds):
        for j, pj in enumerate(clouds):
            if i == j:
                continue
            mask = coincident_mask(pi, pj, cfg.radius)
            count = int(mask.sum())
            fire = count >= cfg.count_threshold if cfg.trigger == "above" else count < cfg.count_threshold
            if not fire or count == 0:
                continue
            disp = (pi.mean(axis=0) - pi[mask].mean(axis=0)) * cfg.sign
            degenerate = np.linalg.norm(disp) < cfg.radius * abs(cfg.sign)
            if degenerate:
                d = _fallback_direction(pi, pj, i, j)
                proj = (pi - pi.mean(axis=0)) @ d
                disp = d * (proj.max() - proj.min()) * cfg.sign
            events.append({"i": i, "j": j, "count": count, "degenerate": bool(degenerate),
                           "displacement": [float(v) for v in disp]})
    return events


def push_away(scene: Scene, cfg: CollisionConfig) -> Scene:
    """Translate overlapping parts apart; rotations are untouched."""
    return resolve_collisions(scene, cfg)[0]


def resolve_collisions(scene: Scene, cfg: CollisionConfig) -> tuple[Scene, list[dict]]:
    """Apply push events, holding back any that would deepen an overlap.

    Pairs are visited in ascending ``(i, j)`` order but every displacement is
    measured before any is applied, so the result does not depend on order.
    Two nearby shells can both be pushed the same way and end up more
    entangled; when a triggering pair's count would rise, both of its parts
    keep their previous pose and the remaining moves are re-checked. Events
    carry ``applied`` to record the outcome.
    """
    if cfg.sign == 0:
        return scene, []
    events = collision_displacements(scene, cfg)
    if not events:
        return scene, events
    frozen: set[int] = set()
    while True:
        live = [e for e in events if e["i"] not in frozen]
        moved = apply_displacements(scene, live)
        clouds = [p.placed() for p in moved.parts]
        worse = {(e["i"], e["j"]) for e in events
                 if coincident_count(clouds[e["i"]], clouds[e["j"]], cfg.radius) > e["count"]}
        if not worse:
            break
        frozen |= {k for pair in worse for k in pair}
    for e in events:
        e["applied"] = e["i"] not in frozen
    return moved, events


def apply_displacements(scene: Scene, events: list[dict]) -> Scene:
    if not events:
        return scene
    shift = np.zeros((len(scene.parts), 3))
    for e in events:
        shift[e["i"]] += e["displacement"]
    poses = [Pose(p.quat, p.trans + s) if s.any() else p for p, s in zip(scene.poses, shift)]
    return scene.with_poses(poses)


# ---------------------------------------------------------------------------
# the loop


def _align(src, dst, mode, icp_iters):
    try:
        if mode == "kabsch":
            return kabsch_align(src, dst)
        return icp_align(src, dst, max_iters=icp_iters)
    except DegenerateGeometryError:
        return centroid_align(src, dst)


def assemble_step(scene: Scene, denoiser, schedule: NoiseSchedule, cfg: AssemblyConfig,
                  rng: np.random.Generator, iteration: int = 1) -> tuple[Scene, StepRecord]:
    schedule.check(cfg.z)
    P_t = scene.render()
    noisy, _ = forward_noise(P_t, schedule, cfg.z, rng)
    P_star = denoise_estimate(noisy, denoiser, scene.label, cfg.z, schedule, cfg.denoise_mode)
    poses, residuals, fallbacks = [], [], []
    for part, sl in zip(scene.parts, scene.slices()):
        al = _align(P_t[sl], P_star[sl], cfg.align_mode, cfg.icp_iters)
        poses.append(compose(al.pose, part.pose))
        residuals.append(al.residual)
        if al.fallback:
            fallbacks.append(part.id)
    new = scene.with_poses(poses)
    events = []
    if cfg.collision.enabled and cfg.collision.sign != 0 and iteration % cfg.collision.every == 0:
        new, events = resolve_collisions(new, cfg.collision)
    record = StepRecord(
        iteration=iteration,
        poses=[p.to_json() for p in new.poses],
        residuals=[float(r) for r in residuals],
        fallbacks=fallbacks,
        chamfer_to_denoised=chamfer(new.render(), P_star),
        collisions=events,
    )
    return new, record


def assemble(scene: Scene, denoiser, schedule: NoiseSchedule, cfg: AssemblyConfig,
             rng: np.random.Generator | None = None, on_step=None) -> tuple[Scene, IterationTrace]:
    """Run ``cfg.T`` iterations. ``on_step(t, scene, record)`` sees every state;
    at t=0 ``record`` is None.

    If an iteration fails, :class:`AssemblyError` carries the last good scene
    and the trace so far.
    """
    cfg.check_schedule(schedule)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    trace = IterationTrace([p.to_json() for p in scene.poses])
    if on_step is not None:
        on_step(0, scene, None)
    for t in range(1, cfg.T + 1):
        try:
            scene, record = assemble_step(scene, denoiser, schedule, cfg, rng, iteration=t)
        except Exception as e:
            raise AssemblyError(f"iteration {t} failed: {e}", scene, trace) from e
        if on_step is not None:
            on_step(t, scene, record)
        trace.steps.append(record)
    return scene, trace


# ---------------------------------------------------------------------------
# score-distillation view of one iteration


@dataclass
class SDSGradient:
    """Per-part gradients with respect to a 3x4 affine correction ``[R | t]`` at identity.

    ``via_residual`` is ``w * (P_t - P_star) * dP/dA``; ``via_noise`` is
    ``w * (eps_hat - eps) * dP/dA`` with ``eps_hat = noisy - P_star`` and
    ``eps = noisy - P_t``. The two agree up to rounding.
    """

    via_residual: np.ndarray
    via_noise: np.ndarray
    P_t: np.ndarray
    P_star: np.ndarray

    @property
    def translation(self) -> np.ndarray:
        return self.via_residual[:, :, 3]


def _affine_grad(residual: np.ndarray, points: np.ndarray, slices) -> np.ndarray:
    out = np.zeros((len(slices), 3, 4))
    for k, sl in enumerate(slices):
        r, p = residual[sl], points[sl]
        out[k, :, :3] = r.T @ p
        out[k, :, 3] = r.sum(axis=0)
    return out


def sds_gradient(scene: Scene, denoiser, schedule: NoiseSchedule, z: int, w: float = 1.0,
                 rng: np.random.Generator | None = None, mode: str = "literal") -> SDSGradient:
    rng = np.random.default_rng(0) if rng is None else rng
    P_t = scene.render()
    noisy, _ = forward_noise(P_t, schedule, z, rng)
    P_star = denoise_estimate(noisy, denoiser, scene.label, z, schedule, mode)
    eps_hat = noisy - P_star
    eps = noisy - P_t
    sl = scene.slices()
    return SDSGradient(
        via_residual=_affine_grad(w * (P_t - P_star), P_t, sl),
        via_noise=_affine_grad(w * (eps_hat - eps), P_t, sl),
        P_t=P_t,
        P_star=P_star,
    )
