"""The "Simple" direct pose optimizer and the supervised loss suite."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import CorrespondenceError, Pose, Scene, as_cloud, nearest_sq, quat_to_matrix

LOSS_WEIGHTS = {"t": 1.0, "r": 10.0, "s": 1.0}


@dataclass
class SimpleConfig:
    reference: np.ndarray
    learning_rate: float = 0.05
    iterations: int = 500
    momentum: float = 0.9

    def __post_init__(self):
        self.reference = as_cloud(self.reference)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class SimpleResult:
    losses: list = field(default_factory=list)
    best_losses: list = field(default_factory=list)
    diverged: bool = False


def _dR_dq(q: np.ndarray) -> np.ndarray:
    """``d R(q) / d q`` for the unit-quaternion rotation formula, shape (3, 3, 4)."""
    w, x, y, z = q
    return 2.0 * np.array([
        [[0, 0, -2 * y, -2 * z], [-z, y, x, -w], [y, z, w, x]],
        [[z, y, x, w], [0, -2 * x, 0, -2 * z], [-x, -w, z, y]],
        [[-y, z, -w, x], [x, w, z, y], [0, -2 * x, -2 * y, 0]],
    ])


def chamfer_point_grad(x: np.ndarray, ref: np.ndarray) -> tuple[float, np.ndarray]:
    """Chamfer value and its gradient w.r.t. ``x`` with nearest neighbours held fixed."""
    d_xr, i_xr = nearest_sq(x, ref)
    d_rx, i_rx = nearest_sq(ref, x)
    n, m = len(x), len(ref)
    g = 2.0 * (x - ref[i_xr]) / n
    np.add.at(g, i_rx, 2.0 * (x[i_rx] - ref) / m)
    return float(d_xr.mean() + d_rx.mean()), g


def pose_loss_and_grad(params: np.ndarray, canon: list, ref: np.ndarray):
    """Chamfer of the rendered scene against ``ref`` and its gradient in the raw parameters.

    ``params`` is ``(N, 7)``: quaternion (any norm, normalized inside) then translation.
    """
    rendered, rots, qhats = [], [], []
    for p, c in zip(params, canon):
        qh = p[:4] / np.linalg.norm(p[:4])
        R = quat_to_matrix(qh)
        rendered.append(c @ R.T + p[4:])
        rots.append(R)
        qhats.append(qh)
    x = np.concatenate(rendered)
    loss, gx = chamfer_point_grad(x, ref)
    grad = np.zeros_like(params)
    start = 0
    for k, (p, c) in enumerate(zip(params, canon)):
        g = gx[start:start + len(c)]
        start += len(c)
        grad[k, 4:] = g.sum(axis=0)
        dR = g.T @ c  # dL/dR
        dq_hat = np.einsum("ab,abk->k", dR, _dR_dq(qhats[k]))
        nq = np.linalg.norm(p[:4])
        # through q_hat = q / |q|
        grad[k, :4] = (dq_hat - qhats[k] * (qhats[k] @ dq_hat)) / nq
    return loss, grad


def _params_of(scene: Scene) -> np.ndarray:
    return np.array([np.concatenate([p.quat, p.trans]) for p in scene.poses])


def _scene_of(scene: Scene, params: np.ndarray) -> Scene:
    return scene.with_poses([Pose(p[:4], p[4:]) for p in params])


def simple_optimize(scene: Scene, cfg: SimpleConfig, rng: np.random.Generator | None = None):
    """Gradient descent with momentum on seven parameters per part against ``cfg.reference``.

    Quaternions are renormalized after every step. Returns the best scene seen
    and a :class:`SimpleResult`. ``rng`` is accepted for interface symmetry;
    the optimization itself is deterministic.
    """
    canon = [p.canonical for p in scene.parts]
    params = _params_of(scene)
    vel = np.zeros_like(params)
    best_params, best = params.copy(), np.inf
    result = SimpleResult()
    for _ in range(cfg.iterations):
        loss, grad = pose_loss_and_grad(params, canon, cfg.reference)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            result.diverged = True
            warnings.warn("simple_optimize diverged; returning best-so-far scene", stacklevel=2)
            break
        result.losses.append(loss)
        if loss < best:
            best, best_params = loss, params.copy()
        result.best_losses.append(best)
        if loss == 0.0:
            break
        vel = cfg.momentum * vel - cfg.learning_rate * grad
        params = params + vel
        params[:, :4] /= np.linalg.norm(params[:, :4], axis=1, keepdims=True)
    else:
        loss, _ = pose_loss_and_grad(params, canon, cfg.reference)
        if np.isfinite(loss) and loss < best:
            best, best_params = loss, params.copy()
            result.losses.append(loss)
            result.best_losses.append(best)
    return _scene_of(scene, best_params), result


def _sum_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    return float(nearest_sq(a, b)[0].sum() + nearest_sq(b, a)[0].sum())


@dataclass
class SupervisedLosses:
    L_t: float
    L_r: float
    L_s: float
    total: float


def weighted_total(L_t: float, L_r: float, L_s: float) -> float:
    return LOSS_WEIGHTS["t"] * L_t + LOSS_WEIGHTS["r"] * L_r + LOSS_WEIGHTS["s"] * L_s


def supervised_losses(pred: Scene, gt: Scene) -> SupervisedLosses:
    """Translation, rotation and shape losses of the supervised assembly setup.

    Chamfer terms here sum squared nearest-neighbour distances over points
    rather than averaging them.
    """
    if len(pred.parts) != len(gt.parts):
        raise CorrespondenceError("part counts differ")
    L_t = sum(float(((a.pose.trans - b.pose.trans) ** 2).sum()) for a, b in zip(pred.parts, gt.parts))
    L_r = 0.0
    for a, b in zip(pred.parts, gt.parts):
        L_r += _sum_chamfer(a.canonical @ a.pose.rotation.T, a.canonical @ b.pose.rotation.T)
    L_s = _sum_chamfer(pred.render(), gt.render())
    return SupervisedLosses(L_t, L_r, L_s, weighted_total(L_t, L_r, L_s))
