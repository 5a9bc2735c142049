"""A small permutation-equivariant noise predictor trained with numpy.

Architecture, per point ``x_i``::

    h1_i = relu(x_i W1 + b1 + emb(z) Wt)
    g    = mean_i h1_i
    h2_i = relu(h1_i W2a + g W2b + b2)
    out_i = h2_i W3 + b3 + x_i Ws

Gradients are written out by hand. Points are processed in a canonical
(lexicographic) order and scattered back, so permuting the input permutes
the output bit for bit regardless of how the BLAS kernels block their work.

Checkpoint container (little-endian)::

    b"ASMBTINY" | uint32 version | uint32 header_len | JSON header | float32 blob
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, linear_schedule

MAGIC = b"ASMBTINY"
VERSION = 1
PARAM_NAMES = ("W1", "b1", "Wt", "W2a", "W2b", "b2", "W3", "b3", "Ws")


class TrainingError(RuntimeError):
    def __init__(self, msg, last_stable=None):
        super().__init__(msg)
        self.last_stable = last_stable


class CheckpointError(ValueError):
    pass


@dataclass
class TrainHyper:
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 150
    hidden: int = 64
    emb_dim: int = 16
    points_per_sample: int = 256
    eval_samples: int = 32


def step_embedding(z, Z: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of ``1000 * z / Z``; accepts a scalar or an array."""
    tau = 1000.0 * np.atleast_1d(np.asarray(z, dtype=np.float64)) / Z
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _canonical_order(x: np.ndarray) -> np.ndarray:
    """Per-sample indices sorting ``(B, n, 3)`` points lexicographically."""
    return np.lexsort((x[..., 2], x[..., 1], x[..., 0]), axis=-1)


def _gather(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(a, idx[..., None], axis=-2)


def init_params(hidden: int, emb_dim: int, rng: np.random.Generator) -> dict:
    def he(fan_in, shape):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    return {
        "W1": he(3, (3, hidden)),
        "b1": np.zeros(hidden),
        "Wt": he(emb_dim, (emb_dim, hidden)),
        "W2a": he(2 * hidden, (hidden, hidden)),
        "W2b": he(2 * hidden, (hidden, hidden)),
        "b2": np.zeros(hidden),
        "W3": rng.standard_normal((hidden, 3)) * 0.01,
        "b3": np.zeros(3),
        "Ws": np.zeros((3, 3)),
    }


def _forward_ordered(params: dict, x: np.ndarray, temb: np.ndarray, keep: bool = False):
    a1 = x @ params["W1"] + params["b1"] + (temb @ params["Wt"])[:, None, :]
    h1 = np.maximum(a1, 0.0)
    g = h1.mean(axis=1)
    a2 = h1 @ params["W2a"] + (g @ params["W2b"])[:, None, :] + params["b2"]
    h2 = np.maximum(a2, 0.0)
    out = h2 @ params["W3"] + params["b3"] + x @ params["Ws"]
    if keep:
        return out, (x, temb, a1, h1, g, a2, h2)
    return out


def forward(params: dict, x: np.ndarray, temb: np.ndarray) -> np.ndarray:
    """``x`` is ``(B, n, 3)`` and ``temb`` is ``(B, E)``; returns ``(B, n, 3)``."""
    x = np.asarray(x, dtype=np.float64)
    idx = _canonical_order(x)
    out_sorted = _forward_ordered(params, _gather(x, idx), temb)
    out = np.empty_like(out_sorted)
    np.put_along_axis(out, idx[..., None], out_sorted, axis=-2)
    return out


def loss_and_grads(params: dict, x, temb, eps):
    """Mean squared noise-prediction error and its gradient for every parameter."""
    idx = _canonical_order(x)
    out, (x, temb, a1, h1, g, a2, h2) = _forward_ordered(params, _gather(x, idx), temb, keep=True)
    eps = _gather(eps, idx)
    diff = out - eps
    loss = float(np.mean(diff ** 2))
    n = x.shape[1]
    dout = 2.0 * diff / diff.size

    grads = {
        "W3": np.einsum("bnh,bnk->hk", h2, dout),
        "b3": dout.sum(axis=(0, 1)),
        "Ws": np.einsum("bni,bnk->ik", x, dout),
    }
    da2 = (dout @ params["W3"].T) * (a2 > 0)
    da2_sum = da2.sum(axis=1)
    grads["W2a"] = np.einsum("bnh,bnk->hk", h1, da2)
    grads["W2b"] = g.T @ da2_sum
    grads["b2"] = da2_sum.sum(axis=0)
    dg = da2_sum @ params["W2b"].T
    dh1 = da2 @ params["W2a"].T + dg[:, None, :] / n
    da1 = dh1 * (a1 > 0)
    da1_sum = da1.sum(axis=1)
    grads["W1"] = np.einsum("bni,bnh->ih", x, da1)
    grads["b1"] = da1_sum.sum(axis=0)
    grads["Wt"] = temb.T @ da1_sum
    return loss, grads


@dataclass
class TinyDenoiser:
    params: dict
    Z: int
    sigma_max: float
    label: str | None = None
    hidden: int = 64
    emb_dim: int = 16
    losses: list = field(default_factory=list)

    @property
    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.Z, self.sigma_max)

    def predict(self, noisy, label, z, schedule):
        if self.label is not None and label != self.label:
            raise ValueError(f"denoiser trained for label {self.label!r}, got {label!r}")
        noisy = np.asarray(noisy, dtype=np.float64)
        # the embedding is keyed on the fraction of the schedule, not the raw index
        temb = step_embedding(z * self.Z / schedule.Z, self.Z, self.emb_dim)
        return forward(self.params, noisy[None], temb)[0]

    # -- checkpoints ------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "architecture": {"hidden": self.hidden, "emb_dim": self.emb_dim},
            "schedule": {"Z": self.Z, "sigma_max": self.sigma_max},
            "label": self.label,
            "params": [[k, list(self.params[k].shape)] for k in PARAM_NAMES],
        }
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        blob = b"".join(np.ascontiguousarray(self.params[k], dtype="<f4").tobytes() for k in PARAM_NAMES)
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + blob)

    @classmethod
    def load(cls, path) -> TinyDenoiser:
        with open(path, "rb") as f:
            data = f.read()
        if data[:8] != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        version, hlen = struct.unpack("<II", data[8:16])
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        off = 16 + hlen
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            if off + 4 * count > len(data):
                raise CheckpointError(f"{path}: weight blob is truncated")
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
            params[name] = arr.astype(np.float64).reshape(shape)
            off += 4 * count
        if off != len(data):
            raise CheckpointError(f"{path}: trailing or missing weight bytes")
        arch, sched = header["architecture"], header["schedule"]
        return cls(params, sched["Z"], sched["sigma_max"], header["label"], arch["hidden"], arch["emb_dim"])


def _draw_batch(clouds, idx, n_pts, schedule, rng):
    x0 = np.stack([c[rng.choice(len(c), size=n_pts, replace=len(c) < n_pts)] for c in (clouds[i] for i in idx)])
    z = rng.integers(1, schedule.Z + 1, size=len(idx))
    eps = rng.standard_normal(x0.shape)
    xz = schedule.alpha[z][:, None, None] * x0 + schedule.sigma[z][:, None, None] * eps
    return xz, z, eps


def train_tiny_denoiser(dataset, schedule: NoiseSchedule, hyper: TrainHyper | None = None,
                        rng: np.random.Generator | None = None, sigma_max: float | None = None,
                        log=None) -> TinyDenoiser:
    """Denoising score matching with Adam on the ground-truth renders of ``dataset``.

    ``losses`` on the returned model holds one record per epoch: the mean
    training loss and the loss on a fixed held-out draw (``eval``). Entry 0 is
    the untrained model.
    """
    hyper = hyper or TrainHyper()
    rng = rng or np.random.default_rng(0)
    if not dataset:
        raise ValueError("empty dataset")
    labels = {s.label for s in dataset}
    if len(labels) != 1:
        raise ValueError(f"all scenes must share one label, got {sorted(labels)}")
    label = labels.pop()
    if sigma_max is None:
        sigma_max = float(schedule.sigma[-1])
    clouds = [s.render() for s in dataset]
    params = init_params(hyper.hidden, hyper.emb_dim, rng)
    model = TinyDenoiser(params, schedule.Z, sigma_max, label, hyper.hidden, hyper.emb_dim)

    eval_idx = rng.integers(0, len(clouds), size=hyper.eval_samples)
    ex, ez, eeps = _draw_batch(clouds, eval_idx, hyper.points_per_sample, schedule, rng)
    etemb = step_embedding(ez, schedule.Z, hyper.emb_dim)

    def eval_loss(p):
        return float(np.mean((forward(p, ex, etemb) - eeps) ** 2))

    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    b1, b2, tiny = 0.9, 0.999, 1e-8
    t = 0
    stable = copy.deepcopy(params)
    model.losses.append({"epoch": 0, "train": eval_loss(params), "eval": eval_loss(params)})
    steps_per_epoch = max(1, len(clouds) // hyper.batch_size)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(clouds))
        batch_losses = []
        for s in range(steps_per_epoch):
            idx = order[(s * hyper.batch_size) % len(clouds):][:hyper.batch_size]
            if len(idx) < hyper.batch_size:
                idx = np.concatenate([idx, order[:hyper.batch_size - len(idx)]])
            xz, z, eps = _draw_batch(clouds, idx, hyper.points_per_sample, schedule, rng)
            loss, grads = loss_and_grads(params, xz, step_embedding(z, schedule.Z, hyper.emb_dim), eps)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}",
                                    TinyDenoiser(stable, schedule.Z, sigma_max, label, hyper.hidden, hyper.emb_dim))
            t += 1
            for k in params:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1 ** t)
                vhat = v[k] / (1 - b2 ** t)
                params[k] = params[k] - hyper.learning_rate * mhat / (np.sqrt(vhat) + tiny)
            batch_losses.append(loss)
        ev = eval_loss(params)
        if not np.isfinite(ev):
            raise TrainingError(f"eval loss diverged at epoch {epoch}",
                                TinyDenoiser(stable, schedule.Z, sigma_max, label, hyper.hidden, hyper.emb_dim))
        stable = copy.deepcopy(params)
        model.losses.append({"epoch": epoch, "train": float(np.mean(batch_losses)), "eval": ev})
        if log is not None and (epoch % 10 == 0 or epoch == hyper.epochs):
            log(f"epoch {epoch}: train {model.losses[-1]['train']:.4f} eval {ev:.4f}")
    return model


def hyper_to_json(h: TrainHyper) -> dict:
    return asdict(h)
