import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assembloid.datagen import ShapeSpec, generate_scene
from assembloid.diffusion import linear_schedule
from assembloid.tiny import (
    PARAM_NAMES,
    CheckpointError,
    TinyDenoiser,
    TrainHyper,
    TrainingError,
    forward,
    init_params,
    loss_and_grads,
    step_embedding,
    train_tiny_denoiser,
)


def _small_params(rng, hidden=8, emb=4):
    p = init_params(hidden, emb, rng)
    # non-zero values everywhere so every gradient path is exercised
    for k in ("b1", "b2", "b3", "Ws"):
        p[k] = rng.standard_normal(p[k].shape) * 0.1
    p["W3"] = rng.standard_normal(p["W3"].shape) * 0.3
    return p


def test_permutation_equivariance_is_exact(rng):
    p = _small_params(rng, 32, 16)
    x = rng.standard_normal((2, 50, 3))
    temb = step_embedding([3, 70], 200, 16)
    perm = rng.permutation(50)
    out = forward(p, x, temb)
    np.testing.assert_array_equal(forward(p, x[:, perm], temb), out[:, perm])


@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
@settings(max_examples=40, deadline=None)
def test_equivariance_for_any_size(seed, n):
    r = np.random.default_rng(seed)
    p = _small_params(r, 64, 16)
    x = r.standard_normal((1, n, 3))
    temb = step_embedding([r.integers(1, 201)], 200, 16)
    perm = r.permutation(n)
    np.testing.assert_array_equal(forward(p, x[:, perm], temb), forward(p, x, temb)[:, perm])


def test_gradients_match_central_differences(rng):
    p = _small_params(rng)
    x = rng.standard_normal((2, 7, 3))
    temb = step_embedding([5, 120], 200, 4)
    eps = rng.standard_normal(x.shape)
    _, grads = loss_and_grads(p, x, temb, eps)
    h = 1e-6
    checked = 0
    for name in PARAM_NAMES:
        flat = p[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_and_grads(p, x, temb, eps)[0]
            flat[i] = old - h
            down = loss_and_grads(p, x, temb, eps)[0]
            flat[i] = old
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[i]
            scale = max(abs(fd), abs(an))
            if scale < 1e-7:
                # dead relu units: both sides are zero
                assert abs(fd - an) < 1e-9
                continue
            assert abs(fd - an) / scale < 1e-4, (name, i, fd, an)
            checked += 1
    assert checked > 100


def test_checkpoint_round_trip(tmp_path, rng):
    p = {k: v.astype(np.float32).astype(np.float64) for k, v in _small_params(rng, 16, 8).items()}
    m = TinyDenoiser(p, 200, 0.99, "chair", 16, 8)
    m.save(tmp_path / "a.bin")
    back = TinyDenoiser.load(tmp_path / "a.bin")
    assert (back.Z, back.sigma_max, back.label, back.hidden, back.emb_dim) == (200, 0.99, "chair", 16, 8)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(back.params[k], p[k])
    back.save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    x = rng.standard_normal((30, 3))
    s = linear_schedule(200)
    np.testing.assert_array_equal(back.predict(x, "chair", 4, s), m.predict(x, "chair", 4, s))


def test_checkpoint_rejects_corruption(tmp_path, rng):
    m = TinyDenoiser(_small_params(rng), 200, 0.99, None, 8, 4)
    m.save(tmp_path / "a.bin")
    data = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError):
        TinyDenoiser.load(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(data[:-4])
    with pytest.raises(CheckpointError):
        TinyDenoiser.load(tmp_path / "short.bin")


def test_predict_rejects_other_labels(rng):
    m = TinyDenoiser(_small_params(rng), 200, 0.99, "chair", 8, 4)
    with pytest.raises(ValueError):
        m.predict(np.zeros((4, 3)), "table", 1, linear_schedule(200))


def test_training_reduces_loss_and_is_deterministic():
    scenes = [generate_scene(ShapeSpec(seed=k, points_per_part=32))[0] for k in range(8)]
    s = linear_schedule(200)
    hyper = TrainHyper(epochs=15, batch_size=4, hidden=32, points_per_sample=64, eval_samples=8)
    a = train_tiny_denoiser(scenes, s, hyper, np.random.default_rng(0))
    b = train_tiny_denoiser(scenes, s, hyper, np.random.default_rng(0))
    assert len(a.losses) == 16
    assert a.losses[-1]["eval"] < a.losses[0]["eval"]
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_training_input_validation():
    chair = generate_scene(ShapeSpec(family="chair", points_per_part=16))[0]
    table = generate_scene(ShapeSpec(family="table", points_per_part=16))[0]
    with pytest.raises(ValueError):
        train_tiny_denoiser([], linear_schedule(10))
    with pytest.raises(ValueError):
        train_tiny_denoiser([chair, table], linear_schedule(10))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_stable_model():
    scenes = [generate_scene(ShapeSpec(seed=k, points_per_part=16))[0] for k in range(4)]
    hyper = TrainHyper(learning_rate=1e200, epochs=5, batch_size=2, hidden=8, emb_dim=4,
                       points_per_sample=16, eval_samples=2)
    with pytest.raises(TrainingError) as info:
        train_tiny_denoiser(scenes, linear_schedule(50), hyper, np.random.default_rng(0))
    assert isinstance(info.value.last_stable, TinyDenoiser)
