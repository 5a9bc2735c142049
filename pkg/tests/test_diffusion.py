import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from assembloid.diffusion import (
    GaussianMixtureDenoiser,
    InterfaceViolation,
    MemorizedShapeDenoiser,
    ScheduleError,
    StepError,
    denoise_estimate,
    forward_noise,
    linear_schedule,
    sample,
)
from assembloid.geometry import chamfer


@given(st.integers(1, 5000), st.floats(1e-3, 1.0))
@settings(max_examples=100, deadline=None)
def test_schedule_invariant(Z, sigma_max):
    s = linear_schedule(Z, sigma_max)
    assert np.abs(s.alpha ** 2 + s.sigma ** 2 - 1).max() <= 1e-12
    assert (np.diff(s.sigma) > 0).all()
    assert s.sigma[-1] <= 1.0


def test_schedule_known_values():
    s = linear_schedule(100, 1.0)
    assert s.sigma[100] == 1.0 and s.alpha[100] == 0.0
    assert s.sigma[0] == 0.0 and s.alpha[0] == 1.0
    assert abs(linear_schedule(4, 1.0).sigma[2] ** 2 - 0.5) < 1e-15


def test_schedule_rejects_bad_parameters():
    with pytest.raises(ScheduleError):
        linear_schedule(10, 1.01)
    with pytest.raises(ScheduleError):
        linear_schedule(0, 0.5)


def test_forward_noise_zero_step_is_identity(rng):
    c = rng.standard_normal((9, 3))
    noisy, _ = forward_noise(c, linear_schedule(10), 0, rng)
    np.testing.assert_array_equal(noisy, c)


def test_forward_noise_deterministic_and_range_checked(rng):
    s = linear_schedule(10)
    c = rng.standard_normal((9, 3))
    a, _ = forward_noise(c, s, 3, np.random.default_rng(7))
    b, _ = forward_noise(c, s, 3, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(StepError):
        forward_noise(c, s, 11, rng)
    with pytest.raises(StepError):
        forward_noise(c, s, -1, rng)


def test_forward_noise_variance_monte_carlo(rng):
    s = linear_schedule(200, 0.99)
    z = 57
    c = rng.uniform(-1, 1, (100_000, 3))
    noisy, eps = forward_noise(c, s, z, rng)
    var = (noisy - s.alpha[z] * c).var()
    assert abs(var / s.sigma[z] ** 2 - 1) < 0.02
    np.testing.assert_allclose(noisy, s.alpha[z] * c + s.sigma[z] * eps, atol=1e-15)


def test_literal_memorized_returns_target_exactly(rng):
    target = rng.standard_normal((30, 3))
    s = linear_schedule(200)
    noisy, _ = forward_noise(target + 0.1, s, 2, rng)
    est = denoise_estimate(noisy, MemorizedShapeDenoiser(target), "chair", 2, s)
    assert np.abs(est - target).max() <= 1e-12


@pytest.mark.parametrize("mode", ["literal", "ddpm"])
def test_zero_noise_step_perfect_denoiser_is_identity(rng, mode):
    c = rng.standard_normal((10, 3))
    s = linear_schedule(10)
    est = denoise_estimate(c, MemorizedShapeDenoiser(c, mode=mode), "x", 0, s, mode)
    np.testing.assert_array_equal(est, c)


class _TrueNoise:
    def __init__(self, eps):
        self.eps = eps

    def predict(self, noisy, label, z, schedule):
        return self.eps


@given(st.integers(0, 2**32 - 1), st.integers(1, 199))
@settings(max_examples=50, deadline=None)
def test_ddpm_round_trip_with_true_noise(seed, z):
    r = np.random.default_rng(seed)
    s = linear_schedule(200, 0.99)
    c = r.standard_normal((20, 3))
    noisy, eps = forward_noise(c, s, z, r)
    est = denoise_estimate(noisy, _TrueNoise(eps), "c", z, s, "ddpm")
    assert np.abs(est - c).max() < 1e-9


def test_interface_violations(rng):
    s = linear_schedule(10)
    c = rng.standard_normal((10, 3))
    with pytest.raises(InterfaceViolation):
        denoise_estimate(c, _TrueNoise(np.zeros((9, 3))), "c", 1, s)
    with pytest.raises(InterfaceViolation):
        denoise_estimate(c, _TrueNoise(np.full((10, 3), np.inf)), "c", 1, s)


def test_blend_keeps_part_of_the_noise(rng):
    target = rng.standard_normal((10, 3))
    s = linear_schedule(200)
    noisy = target + 1.0
    for mode in ("literal", "ddpm"):
        est = denoise_estimate(noisy, MemorizedShapeDenoiser(target, mode, blend=0.25), "c", 5, s, mode)
        np.testing.assert_allclose(est, 0.75 * noisy + 0.25 * target, atol=1e-12)


# --- gaussian mixture against quadrature ---------------------------------------

def _quad_posterior_1d(x, a, s, mus, vs, ws):
    """E[x0 | x] for a 1-D mixture prior, by numerical integration."""
    lo = min(m - 12 * np.sqrt(v) for m, v in zip(mus, vs))
    hi = max(m + 12 * np.sqrt(v) for m, v in zip(mus, vs))
    pts = list(mus)

    def joint(x0):
        prior = sum(w * norm.pdf(x0, m, np.sqrt(v)) for m, v, w in zip(mus, vs, ws))
        return prior * norm.pdf(x, a * x0, s)

    num = integrate.quad(lambda t: t * joint(t), lo, hi, points=pts, epsabs=0, epsrel=1e-13, limit=500)[0]
    den = integrate.quad(joint, lo, hi, points=pts, epsabs=0, epsrel=1e-13, limit=500)[0]
    return num / den


@pytest.mark.parametrize("z", [1, 20, 150])
def test_single_component_prediction_matches_quadrature(z):
    s = linear_schedule(200, 0.99)
    a, sg = s.alpha[z], s.sigma[z]
    mu, v = np.array([0.3, -0.2, 0.1]), 0.04
    den = GaussianMixtureDenoiser(mu[None, :], v)
    x = np.array([[0.5, 0.1, -0.4], [-0.2, 0.0, 0.3]])
    pred = den.predict(x, "c", z, s)
    for i in range(2):
        for d in range(3):
            e0 = _quad_posterior_1d(x[i, d], a, sg, [mu[d]], [v], [1.0])
            assert abs(pred[i, d] - (x[i, d] - a * e0) / sg) < 1e-9


def test_two_component_posterior_matches_quadrature():
    # components differ along x only, so y and z reduce to a single Gaussian
    s = linear_schedule(200, 0.99)
    z = 40
    a, sg = s.alpha[z], s.sigma[z]
    means = np.array([[-0.3, 0.1, 0.0], [0.4, 0.1, 0.0]])
    den = GaussianMixtureDenoiser(means, 0.02, weights=[0.3, 0.7])
    x = np.array([[0.05, 0.2, -0.1]])
    post = den.posterior_mean(x, z, s)[0]
    assert abs(post[0] - _quad_posterior_1d(x[0, 0], a, sg, [-0.3, 0.4], [0.02, 0.02], [0.3, 0.7])) < 1e-9
    assert abs(post[1] - _quad_posterior_1d(x[0, 1], a, sg, [0.1], [0.02], [1.0])) < 1e-9


def test_joint_mixture_matches_brute_force(rng):
    s = linear_schedule(100)
    z = 30
    means = rng.standard_normal((3, 5, 3))
    vs = np.array([0.01, 0.02, 0.05])
    ws = np.array([0.2, 0.5, 0.3])
    x = rng.standard_normal((5, 3))
    a, sg = s.alpha[z], s.sigma[z]
    tot = a * a * vs + sg * sg
    like = ws * np.array([np.prod(norm.pdf(x, a * m, np.sqrt(t))) for m, t in zip(means, tot)])
    r = like / like.sum()
    post = sum(rk * (m + a * v / t * (x - a * m)) for rk, m, v, t in zip(r, means, vs, tot))
    np.testing.assert_allclose(GaussianMixtureDenoiser(means, vs, ws).posterior_mean(x, z, s), post, atol=1e-12)


def test_mixture_weight_validation():
    with pytest.raises(ValueError):
        GaussianMixtureDenoiser(np.zeros((2, 3)), 0.1, weights=[0.5, 0.6])


# --- sampling -------------------------------------------------------------------

def test_sample_single_gaussian_mean():
    s = linear_schedule(200, 0.99)
    den = GaussianMixtureDenoiser(np.zeros((1, 3)), 0.01)
    x = sample(den, s, "c", 1024, np.random.default_rng(0))
    assert np.linalg.norm(x.mean(axis=0)) < 0.05


def _reverse_chain_variance(s, v):
    """Exact per-coordinate variance of the sampler's output for a N(0, v) prior.

    With a single centred Gaussian the clean estimate is linear in ``x``, so
    every reverse step is a linear map plus independent noise.
    """
    a, sg = s.alpha, s.sigma
    V = 1.0
    for z in range(s.Z, 0, -1):
        k = a[z] * v / (a[z] ** 2 * v + sg[z] ** 2)
        beta = 1.0 - (a[z] / a[z - 1]) ** 2
        gain = (a[z - 1] * beta * k + (a[z] / a[z - 1]) * sg[z - 1] ** 2) / sg[z] ** 2
        V = gain ** 2 * V + sg[z - 1] ** 2 * beta / sg[z] ** 2
    return V


@pytest.mark.parametrize("Z", [50, 200])
def test_sample_variance_matches_linear_chain(Z):
    s = linear_schedule(Z, 0.99)
    den = GaussianMixtureDenoiser(np.zeros((1, 3)), 0.01)
    x = sample(den, s, "c", 20_000, np.random.default_rng(1))
    expected = _reverse_chain_variance(s, 0.01)
    # 60000 coordinates: the sample variance has relative sd about 0.6%
    assert abs(x.var() / expected - 1) < 0.03


def test_sample_deterministic():
    s = linear_schedule(50)
    den = GaussianMixtureDenoiser(np.zeros((1, 3)), 0.01)
    a = sample(den, s, "c", 64, np.random.default_rng(5))
    b = sample(den, s, "c", 64, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_sample_memorized_shape(rng):
    target = rng.uniform(-0.5, 0.5, (128, 3))
    x = sample(MemorizedShapeDenoiser(target, mode="ddpm"), linear_schedule(200), "c", 128, rng)
    assert chamfer(x, target) < 1e-3
