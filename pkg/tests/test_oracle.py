import numpy as np
import pytest

from viewx.bridge import save_tensor
from viewx.errors import ConfigError, DomainError
from viewx.oracle import (
    GaussianDenoiser,
    GaussianPrior,
    MixtureDenoiser,
    MixturePrior,
    closed_form_gaussian_flow,
    gaussian_posterior_mean,
    load_prior,
    make_denoiser,
    mixture_posterior_mean,
)
from viewx.rng import NoiseStream
from viewx.sampler import GuidanceInput, SamplerConfig, build_schedule, refine_video


class TestGaussianPosterior:
    def test_zero_noise_returns_observation(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(gaussian_posterior_mean(x, 0.0, GaussianPrior()), x)

    def test_pure_noise_limit_returns_mean(self):
        x = np.full((1, 1, 2, 2), 123.0)
        out = gaussian_posterior_mean(x, 1e12, GaussianPrior(mean=4.0, scale=1.0))
        np.testing.assert_allclose(out, 4.0, rtol=1e-6)

    def test_hand_value(self):
        out = gaussian_posterior_mean(np.array([2.0]), 1.0, GaussianPrior(mean=0.0, scale=1.0))
        np.testing.assert_allclose(out, 1.0)

    def test_interpolates_between_observation_and_mean(self):
        rng = np.random.default_rng(1)
        prior = GaussianPrior(mean=2.0, scale=0.7)
        x = rng.normal(size=64)
        for sigma in (0.01, 0.5, 3.0, 50.0):
            out = gaussian_posterior_mean(x, sigma, prior)
            lam = (out - prior.mean) / (x - prior.mean)
            assert np.all(lam >= 0) and np.all(lam <= 1)
            np.testing.assert_allclose(lam, lam[0], rtol=1e-9)

    def test_array_mean(self):
        mean = np.arange(4.0, dtype=np.float32).reshape(1, 1, 2, 2)
        x = np.zeros((1, 1, 2, 2), dtype=np.float32)
        out = gaussian_posterior_mean(x, 1e12, GaussianPrior(mean=mean, scale=1.0))
        np.testing.assert_allclose(out, mean, rtol=1e-5)

    def test_bad_scale(self):
        with pytest.raises(ConfigError):
            GaussianPrior(scale=0.0)


class TestMixturePosterior:
    def test_single_atom(self):
        atom = np.random.default_rng(2).normal(size=(1, 1, 2, 2))
        prior = MixturePrior(atoms=(atom,))
        for sigma in (0.1, 1.0, 100.0):
            out = mixture_posterior_mean(np.zeros_like(atom), sigma, prior)
            np.testing.assert_allclose(out, atom, rtol=1e-12)

    def test_symmetric_atoms_average(self):
        a = np.full((1, 1, 1, 1), 1.0)
        b = np.full((1, 1, 1, 1), 3.0)
        out = mixture_posterior_mean(np.full_like(a, 2.0), 1.0, MixturePrior(atoms=(a, b)))
        np.testing.assert_allclose(out, 2.0, rtol=1e-12)

    def test_hand_value(self):
        # atoms {0, 10}, x_t = 1, sigma = 1; softmax evaluated independently
        # at 50-digit precision: 10*exp(-40)/(1+exp(-40)).
        prior = MixturePrior(atoms=(np.array([0.0]), np.array([10.0])))
        out = mixture_posterior_mean(np.array([1.0]), 1.0, prior)
        np.testing.assert_allclose(out, 4.2483542552915890e-17, rtol=1e-12)

    def test_small_sigma_snaps_to_nearest_atom(self):
        rng = np.random.default_rng(3)
        atoms = tuple(rng.normal(size=(1, 2, 2, 2)) * 10 for _ in range(4))
        prior = MixturePrior(atoms=atoms)
        x = atoms[2] + 0.01
        out = mixture_posterior_mean(x, 1e-3, prior)
        np.testing.assert_allclose(out, atoms[2], rtol=1e-9)

    def test_no_underflow_at_tiny_sigma(self):
        atoms = (np.zeros((1, 1, 2, 2)), np.ones((1, 1, 2, 2)) * 1e3)
        out = mixture_posterior_mean(np.ones((1, 1, 2, 2)) * 900, 1e-6, MixturePrior(atoms=atoms))
        assert np.all(np.isfinite(out))

    def test_weights(self):
        prior = MixturePrior(atoms=(np.array([0.0]), np.array([1.0])), weights=(0.25, 0.75))
        out = mixture_posterior_mean(np.array([0.5]), 1e6, prior)
        np.testing.assert_allclose(out, 0.75, rtol=1e-6)

    def test_bad_weights(self):
        with pytest.raises(ConfigError):
            MixturePrior(atoms=(np.zeros(1),), weights=(0.5, 0.5))
        with pytest.raises(ConfigError):
            MixturePrior(atoms=(np.zeros(1), np.ones(1)), weights=(0.2, 0.2))

    def test_sigma_zero_rejected(self):
        with pytest.raises(DomainError):
            mixture_posterior_mean(np.zeros(1), 0.0, MixturePrior(atoms=(np.zeros(1),)))


class TestClosedFormFlow:
    def test_no_motion(self):
        x = np.random.default_rng(4).normal(size=(2, 2))
        np.testing.assert_array_equal(closed_form_gaussian_flow(x, 5.0, 5.0, GaussianPrior()), x)

    def test_mean_is_fixed_point(self):
        prior = GaussianPrior(mean=3.0, scale=2.0)
        x = np.full((2, 2), 3.0)
        out = closed_form_gaussian_flow(x, 80.0, 0.0, prior)
        np.testing.assert_allclose(out, 3.0)

    def test_hand_value(self):
        out = closed_form_gaussian_flow(np.array([80.0]), 80.0, 0.0, GaussianPrior())
        np.testing.assert_allclose(out, 0.9999218841540815, rtol=1e-12)

    def test_rejects_increasing_sigma(self):
        with pytest.raises(DomainError):
            closed_form_gaussian_flow(np.zeros(1), 1.0, 2.0, GaussianPrior())


class TestSamplerConsistency:
    def _euler_endpoint(self, steps, seed=0):
        shape = (2, 3, 8, 8)
        config = SamplerConfig(steps=steps, guided_steps=0, seed=seed,
                               sigma_min=0.002, sigma_max=80.0, rho=7.0)
        sigma_top = float(build_schedule(config).sigmas[-1])
        x_top = sigma_top * NoiseStream(seed).standard_normal(shape, dtype=np.float32)
        guidance = GuidanceInput(
            video=np.zeros(shape, dtype=np.float32),
            mask=np.zeros((2, 1, 8, 8), dtype=np.float32),
        )
        out = refine_video(guidance, GaussianDenoiser(), config)
        exact = closed_form_gaussian_flow(x_top, sigma_top, 0.0, GaussianPrior())
        return float(np.linalg.norm(out - exact) / np.linalg.norm(exact))

    def test_first_order_convergence_ordering(self):
        err_50 = self._euler_endpoint(50)
        err_100 = self._euler_endpoint(100)
        assert err_100 < err_50

    def test_posterior_mean_feeds_sampler(self):
        # A few steps with the oracle keep everything finite and shaped.
        out = refine_video(
            GuidanceInput(
                video=np.zeros((1, 1, 4, 4), dtype=np.float32),
                mask=np.zeros((1, 1, 4, 4), dtype=np.float32),
            ),
            MixtureDenoiser(MixturePrior(atoms=(np.zeros((1, 1, 4, 4)),))),
            SamplerConfig(steps=3, guided_steps=0, seed=5),
        )
        assert out.shape == (1, 1, 4, 4)


class TestPriorLoading:
    def test_gaussian_json(self, tmp_path):
        path = tmp_path / "prior.json"
        path.write_text('{"kind": "gaussian", "mean": 1.5, "scale": 2.0}')
        prior = load_prior(path)
        assert isinstance(prior, GaussianPrior)
        assert prior.mean == 1.5 and prior.scale == 2.0
        assert isinstance(make_denoiser(prior), GaussianDenoiser)

    def test_gaussian_tensor_mean(self, tmp_path):
        mean = np.arange(8, dtype=np.float32).reshape(2, 4)
        save_tensor(tmp_path / "mu.vxt", mean)
        (tmp_path / "prior.json").write_text('{"kind": "gaussian", "mean_tensor": "mu.vxt"}')
        prior = load_prior(tmp_path / "prior.json")
        np.testing.assert_array_equal(prior.mean, mean)

    def test_mixture_json(self, tmp_path):
        for name, value in (("a.vxt", 0.0), ("b.vxt", 1.0)):
            save_tensor(tmp_path / name, np.full((2, 2), value, dtype=np.float32))
        (tmp_path / "prior.json").write_text(
            '{"kind": "mixture", "atoms": ["a.vxt", "b.vxt"], "weights": [0.5, 0.5]}'
        )
        prior = load_prior(tmp_path / "prior.json")
        assert isinstance(prior, MixturePrior)
        assert len(prior.atoms) == 2
        assert isinstance(make_denoiser(prior), MixtureDenoiser)

    def test_unknown_kind(self, tmp_path):
        (tmp_path / "prior.json").write_text('{"kind": "cauchy"}')
        with pytest.raises(ConfigError):
            load_prior(tmp_path / "prior.json")
