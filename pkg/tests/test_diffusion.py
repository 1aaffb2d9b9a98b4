"""Forward/backward algebra, Wiener denoisers, and guidance composition."""

import numpy as np
import pytest

from reschrom import (
    ConditionWeights,
    Denoiser,
    GaussianImageModel,
    compose_guidance,
    ddim_sample,
    ddim_step,
    forward,
    guidance_field,
    guided_denoiser,
    heaviside,
    initial_noise,
    posterior_expectation,
    prompt_switch_weights,
    sampling_times,
    wiener_denoiser,
)
from reschrom.diffusion import band_probe_image


class TestForward:
    def test_clean_end_returns_x0(self, natural):
        x0 = np.random.default_rng(0).standard_normal((8, 8))
        out = forward(x0, 0.0, np.zeros((8, 8)), natural)
        np.testing.assert_allclose(out, x0, rtol=0, atol=1e-4)  # alpha clamp only

    def test_zero_signal(self, natural):
        noise = np.random.default_rng(1).standard_normal((8, 8))
        t = 2.0
        out = forward(np.zeros((8, 8)), t, noise, natural)
        a = natural.alpha(t)
        np.testing.assert_allclose(out, np.sqrt(1 - a) * noise, rtol=1e-14)

    def test_known_mix(self, natural):
        # alpha = 0.64: coefficients 0.8 and 0.6
        t = natural.alpha_inverse(0.64)
        out = forward(np.ones((4, 4)), t, np.ones((4, 4)), natural)
        np.testing.assert_allclose(out, 1.4, rtol=0, atol=1e-12)

    def test_shape_mismatch(self, natural):
        with pytest.raises(ValueError):
            forward(np.ones((4, 4)), 0.5, np.ones((8, 8)), natural)


class TestPosteriorExpectation:
    def test_exact_noise_recovers_signal(self, natural):
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((16, 16))
        eps = rng.standard_normal((16, 16))
        t = 1.3
        x_t = forward(x0, t, eps, natural)
        back = posterior_expectation(x_t, eps, natural.alpha(t))
        np.testing.assert_allclose(back, x0, rtol=0, atol=1e-10)

    def test_alpha_one_identity(self):
        x_t = np.random.default_rng(3).standard_normal((4, 4))
        np.testing.assert_array_equal(posterior_expectation(x_t, np.ones((4, 4)), 1.0), x_t)

    def test_affine_formula(self):
        rng = np.random.default_rng(4)
        x_t = rng.standard_normal((8, 8))
        eps = rng.standard_normal((8, 8))
        got = posterior_expectation(x_t, eps, 0.25)
        np.testing.assert_allclose(got, (x_t - np.sqrt(0.75) * eps) / 0.5, rtol=1e-14)

    def test_forward_inverts(self, natural):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x0 = rng.standard_normal((8, 8))
            eps = rng.standard_normal((8, 8))
            t = rng.uniform(0.3, 13.0)
            x_t = forward(x0, t, eps, natural)
            x0_hat = posterior_expectation(x_t, eps, natural.alpha(t))
            np.testing.assert_allclose(x0_hat, x0, rtol=0, atol=1e-10)

    def test_domain(self):
        with pytest.raises(ValueError):
            posterior_expectation(np.ones((4, 4)), np.ones((4, 4)), 0.0)


class TestDdimStep:
    def test_equal_alpha_is_identity(self, natural):
        # a step that does not change alpha must not change x
        x = np.random.default_rng(6).standard_normal((8, 8))
        d = Denoiser(lambda g, t: np.ones_like(g))
        a = natural.alpha(2.0)
        from reschrom.diffusion import _ddim_update

        np.testing.assert_allclose(_ddim_update(x, np.ones_like(x), a, a), x, rtol=1e-14)

    def test_exact_noise_step_to_clean(self, natural):
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal((8, 8))
        eps = rng.standard_normal((8, 8))
        t = 3.0
        x_t = forward(x0, t, eps, natural)
        d = Denoiser(lambda g, tt: eps)
        out = ddim_step(x_t, t, 0.0, d, natural)
        np.testing.assert_allclose(out, x0, rtol=0, atol=1e-4)  # alpha(0) clamp

    def test_ordering_enforced(self, natural):
        d = Denoiser(lambda g, t: g)
        with pytest.raises(ValueError):
            ddim_step(np.ones((4, 4)), 1.0, 2.0, d, natural)

    def test_trajectory_deterministic(self, natural):
        model = GaussianImageModel.power_law(16)
        den = wiener_denoiser(model, natural)
        a = ddim_sample(den, natural, 16, steps=20, seed=42)
        b = ddim_sample(den, natural, 16, steps=20, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_sample_covariance_tracks_model(self, cosine):
        # radially averaged output PSD vs the model spectrum, 500 runs;
        # the tolerance covers the O(1/steps) DDIM contraction (~2% at
        # 400 steps) plus per-bin Monte Carlo noise
        from reschrom import psd2d, radial_average

        model = GaussianImageModel.power_law(16, variance=1.0)
        den = wiener_denoiser(model, cosine)
        out = ddim_sample(den, cosine, 16, steps=400, seed=0, channels=500,
                          time_grid="logsnr")
        got = radial_average(psd2d(out))
        want = radial_average(model.expected_psd())
        np.testing.assert_allclose(got.power, want.power, rtol=0.08)


class TestInitialNoise:
    def test_reproducible_streams(self):
        a = initial_noise(8, seed=1, channels=4)
        b = initial_noise(8, seed=1, channels=4)
        np.testing.assert_array_equal(a, b)

    def test_first_channel_matches_single(self):
        single = initial_noise(8, seed=2)
        batch = initial_noise(8, seed=2, channels=3)
        np.testing.assert_array_equal(batch[:, :, 0], single)

    def test_streams_differ(self):
        batch = initial_noise(8, seed=3, channels=2)
        assert not np.array_equal(batch[:, :, 0], batch[:, :, 1])


class TestSamplingTimes:
    def test_uniform_grid(self, natural):
        ts = sampling_times(natural, 50)
        assert len(ts) == 51
        assert ts[0] == natural.t_max and ts[-1] == natural.t_min
        np.testing.assert_allclose(np.diff(ts), -natural.t_max / 50, rtol=1e-12)

    def test_logsnr_grid_monotone(self, all_schedules):
        for s in all_schedules.values():
            ts = sampling_times(s, 30, kind="logsnr")
            assert ts[0] == s.t_max and ts[-1] == s.t_min
            assert np.all(np.diff(ts) < 0)

    def test_bad_kind(self, natural):
        with pytest.raises(ValueError):
            sampling_times(natural, 10, kind="quadratic")


class TestGaussianModels:
    def test_power_law_unit_variance(self):
        model = GaussianImageModel.power_law(32, variance=1.0)
        assert abs(model.pixel_variance() - 1.0) < 1e-12
        x = model.sample(seed=0, channels=400)
        assert abs(x.var() - 1.0) < 0.05

    def test_band_model_sampling_variance(self):
        model = GaussianImageModel.band_separable(16, [1.0, 1.0, 1.0])
        x = model.sample(seed=1, channels=800)
        np.testing.assert_allclose(x.var(), model.pixel_variance(), rtol=0.05)

    def test_expected_psd_matches_monte_carlo(self):
        for model in (
            GaussianImageModel.power_law(16, variance=2.0),
            GaussianImageModel.band_separable(16, [1.0, 0.5, 2.0]),
        ):
            from reschrom import psd2d

            x = model.sample(seed=2, channels=3000)
            got = psd2d(x)
            np.testing.assert_allclose(got, model.expected_psd(), rtol=0.15, atol=1e-3)

    def test_exactly_one_parameterization(self):
        with pytest.raises(ValueError):
            GaussianImageModel(side=8)
        with pytest.raises(ValueError):
            GaussianImageModel(side=8, spectrum=np.ones((8, 8)), band_sigmas=np.ones(2))

    def test_downsampled_band_model(self):
        model = GaussianImageModel.band_separable(16, [1.0, 2.0, 3.0])
        sub = model.downsampled()
        assert sub.side == 8
        np.testing.assert_array_equal(sub.band_sigmas, [2.0, 3.0])
        with pytest.raises(ValueError):
            GaussianImageModel.power_law(16).downsampled()


class TestWienerDenoiser:
    def test_zero_spectrum_pure_noise(self, natural):
        model = GaussianImageModel(side=8, spectrum=np.zeros((8, 8)))
        den = wiener_denoiser(model, natural)
        x = np.random.default_rng(8).standard_normal((8, 8))
        t = 2.0
        a = natural.alpha(t)
        np.testing.assert_allclose(den(x, t), x / np.sqrt(1 - a), rtol=1e-12)

    def test_huge_spectrum_passes_signal(self, natural):
        # infinite-SNR bins reproduce x_t / sqrt(alpha) as the signal estimate
        s = np.full((8, 8), 1e14)
        model = GaussianImageModel(side=8, spectrum=s)
        den = wiener_denoiser(model, natural)
        x = np.random.default_rng(9).standard_normal((8, 8))
        t = 1.0
        a = natural.alpha(t)
        x0 = posterior_expectation(x, den(x, t), a)
        np.testing.assert_allclose(x0, x / np.sqrt(a), rtol=1e-9)

    def test_empirical_mse_matches_analytic(self, natural):
        model = GaussianImageModel.power_law(16, variance=1.0)
        t = natural.alpha_inverse(0.5)
        n = 2000
        x0 = model.sample(seed=10, channels=n)
        eps = initial_noise(16, seed=11, channels=n)
        x_t = forward(x0, t, eps, natural)
        den = wiener_denoiser(model, natural)
        pred = den(x_t, t)
        mse = np.mean(np.sum((pred - eps) ** 2, axis=(0, 1)))
        s = model.spectrum
        analytic = np.sum(0.5 * s / (0.5 * s + 0.5))
        np.testing.assert_allclose(mse, analytic, rtol=0.03)

    def test_per_frequency_regression_recovers_gains(self, natural):
        # brute-force conditional expectation: regress X0(f) on X_t(f)
        model = GaussianImageModel.power_law(8, variance=1.0)
        t = natural.alpha_inverse(0.3)
        a = 0.3
        n = 4000
        x0 = model.sample(seed=12, channels=n)
        eps = initial_noise(8, seed=13, channels=n)
        x_t = forward(x0, t, eps, natural)
        f0 = np.fft.fft2(x0, axes=(0, 1))
        ft = np.fft.fft2(x_t, axes=(0, 1))
        num = np.mean(f0 * np.conj(ft), axis=2).real
        den_ = np.mean(np.abs(ft) ** 2, axis=2)
        fitted = num / den_
        s = model.spectrum
        wiener_gain = np.sqrt(a) * s / (a * s + 1 - a)
        np.testing.assert_allclose(fitted, wiener_gain, rtol=0, atol=0.08)

    def test_mean_shift_handled(self, natural):
        base = GaussianImageModel.band_separable(8, [1.0, 1.0])
        mean = np.full((8, 8), 2.0)
        cond = base.with_mean(mean)
        den = wiener_denoiser(cond, natural)
        t = 1.0
        a = natural.alpha(t)
        # feeding the pure mean diffused with zero noise: signal estimate is
        # pulled toward the mean, noise prediction stays finite
        x = np.sqrt(a) * mean
        eps = den(x, t)
        x0 = posterior_expectation(x, eps, a)
        np.testing.assert_allclose(x0, mean, rtol=0, atol=1e-9)


class TestGuidance:
    def _denoisers(self, natural):
        base = GaussianImageModel.band_separable(8, [1.0, 1.0])
        mu = np.random.default_rng(14).standard_normal((8, 8))
        d_u = wiener_denoiser(base, natural, name="u")
        d_c = wiener_denoiser(base.with_mean(mu), natural, name="c")
        return d_u, d_c

    def test_weight_one_is_conditional(self, natural):
        d_u, d_c = self._denoisers(natural)
        x = np.random.default_rng(15).standard_normal((8, 8))
        w = ConditionWeights([("c", lambda t: 1.0)])
        np.testing.assert_allclose(
            compose_guidance(d_u, [d_c], w, x, 1.0), d_c(x, 1.0), rtol=1e-12
        )

    def test_weight_zero_is_unconditional(self, natural):
        d_u, d_c = self._denoisers(natural)
        x = np.random.default_rng(16).standard_normal((8, 8))
        w = ConditionWeights([("c", lambda t: 0.0)])
        np.testing.assert_array_equal(compose_guidance(d_u, [d_c], w, x, 1.0), d_u(x, 1.0))

    def test_count_mismatch(self, natural):
        d_u, d_c = self._denoisers(natural)
        w = ConditionWeights([("a", lambda t: 1.0), ("b", lambda t: 1.0)])
        with pytest.raises(ValueError):
            compose_guidance(d_u, [d_c], w, np.ones((8, 8)), 1.0)

    def test_heaviside_switch_exact(self, natural):
        d_u, d_c = self._denoisers(natural)
        d_c2 = Denoiser(lambda x, t: -d_c(x, t), name="c2")
        eta, t_total = 0.4, natural.t_max
        w = prompt_switch_weights(eta, t_total)
        x = np.random.default_rng(17).standard_normal((8, 8))
        t_hi = eta * t_total + 0.5  # early phase: second condition active
        np.testing.assert_allclose(
            compose_guidance(d_u, [d_c, d_c2], w, x, t_hi),
            d_u(x, t_hi) + (d_c2(x, t_hi) - d_u(x, t_hi)),
            rtol=1e-12,
        )
        t_lo = eta * t_total - 0.5  # late phase: first condition active
        np.testing.assert_allclose(
            compose_guidance(d_u, [d_c, d_c2], w, x, t_lo),
            d_u(x, t_lo) + (d_c(x, t_lo) - d_u(x, t_lo)),
            rtol=1e-12,
        )

    def test_heaviside_convention(self):
        assert heaviside(1e-12) == 1.0
        assert heaviside(0.0) == 0.0
        assert heaviside(-1e-12) == 0.0

    def test_guidance_field_zero_for_identical(self, natural):
        d_u, _ = self._denoisers(natural)
        x = np.random.default_rng(18).standard_normal((8, 8))
        np.testing.assert_array_equal(guidance_field(d_u, d_u, x, 1.0), np.zeros((8, 8)))

    def test_guidance_energy_concentrates_in_differing_band(self, natural):
        # conditions differing in a single frequency band: the guidance
        # lives (almost) entirely there
        side = 16
        k = np.fft.fftfreq(side, d=1.0 / side)
        r = np.hypot(k[:, None], k[None, :])
        s_base = np.ones((side, side))
        s_cond = s_base.copy()
        ring = (r >= 4) & (r < 6)
        s_cond[ring] = 30.0
        d_u = wiener_denoiser(GaussianImageModel(side=side, spectrum=s_base), natural)
        d_c = wiener_denoiser(GaussianImageModel(side=side, spectrum=s_cond), natural)
        x = np.random.default_rng(19).standard_normal((side, side))
        t = natural.alpha_inverse(0.5)
        g = guidance_field(d_u, d_c, x, t)
        p = np.abs(np.fft.fft2(g)) ** 2
        frac = p[ring].sum() / p.sum()
        assert frac > 0.95

    def test_guided_denoiser_wraps(self, natural):
        d_u, d_c = self._denoisers(natural)
        w = ConditionWeights([("c", lambda t: 2.0)])
        g = guided_denoiser(d_u, [d_c], w)
        x = np.random.default_rng(20).standard_normal((8, 8))
        np.testing.assert_array_equal(g(x, 1.0), compose_guidance(d_u, [d_c], w, x, 1.0))


class TestDenoiserContract:
    def test_condition_routing(self):
        d = Denoiser(
            lambda x, t: x,
            name="routed",
            conditional={"neg": lambda x, t: -x},
        )
        x = np.ones((4, 4))
        np.testing.assert_array_equal(d(x, 0.5), x)
        np.testing.assert_array_equal(d(x, 0.5, condition="neg"), -x)
        with pytest.raises(ValueError):
            d(x, 0.5, condition="missing")


class TestBandProbeImage:
    def test_energy_ladder(self):
        from reschrom import band_decompose, band_energies

        img = band_probe_image(32, 4, seed=0)
        e = band_energies(band_decompose(img, 4))
        np.testing.assert_allclose(e[1:] / e[:-1], 4.0, rtol=1e-12)
        np.testing.assert_allclose(np.mean(img**2), 1.0, rtol=1e-12)
