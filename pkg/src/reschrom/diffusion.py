"""Forward diffusion, deterministic DDIM sampling, and analytic denoisers.

The forward process interpolates signal and unit white noise,

    x_t = sqrt(alpha_t) x_0 + sqrt(1 - alpha_t) eps_t,

and the deterministic backward update reuses a noise prediction
eps(x_t, t):

    x_prev = sqrt(a_prev / a) x_t + (sqrt(1 - a_prev)
             - sqrt(a_prev / a) sqrt(1 - a)) eps(x_t, t).

Denoisers here are exact posterior-mean noise predictors for zero-mean
stationary Gaussian priors (per-frequency Wiener filters) or for
band-separable Gaussian priors (per-resolution-band gains), optionally
shifted by a fixed mean image.  They stand in for perfectly trained
networks, making every sampling experiment exactly checkable.

FFT conventions, used everywhere: unnormalized forward transform,
1/N^2 inverse (numpy's default), and PSD(f) = |FFT|^2 / N^2 for an
N x N grid.

Concurrency: denoisers are stateless after construction and safe to call
concurrently.  Monte Carlo batches ride the channel axis, one RNG stream
per channel, spawned from the root seed by stream index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import pyramid
from .schedule import NoiseSchedule, snr, snr_inverse

__all__ = [
    "Denoiser",
    "GaussianImageModel",
    "ConditionWeights",
    "forward",
    "posterior_expectation",
    "ddim_step",
    "sampling_times",
    "initial_noise",
    "ddim_trajectory",
    "ddim_sample",
    "wiener_denoiser",
    "compose_guidance",
    "guided_denoiser",
    "guidance_field",
    "heaviside",
    "prompt_switch_weights",
]


class Denoiser:
    """Noise-prediction contract: ``d(x, t[, condition]) -> eps`` grid.

    Wraps a stateless callable of (x, t); an optional table maps condition
    ids to alternative callables.  Output shape always equals input shape.
    """

    def __init__(self, fn: Callable, name: str = "denoiser", conditional: dict | None = None):
        self._fn = fn
        self._conditional = dict(conditional or {})
        self.name = name

    def __call__(self, x, t, condition=None):
        if condition is not None:
            if condition not in self._conditional:
                raise ValueError(f"{self.name}: unknown condition {condition!r}")
            return self._conditional[condition](x, t)
        return self._fn(x, t)

    def __repr__(self):
        return f"Denoiser({self.name!r})"


# ---------------------------------------------------------------------------
# forward / backward algebra
# ---------------------------------------------------------------------------

def forward(x0, t, noise, schedule: NoiseSchedule):
    """Diffuse x0 to time t with the given unit-variance noise field."""
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    a = schedule.alpha(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise


def posterior_expectation(x_t, eps_pred, alpha_t):
    """Reconstruct the expected clean signal from a noise prediction:

    E[x0 | x_t] = (x_t - sqrt(1 - alpha) eps) / sqrt(alpha).
    """
    if not 0.0 < alpha_t <= 1.0:
        raise ValueError(f"posterior_expectation requires alpha in (0, 1], got {alpha_t}")
    x_t = np.asarray(x_t, dtype=float)
    eps_pred = np.asarray(eps_pred, dtype=float)
    if x_t.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs eps {eps_pred.shape}")
    return (x_t - np.sqrt(1.0 - alpha_t) * eps_pred) / np.sqrt(alpha_t)


def _ddim_update(x_t, eps, a, a_prev):
    c = np.sqrt(a_prev / a)
    return c * x_t + (np.sqrt(1.0 - a_prev) - c * np.sqrt(1.0 - a)) * eps


def ddim_step(x_t, t, t_prev, denoiser: Denoiser, schedule: NoiseSchedule):
    """One deterministic backward step from t to the earlier t_prev."""
    if not t_prev < t:
        raise ValueError(f"ddim_step needs t_prev < t, got t_prev={t_prev}, t={t}")
    a = schedule.alpha(t)
    a_prev = schedule.alpha(t_prev)
    eps = denoiser(x_t, t)
    return _ddim_update(np.asarray(x_t, dtype=float), np.asarray(eps, dtype=float), a, a_prev)


def sampling_times(schedule: NoiseSchedule, steps: int, kind: str = "uniform") -> np.ndarray:
    """Backward time grid from t_max to t_min with ``steps`` steps.

    ``uniform`` spaces times evenly; ``logsnr`` spaces them evenly in
    log-SNR, which resolves every noise decade equally and markedly
    reduces the variance contraction of coarse DDIM grids.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind == "uniform":
        return np.linspace(schedule.t_max, schedule.t_min, steps + 1)
    if kind == "logsnr":
        lo = np.log(schedule.snr_at(schedule.t_max))
        hi = np.log(schedule.snr_at(schedule.t_min))
        targets = snr_inverse(np.exp(np.linspace(lo, hi, steps + 1)))
        a_lo, a_hi = schedule.alpha_range()  # guard roundtrip rounding
        ts = np.array([
            schedule.alpha_inverse(min(max(a, a_lo), a_hi)) for a in targets
        ])
        ts[0], ts[-1] = schedule.t_max, schedule.t_min
        return ts
    raise ValueError(f"unknown time grid kind {kind!r}; options: uniform, logsnr")


def initial_noise(side: int, seed: int, channels: int | None = None) -> np.ndarray:
    """Unit white noise at full resolution, one RNG stream per channel.

    Channel k always uses the k-th stream spawned from ``seed``, so a
    batch is reproducible given (seed, channels) and its first channel
    matches the channels=None single draw.
    """
    streams = np.random.SeedSequence(seed).spawn(channels or 1)
    fields = [np.random.default_rng(s).standard_normal((side, side)) for s in streams]
    if channels is None:
        return fields[0]
    return np.stack(fields, axis=-1)


def ddim_trajectory(denoiser: Denoiser, schedule: NoiseSchedule, x_init, times):
    """Generate the deterministic trajectory along a decreasing time grid.

    Yields (t, x_t, eps) at every grid time; eps is the prediction used to
    leave that time (None at the final state).
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x_init, dtype=float)
    for k in range(len(times) - 1):
        t, t_next = times[k], times[k + 1]
        eps = np.asarray(denoiser(x, t), dtype=float)
        yield t, x, eps
        x = _ddim_update(x, eps, schedule.alpha(t), schedule.alpha(t_next))
    yield times[-1], x, None


def ddim_sample(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    side: int,
    steps: int = 50,
    seed: int = 0,
    *,
    channels: int | None = None,
    time_grid: str = "uniform",
) -> np.ndarray:
    """Draw a sample (or channel batch) by running the full trajectory."""
    times = sampling_times(schedule, steps, time_grid)
    x = initial_noise(side, seed, channels)
    for _t, x, _eps in ddim_trajectory(denoiser, schedule, x, times):
        pass
    return x


# ---------------------------------------------------------------------------
# Gaussian image models and their exact denoisers
# ---------------------------------------------------------------------------

def _index_freqs(side: int) -> np.ndarray:
    return np.fft.fftfreq(side, d=1.0 / side)


@dataclass
class GaussianImageModel:
    """Zero-mean-plus-offset Gaussian prior over clean grids.

    Exactly one parameterization is set:

    * ``spectrum`` -- stationary prior, power S(f) >= 0 per 2D frequency
      bin (conjugate-symmetric layout, so samples are real);
    * ``band_sigmas`` -- band-separable prior: level m carries an
      independent residual field of standard deviation sigma_m at its own
      scale, the last level a free field at the coarsest scale.

    ``mean`` optionally shifts the prior by a fixed image (used to realize
    distinct conditions for guidance experiments).
    """

    side: int
    spectrum: np.ndarray | None = None
    band_sigmas: np.ndarray | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        if (self.spectrum is None) == (self.band_sigmas is None):
            raise ValueError("set exactly one of spectrum or band_sigmas")
        if self.spectrum is not None:
            self.spectrum = np.asarray(self.spectrum, dtype=float)
            if self.spectrum.shape != (self.side, self.side):
                raise ValueError(
                    f"spectrum shape {self.spectrum.shape} != ({self.side}, {self.side})"
                )
            if np.any(self.spectrum < 0) or not np.all(np.isfinite(self.spectrum)):
                raise ValueError("spectrum must be finite and non-negative")
        else:
            self.band_sigmas = np.asarray(self.band_sigmas, dtype=float)
            if self.band_sigmas.ndim != 1 or self.band_sigmas.size < 1:
                raise ValueError("band_sigmas must be a non-empty vector")
            if np.any(self.band_sigmas < 0):
                raise ValueError("band_sigmas must be non-negative")
            if self.band_sigmas.size > pyramid.max_levels(self.side):
                raise ValueError(
                    f"{self.band_sigmas.size} band levels exceed "
                    f"max {pyramid.max_levels(self.side)} for side {self.side}"
                )
        if self.mean is not None:
            self.mean = pyramid.validate_grid(self.mean)
            if self.mean.shape[0] != self.side:
                raise ValueError(
                    f"mean side {self.mean.shape[0]} != model side {self.side}"
                )

    # -- constructors --------------------------------------------------------
    @classmethod
    def power_law(cls, side: int, exponent: float = 2.0, f0: float = 1.0,
                  variance: float = 1.0) -> "GaussianImageModel":
        """Stationary prior with S(f) ~ 1 / (|f|^2 + f0^2)^(exponent/2),
        normalized to the requested pixel variance."""
        k = _index_freqs(side)
        r2 = k[:, None] ** 2 + k[None, :] ** 2
        s = (r2 + f0**2) ** (-exponent / 2.0)
        s *= variance / s.mean()
        return cls(side=side, spectrum=s)

    @classmethod
    def white(cls, side: int, variance: float = 1.0) -> "GaussianImageModel":
        return cls(side=side, spectrum=np.full((side, side), float(variance)))

    @classmethod
    def band_separable(cls, side: int, sigmas, mean=None) -> "GaussianImageModel":
        return cls(side=side, band_sigmas=np.asarray(sigmas, dtype=float), mean=mean)

    # -- basic descriptors -----------------------------------------------------
    @property
    def levels(self) -> int:
        if self.band_sigmas is None:
            raise ValueError("levels is defined for band-separable models only")
        return self.band_sigmas.size

    def band_variances(self) -> np.ndarray:
        """Full-resolution variance per band coordinate: 4^m sigma_m^2."""
        m = np.arange(self.levels)
        return 4.0**m * self.band_sigmas**2

    def with_mean(self, mean) -> "GaussianImageModel":
        return GaussianImageModel(
            side=self.side, spectrum=self.spectrum,
            band_sigmas=self.band_sigmas, mean=mean,
        )

    def downsampled(self) -> "GaussianImageModel":
        """The prior of 2x-pooled samples (band-separable models only:
        pooling drops the finest band and halves the side)."""
        if self.band_sigmas is None:
            raise ValueError("downsampled is defined for band-separable models only")
        if self.levels < 2:
            raise ValueError("cannot downsample a single-level model")
        mean = pyramid.downsample(self.mean) if self.mean is not None else None
        return GaussianImageModel(
            side=self.side // 2, band_sigmas=self.band_sigmas[1:], mean=mean
        )

    def pixel_variance(self) -> float:
        if self.spectrum is not None:
            return float(self.spectrum.mean())
        v = self.band_variances()
        m = np.arange(self.levels)
        frac = 4.0**-m - 4.0 ** -(m + 1)
        frac[-1] = 4.0 ** -(self.levels - 1)  # coarsest keeps its block means
        return float(np.sum(v * frac))

    # -- sampling ---------------------------------------------------------------
    def color(self, white: np.ndarray) -> np.ndarray:
        """Apply the prior's covariance square root to unit white noise."""
        white = np.asarray(white, dtype=float)
        if self.spectrum is not None:
            w = np.fft.fft2(white, axes=(0, 1))
            root = np.sqrt(self.spectrum)
            if white.ndim == 3:
                root = root[:, :, None]
            return np.fft.ifft2(w * root, axes=(0, 1)).real
        return _apply_band_gains(white, self.side, np.sqrt(self.band_variances()))

    def sample(self, seed: int, channels: int | None = None) -> np.ndarray:
        """Exact draw(s) from the prior; channel k uses RNG stream k."""
        x = self.color(initial_noise(self.side, seed, channels))
        if self.mean is not None:
            x = x + (self.mean if channels is None else self.mean[:, :, None])
        return x

    def expected_psd(self) -> np.ndarray:
        """Expected PSD per frequency bin, |FFT|^2 / N^2 convention."""
        if self.spectrum is not None:
            s = self.spectrum.copy()
        else:
            s = np.zeros((self.side, self.side))
            v = self.band_variances()
            w = [_block_mean_transfer(self.side, m) for m in range(self.levels)]
            w.append(np.zeros_like(w[0]))
            for m in range(self.levels - 1):
                s += v[m] * (w[m] - w[m + 1])
            s += v[-1] * w[self.levels - 1]
        if self.mean is not None:
            s = s + np.abs(np.fft.fft2(self.mean)) ** 2 / self.side**2
        return s


def _block_mean_transfer(side: int, m: int) -> np.ndarray:
    """Fourier diagonal of the scale-2^m block-mean projection (separable
    squared Dirichlet kernel per axis)."""
    block = 2**m
    f = _index_freqs(side)
    phase = np.pi * f * block / side
    base = np.pi * f / side
    with np.errstate(invalid="ignore", divide="ignore"):
        w = (np.sin(phase) / (block * np.sin(base))) ** 2
    w[f == 0] = 1.0
    return w[:, None] * w[None, :]


def _apply_band_gains(x: np.ndarray, side: int, gains: np.ndarray) -> np.ndarray:
    """Linear map sum_m g_m P_m where P_m are the resolution-band
    projections and the last gain acts on the whole coarsest block-mean
    subspace."""
    levels = len(gains)
    pooled = [np.asarray(x, dtype=float)]
    for _ in range(levels - 1):
        pooled.append(pyramid.downsample(pooled[-1]))
    coarse = []
    for k, p in enumerate(pooled):
        for _ in range(k):
            p = pyramid.upsample(p)
        coarse.append(p)
    out = gains[-1] * coarse[-1]
    for m in range(levels - 1):
        out = out + gains[m] * (coarse[m] - coarse[m + 1])
    return out


def _posterior_mean(model: GaussianImageModel, x, alpha: float) -> np.ndarray:
    """Exact E[x0 | x_t] under the model at signal level alpha."""
    x = np.asarray(x, dtype=float)
    y = x
    if model.mean is not None:
        mean = model.mean if x.ndim == model.mean.ndim else model.mean[:, :, None]
        y = x - np.sqrt(alpha) * mean
    if model.spectrum is not None:
        s = model.spectrum
        gain = np.sqrt(alpha) * s / (alpha * s + (1.0 - alpha))
        if y.ndim == 3:
            gain = gain[:, :, None]
        out = np.fft.ifft2(gain * np.fft.fft2(y, axes=(0, 1)), axes=(0, 1)).real
    else:
        v = model.band_variances()
        gains = np.sqrt(alpha) * v / (alpha * v + (1.0 - alpha))
        out = _apply_band_gains(y, model.side, gains)
    if model.mean is not None:
        out = out + mean
    return out


def band_probe_image(side: int, levels: int, seed: int, scale: float = 1.0,
                     ratio: float = 4.0) -> np.ndarray:
    """Random image whose resolution-band energies follow an exact ladder.

    Band m carries squared norm proportional to ratio^m (each band drawn
    white, projected, and renormalized); the block-mean remainder is zero.
    The total pixel variance is scale^2.  With ratio 4 the bands mirror
    how pooled noise-field energies scale across levels, which makes such
    an image a clean probe mean for guidance experiments.
    """
    if levels < 1 or levels > pyramid.max_levels(side) - 1:
        raise ValueError(f"levels={levels} invalid for side {side}")
    weights = ratio ** np.arange(levels)
    budget = side**2 * scale**2 * weights / weights.sum()
    out = np.zeros((side, side))
    for m, stream in enumerate(np.random.SeedSequence(seed).spawn(levels)):
        w = np.random.default_rng(stream).standard_normal((side, side))
        band = pyramid.band_decompose(w, levels).bands[m]
        norm = np.linalg.norm(band)
        if norm == 0.0:
            raise ValueError("degenerate band draw")
        out += band * (np.sqrt(budget[m]) / norm)
    return out


def wiener_denoiser(model: GaussianImageModel, schedule: NoiseSchedule,
                    name: str | None = None) -> Denoiser:
    """Exact posterior-mean noise predictor for a Gaussian prior.

    Per frequency (stationary models) the clean-signal estimate is
    X0(f) = sqrt(a) S / (a S + 1 - a) * X_t(f); band models use the same
    gain per resolution band.  The noise prediction then inverts the
    forward interpolation: eps = (x_t - sqrt(a) x0) / sqrt(1 - a).
    """

    def eps_fn(x, t):
        a = schedule.alpha(t)
        x0 = _posterior_mean(model, x, a)
        return (np.asarray(x, dtype=float) - np.sqrt(a) * x0) / np.sqrt(1.0 - a)

    kind = "spectrum" if model.spectrum is not None else "band"
    return Denoiser(eps_fn, name=name or f"wiener[{kind},side={model.side}]")


# ---------------------------------------------------------------------------
# guidance composition
# ---------------------------------------------------------------------------

@dataclass
class ConditionWeights:
    """Per-condition weight functions of time: [(condition_id, w(t)), ...]."""

    weights: list

    def __len__(self):
        return len(self.weights)

    def at(self, t: float) -> np.ndarray:
        return np.array([float(w(t)) for _cid, w in self.weights])


def compose_guidance(d_uncond: Denoiser, d_conds, weights: ConditionWeights, x, t):
    """Multi-condition guidance:

    eps_uncond + sum_i w_i(t) (eps_cond_i - eps_uncond).
    """
    if len(d_conds) != len(weights):
        raise ValueError(
            f"{len(d_conds)} conditional denoisers vs {len(weights)} weights"
        )
    base = np.asarray(d_uncond(x, t), dtype=float)
    out = base.copy()
    for (_cid, w), d in zip(weights.weights, d_conds):
        wt = float(w(t))
        if wt != 0.0:
            out += wt * (np.asarray(d(x, t), dtype=float) - base)
    return out


def guided_denoiser(d_uncond: Denoiser, d_conds, weights: ConditionWeights,
                    name: str = "guided") -> Denoiser:
    """Package a guidance composition as a plain denoiser."""
    return Denoiser(
        lambda x, t: compose_guidance(d_uncond, d_conds, weights, x, t), name=name
    )


def guidance_field(d_uncond: Denoiser, d_cond: Denoiser, x, t):
    """The guidance direction: conditional minus unconditional prediction."""
    a = np.asarray(d_cond(x, t), dtype=float)
    b = np.asarray(d_uncond(x, t), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def heaviside(x: float) -> float:
    """Unit step, left-continuous: H(x) = 1 for x > 0, else 0.

    H(0) = 0 so a switch threshold placed exactly at the sampling start
    leaves the run identical to a pure single-condition run.
    """
    return 1.0 if x > 0.0 else 0.0


def prompt_switch_weights(eta: float, t_total: float,
                          id_late="cond1", id_early="cond2") -> ConditionWeights:
    """Two-condition switch at t = eta * t_total.

    The early condition drives sampling while t > eta*T (the start of the
    backward pass, coarse content); the late condition takes over once
    t <= eta*T (fine content).  With H(0) = 0, eta = 0 keeps the early
    condition at every evaluated time t > 0 and eta = 1 keeps the late
    condition throughout, so both endpoints reduce exactly to
    single-condition runs.
    """
    thresh = eta * t_total
    return ConditionWeights(weights=[
        (id_late, lambda t: 1.0 - heaviside(t - thresh)),
        (id_early, lambda t: heaviside(t - thresh)),
    ])
