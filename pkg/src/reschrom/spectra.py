"""Power-spectral-density instrumentation.

PSD convention (declared once, in the diffusion module, used everywhere):
unnormalized forward FFT, PSD(f) = |FFT|^2 / N^2 for an N x N grid, so a
unit-variance white field has flat expected PSD 1 and the PSD bins sum to
the sum of squared pixels (Parseval).

Radial reduction bins by integer-rounded Euclidean radius in
frequency-index units; DC is bin 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .diffusion import (
    GaussianImageModel,
    ddim_trajectory,
    initial_noise,
    posterior_expectation,
    sampling_times,
    wiener_denoiser,
)
from .schedule import NoiseSchedule

__all__ = [
    "RadialPSD",
    "psd2d",
    "radial_average",
    "spectral_centroid",
    "change_psd_trajectory",
    "write_radial_psd_csv",
]


def psd2d(g: np.ndarray) -> np.ndarray:
    """|FFT(g)|^2 / N^2 per frequency bin; channels spectra are averaged."""
    g = np.asarray(g, dtype=float)
    side = g.shape[0]
    if g.ndim not in (2, 3) or g.shape[1] != side or side & (side - 1) != 0:
        raise ValueError(f"psd2d needs a square power-of-two grid, got {g.shape}")
    p = np.abs(np.fft.fft2(g, axes=(0, 1))) ** 2 / side**2
    if g.ndim == 3:
        p = p.mean(axis=2)
    return p


@dataclass
class RadialPSD:
    """Radially averaged power: mean power per integer frequency radius."""

    freqs: np.ndarray
    power: np.ndarray
    n_samples: int = 1

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("radial frequencies must be strictly increasing")
        if np.any(self.power < 0):
            raise ValueError("powers must be non-negative")


def _radius_map(side: int) -> np.ndarray:
    k = np.fft.fftfreq(side, d=1.0 / side)
    return np.rint(np.hypot(k[:, None], k[None, :])).astype(int)


def radial_average(powers: np.ndarray, n_samples: int = 1) -> RadialPSD:
    """Reduce a 2D power grid to mean power per integer radius."""
    powers = np.asarray(powers, dtype=float)
    r = _radius_map(powers.shape[0]).ravel()
    p = powers.ravel()
    sums = np.bincount(r, weights=p)
    counts = np.bincount(r)
    keep = counts > 0
    return RadialPSD(
        freqs=np.nonzero(keep)[0].astype(float),
        power=sums[keep] / counts[keep],
        n_samples=n_samples,
    )


def spectral_centroid(rpsd: RadialPSD) -> float:
    """Power-weighted mean radius of a radial PSD."""
    total = rpsd.power.sum()
    if total <= 0:
        raise ValueError("spectral centroid of an all-zero PSD is undefined")
    return float((rpsd.freqs * rpsd.power).sum() / total)


def change_psd_trajectory(
    model: GaussianImageModel,
    schedule: NoiseSchedule,
    steps: int = 50,
    n_samples: int = 500,
    seed: int = 0,
    *,
    time_grid: str = "uniform",
):
    """Radial PSDs of the change in the expected clean signal.

    Runs ``n_samples`` deterministic trajectories (independent RNG streams
    on the channel axis) with the model's exact denoiser, forms the
    difference of posterior expectations between consecutive sampling
    times, and averages the PSD across samples.  Returns a list of
    (midpoint time, RadialPSD), one per consecutive pair, in sampling
    order (decreasing t).
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    denoiser = wiener_denoiser(model, schedule)
    times = sampling_times(schedule, steps, time_grid)
    x0_prev = None
    t_prev = None
    out = []
    x = initial_noise(model.side, seed, channels=n_samples)
    for t, state, eps in ddim_trajectory(denoiser, schedule, x, times):
        if eps is None:
            break
        x0 = posterior_expectation(state, eps, schedule.alpha(t))
        if x0_prev is not None:
            delta = x0 - x0_prev
            out.append((
                0.5 * (t_prev + t),
                radial_average(psd2d(delta), n_samples=n_samples),
            ))
        x0_prev, t_prev = x0, t
    return out


def write_radial_psd_csv(path, entries) -> None:
    """Long-form CSV ``t,r,power`` for a list of (time, RadialPSD)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "r", "power"])
        for t, rp in entries:
            for f, p in zip(rp.freqs, rp.power):
                writer.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
