"""Resolution chromatography: per-resolution signal generation rates.

Average-pooling a diffused sample m times leaves the 2^m-times-downsampled
content at a *higher* SNR than the full-resolution process: each 2x pooling
halves the noise standard deviation while preserving the signal, so the SNR
gains a factor of 4 per level.  Matching a native low-resolution diffusion
therefore requires an earlier time tau_m with

    SNR(tau_m) = 4^m * SNR(t)

and an intensity rescale

    lambda_m(t) = 2^m / sqrt(1 + (4^m - 1) * alpha_t)

restoring unit total variance.  The *resolution chromatography* r_m(t) is
the normalized rate d(alpha_{tau_m})/dt at which level-m signal emerges; it
depends on the noise schedule only through alpha, so any schedule's profile
is the natural schedule's profile read at t* = -log(alpha_t).  On the
natural clock the closed form is

    r_m(t*) ~ 4^m e^{t*} / (e^{t*} + 4^m - 1)^2

normalized over m.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, natural_remap

__all__ = [
    "ChromatographyProfile",
    "time_adjust",
    "intensity_scale",
    "alpha_adjusted",
    "natural_chromatography",
    "chromatography",
    "chromatography_numeric",
]

DEFAULT_TIME_POINTS = 256


def alpha_adjusted(alpha_t, m: int):
    """alpha at the SNR-matched earlier time: 4^m a / ((4^m - 1) a + 1).

    Satisfies snr(alpha_adjusted(a, m)) = 4^m * snr(a) identically and
    agrees with alpha evaluated at ``time_adjust`` up to root-finder
    precision.
    """
    if m < 0:
        raise ValueError(f"resolution level must be non-negative, got {m}")
    a = np.asarray(alpha_t, dtype=float)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise ValueError(f"alpha_adjusted requires alpha in (0, 1), got {alpha_t}")
    if m == 0:
        out = a
    else:
        f = 4.0**m
        out = f * a / ((f - 1.0) * a + 1.0)
    return float(out) if np.isscalar(alpha_t) or out.ndim == 0 else out


def intensity_scale(alpha_t, m: int):
    """Rescale factor lambda restoring unit variance after m poolings.

    lambda = 2^m / sqrt(1 + (4^m - 1) alpha); ranges from 1 (alpha = 1,
    pure signal, pooling preserves intensity) to 2^m (alpha -> 0, pure
    noise, each pooling halves the standard deviation).
    """
    if m < 0:
        raise ValueError(f"resolution level must be non-negative, got {m}")
    a = np.asarray(alpha_t, dtype=float)
    if np.any(a <= 0.0) or np.any(a > 1.0):
        raise ValueError(f"intensity_scale requires alpha in (0, 1], got {alpha_t}")
    out = 2.0**m / np.sqrt(1.0 + (4.0**m - 1.0) * a)
    return float(out) if np.isscalar(alpha_t) or out.ndim == 0 else out


def time_adjust(schedule: NoiseSchedule, t: float, m: int) -> float:
    """Earlier time tau_m at which the schedule's SNR is 4^m * SNR(t).

    tau_0 = t, and tau_m decreases strictly with m.  Targets pushed past
    the schedule's clamped alpha range (only possible within ~4^m *
    ALPHA_EPS of the clean end) are clamped to the nearest achievable
    alpha.
    """
    if m == 0:
        return float(t)
    target = alpha_adjusted(schedule.alpha(t), m)
    lo, hi = schedule.alpha_range()
    return schedule.alpha_inverse(min(max(target, lo), hi))


def natural_chromatography(t_star, levels: int):
    """Per-level contribution fractions on the natural clock.

    Returns the normalized vector r_m(t*) for m = 0..levels-1; entries are
    non-negative and sum to 1.  ``t_star`` may be a scalar (returns shape
    ``(levels,)``) or an array of shape (n,) (returns ``(levels, n)``).
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    ts = np.asarray(t_star, dtype=float)
    if np.any(ts < 0.0):
        raise ValueError(f"t_star must be >= 0, got {t_star}")
    scalar = ts.ndim == 0
    e = np.exp(np.atleast_1d(ts))[None, :]
    four_m = (4.0 ** np.arange(levels))[:, None]
    r = four_m * e / (e + four_m - 1.0) ** 2
    r /= r.sum(axis=0, keepdims=True)
    return r[:, 0] if scalar else r


@dataclass
class ChromatographyProfile:
    """Sampled r_m(t) curves: ``values[m, i]`` is level m at ``times[i]``.

    Every column is non-negative and sums to 1.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.times.shape[0]:
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.times.shape[0]} time points"
            )
        if np.any(self.values < -1e-12):
            raise ValueError("chromatography values must be non-negative")
        sums = self.values.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("chromatography columns must sum to 1")

    @property
    def levels(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path) -> None:
        """Write rows ``t,r0,...,r{M-1}``, one per time point."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"r{m}" for m in range(self.levels)])
            for i, t in enumerate(self.times):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.values[:, i]])

    @classmethod
    def from_csv(cls, path) -> "ChromatographyProfile":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            levels = len(header) - 1
            times, cols = [], []
            for row in reader:
                times.append(float(row[0]))
                cols.append([float(v) for v in row[1 : levels + 1]])
        return cls(np.array(times), np.array(cols).T)


def default_time_grid(schedule: NoiseSchedule, n: int = DEFAULT_TIME_POINTS, margin: float = 0.0):
    """Uniform grid over the schedule domain, inset by ``margin`` on each end."""
    return np.linspace(schedule.t_min + margin, schedule.t_max - margin, n)


def chromatography(schedule: NoiseSchedule, times, levels: int) -> ChromatographyProfile:
    """Chromatography profile of any schedule via the natural-clock remap.

    Because r_m is invariant under monotone time reparameterization, the
    profile at t is the natural profile at t* = -log(alpha(t)).
    """
    times = np.asarray(times, dtype=float)
    t_star = natural_remap(schedule, times)
    return ChromatographyProfile(times, natural_chromatography(t_star, levels))


def chromatography_numeric(
    schedule: NoiseSchedule, times, levels: int, h: float | None = None
) -> ChromatographyProfile:
    """Direct finite-difference chromatography, as a cross-check.

    Differentiates alpha_{tau_m}(t) = alpha_adjusted(alpha(t), m) by
    central differences and normalizes the magnitudes per column (the
    forward-time derivative is negative; the stored fractions are the
    normalized rates, hence non-negative).  Agrees with
    ``chromatography`` to O(h^2).
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    times = np.asarray(times, dtype=float)
    if h is None:
        h = 1e-4 * (schedule.t_max - schedule.t_min)
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    if np.any(times - h < schedule.t_min) or np.any(times + h > schedule.t_max):
        raise ValueError(
            f"all times must sit at least h={h} inside the domain "
            f"[{schedule.t_min}, {schedule.t_max}]"
        )
    a_plus = np.asarray(schedule.alpha(times + h))
    a_minus = np.asarray(schedule.alpha(times - h))
    rates = np.empty((levels, times.shape[0]))
    for m in range(levels):
        rates[m] = np.abs(alpha_adjusted(a_plus, m) - alpha_adjusted(a_minus, m)) / (2.0 * h)
    rates /= rates.sum(axis=0, keepdims=True)
    return ChromatographyProfile(times, rates)
