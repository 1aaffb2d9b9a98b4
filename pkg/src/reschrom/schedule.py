"""Noise schedules and their SNR algebra.

A noise schedule is a strictly decreasing function ``alpha(t)`` on a closed
time interval, controlling the signal/noise mix of forward diffusion

    x_t = sqrt(alpha_t) * x_0 + sqrt(1 - alpha_t) * eps_t

and thereby the signal-to-noise ratio ``SNR = alpha / (1 - alpha)``.

Four families are provided:

* ``natural``   -- alpha(t) = exp(-t), the schedule induced by an
  Ornstein-Uhlenbeck relaxation (drift 0.5, unit diffusion) toward the unit
  Gaussian.  All chromatography computations remap onto this schedule.
* ``cosine``    -- the squared-cosine ramp with a small offset ``s``.
* ``linear``    -- the classic per-step variance ramp beta_0 .. beta_1 over
  N steps, composed into a continuous cumulative alpha.
* ``tabulated`` -- (t, alpha) knots, interpolated linearly in log-SNR.

Time is continuous: t in [0, 1] for cosine/linear/tabulated and
[0, t_max] (default 14, where exp(-14) ~ 8e-7) for the natural schedule.
Integer step indices k in {0..T} of discrete samplers map as t = k / T.

alpha values are clamped to [ALPHA_EPS, 1 - ALPHA_EPS] so that the SNR and
its inverse stay finite at the interval endpoints.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.optimize import brentq

ALPHA_EPS = 1e-9

__all__ = [
    "ALPHA_EPS",
    "NoiseSchedule",
    "NaturalSchedule",
    "CosineSchedule",
    "LinearSchedule",
    "TabulatedSchedule",
    "snr",
    "snr_inverse",
    "natural_remap",
    "remap_between",
    "load_tabulated_csv",
    "make_schedule",
]


def _clamp_alpha(a):
    return np.clip(a, ALPHA_EPS, 1.0 - ALPHA_EPS)


def snr(alpha):
    """Signal-to-noise ratio alpha / (1 - alpha). Requires 0 < alpha < 1."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise ValueError(f"snr requires alpha in (0, 1), got {alpha}")
    out = a / (1.0 - a)
    return float(out) if np.isscalar(alpha) or out.ndim == 0 else out

def snr_inverse(value):
    """Invert the SNR map: returns alpha = v / (1 + v). Requires v > 0."""
    v = np.asarray(value, dtype=float)
    if np.any(v <= 0.0):
        raise ValueError(f"snr_inverse requires a positive SNR, got {value}")
    out = v / (1.0 + v)
    return float(out) if np.isscalar(value) or out.ndim == 0 else out


class NoiseSchedule:
    """Base class: a strictly decreasing, clamped alpha(t) on [t_min, t_max].

    Subclasses implement ``_raw_alpha`` (vectorized, unclamped) and may
    override ``alpha_inverse`` with a closed form; the default inverse is a
    Brent root search, valid because alpha is monotone.
    """

    kind = "base"

    def __init__(self, t_min: float, t_max: float):
        if not t_max > t_min:
            raise ValueError(f"empty schedule domain [{t_min}, {t_max}]")
        self.t_min = float(t_min)
        self.t_max = float(t_max)

    # -- subclass surface ---------------------------------------------------
    def _raw_alpha(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- public surface -----------------------------------------------------
    @property
    def domain(self) -> tuple[float, float]:
        return (self.t_min, self.t_max)

    def _check_domain(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr < self.t_min) or np.any(arr > self.t_max):
            raise ValueError(
                f"time {t} outside the {self.kind} schedule domain "
                f"[{self.t_min}, {self.t_max}]"
            )
        return arr

    def alpha(self, t):
        """Clamped alpha(t); strictly decreasing on the domain interior."""
        arr = self._check_domain(t)
        out = _clamp_alpha(self._raw_alpha(arr))
        return float(out) if np.isscalar(t) or out.ndim == 0 else out

    def alpha_range(self) -> tuple[float, float]:
        """(alpha at t_max, alpha at t_min): the achievable clamped range."""
        return (self.alpha(self.t_max), self.alpha(self.t_min))

    def alpha_inverse(self, a: float) -> float:
        """Time t with alpha(t) = a; raises if a is outside the alpha range."""
        lo, hi = self.alpha_range()
        if not lo <= a <= hi:
            raise ValueError(
                f"alpha={a} outside the {self.kind} schedule range [{lo}, {hi}]"
            )
        if a == lo:
            return self.t_max
        if a == hi:
            return self.t_min
        return brentq(
            lambda t: self.alpha(t) - a,
            self.t_min,
            self.t_max,
            xtol=1e-14,
            rtol=8.9e-16,
        )

    def snr_at(self, t):
        return snr(self.alpha(t))

    def __repr__(self):
        return f"{type(self).__name__}(domain=[{self.t_min}, {self.t_max}])"


class NaturalSchedule(NoiseSchedule):
    """alpha(t) = exp(-t) on [0, t_max]; SNR = 1 / (e^t - 1)."""

    kind = "natural"

    def __init__(self, t_max: float = 14.0):
        super().__init__(0.0, t_max)

    def _raw_alpha(self, t):
        return np.exp(-t)

    def alpha_inverse(self, a):
        lo, hi = self.alpha_range()
        if not lo <= a <= hi:
            raise ValueError(f"alpha={a} outside the natural range [{lo}, {hi}]")
        return float(-np.log(a))


class CosineSchedule(NoiseSchedule):
    """Squared-cosine ramp on [0, 1] with offset ``s``:

    alpha(t) = cos^2(theta(t)) / cos^2(theta(0)),
    theta(t) = (t + s) / (1 + s) * pi / 2.
    """

    kind = "cosine"

    def __init__(self, offset: float = 0.008):
        if offset <= 0:
            raise ValueError(f"cosine offset must be positive, got {offset}")
        super().__init__(0.0, 1.0)
        self.offset = float(offset)
        self._theta0 = offset / (1.0 + offset) * np.pi / 2.0
        self._f0 = np.cos(self._theta0) ** 2

    def _theta(self, t):
        return (t + self.offset) / (1.0 + self.offset) * np.pi / 2.0

    def _raw_alpha(self, t):
        return np.cos(self._theta(t)) ** 2 / self._f0

    def alpha_inverse(self, a):
        lo, hi = self.alpha_range()
        if not lo <= a <= hi:
            raise ValueError(f"alpha={a} outside the cosine range [{lo}, {hi}]")
        theta = np.arccos(np.sqrt(a * self._f0))
        t = theta * 2.0 * (1.0 + self.offset) / np.pi - self.offset
        return float(min(max(t, self.t_min), self.t_max))


class LinearSchedule(NoiseSchedule):
    """Cumulative alpha of the per-step variance ramp beta_0 .. beta_1.

    The discrete product prod_k (1 - beta_k) over ``n_steps`` steps is
    composed into continuous time through the exact integral of
    log(1 - beta(u)), so alpha is smooth and matches the discrete
    cumulative product in the many-step limit.  The (1e-4, 2e-2, 1000)
    defaults are a configuration choice, not a derived quantity.
    """

    kind = "linear"

    def __init__(
        self,
        beta_start: float = 1e-4,
        beta_end: float = 2e-2,
        n_steps: int = 1000,
    ):
        if not 0 < beta_start < beta_end < 1:
            raise ValueError(
                f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
            )
        super().__init__(0.0, 1.0)
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        self.n_steps = int(n_steps)

    def _raw_alpha(self, t):
        b0, b1, n = self.beta_start, self.beta_end, self.n_steps
        beta_t = b0 + (b1 - b0) * t
        # antiderivative of log(1 - b) in b is -(1 - b) * (1 - log(1 - b))
        def prim(b):
            return (1.0 - b) * (1.0 - np.log1p(-b))
        log_alpha = n * (prim(beta_t) - prim(b0)) / (b1 - b0)
        return np.exp(log_alpha)


class TabulatedSchedule(NoiseSchedule):
    """Schedule defined by (t, alpha) knots, interpolated linearly in
    log-SNR against t.  Log-SNR interpolation keeps alpha monotone and
    well behaved over the many orders of magnitude the SNR spans.
    """

    kind = "tabulated"

    def __init__(self, knots):
        pts = [(float(t), float(a)) for t, a in knots]
        if len(pts) < 2:
            raise ValueError("tabulated schedule needs at least two knots")
        for i in range(1, len(pts)):
            if pts[i][0] <= pts[i - 1][0]:
                raise ValueError(
                    f"knot {i}: t={pts[i][0]} does not increase past t={pts[i - 1][0]}"
                )
            if pts[i][1] >= pts[i - 1][1]:
                raise ValueError(
                    f"knot {i}: alpha={pts[i][1]} does not decrease past "
                    f"alpha={pts[i - 1][1]}"
                )
        for i, (_, a) in enumerate(pts):
            if not 0.0 < a < 1.0:
                raise ValueError(f"knot {i}: alpha={a} outside (0, 1)")
        self.knots = pts
        ts = np.array([p[0] for p in pts])
        alphas = _clamp_alpha(np.array([p[1] for p in pts]))
        super().__init__(ts[0], ts[-1])
        self._ts = ts
        self._log_snr = np.log(alphas / (1.0 - alphas))  # strictly decreasing

    def _raw_alpha(self, t):
        ls = np.interp(t, self._ts, self._log_snr)
        return 1.0 / (1.0 + np.exp(-ls))

    def alpha_inverse(self, a):
        lo, hi = self.alpha_range()
        if not lo <= a <= hi:
            raise ValueError(f"alpha={a} outside the tabulated range [{lo}, {hi}]")
        target = np.log(a / (1.0 - a))
        # _log_snr decreases with t; np.interp wants an increasing axis
        t = np.interp(-target, -self._log_snr, self._ts)
        return float(t)


def load_tabulated_csv(path) -> TabulatedSchedule:
    """Load a tabulated schedule from CSV with header ``t,alpha``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["t", "alpha"]:
            raise ValueError(f"{path}: expected CSV header 't,alpha', got {header}")
        knots = []
        for row in reader:
            if not row:
                continue
            knots.append((float(row[0]), float(row[1])))
    return TabulatedSchedule(knots)


def make_schedule(kind: str, **kwargs) -> NoiseSchedule:
    """Construct a schedule by name: natural | cosine | linear | tabulated."""
    kinds = {
        "natural": NaturalSchedule,
        "cosine": CosineSchedule,
        "linear": LinearSchedule,
        "tabulated": TabulatedSchedule,
    }
    if kind not in kinds:
        raise ValueError(f"unknown schedule kind {kind!r}; options: {sorted(kinds)}")
    return kinds[kind](**kwargs)


def natural_remap(schedule: NoiseSchedule, t):
    """Map t onto the natural schedule's clock: t* = -log(alpha(t)).

    The natural schedule's alpha at t* equals ``schedule.alpha(t)``, so t*
    is where an exp(-t) process has the same signal content.
    """
    out = -np.log(schedule.alpha(t))
    return float(out) if np.isscalar(t) or np.ndim(out) == 0 else out


def remap_between(a: NoiseSchedule, b: NoiseSchedule, t: float) -> float:
    """Time t' with b.alpha(t') = a.alpha(t).

    Raises ValueError when a's alpha at t falls outside b's achievable
    range.  Monotonicity of both schedules makes t' unique.
    """
    return b.alpha_inverse(a.alpha(t))
