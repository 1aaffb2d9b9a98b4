"""Multi-resolution grid operators: 2x average-pool down, nearest-neighbor up.

Grids are float64 numpy arrays of shape (side, side) or
(side, side, channels) with a power-of-two side; all operators act on the
two leading spatial axes and map channels independently.  The channel axis
doubles as a batch axis for vectorized Monte Carlo work.

With D the 2x2 block mean and U nearest-neighbor replication, D U = I
exactly while U D is the orthogonal projection onto block-constant grids.
Iterating the projections yields mutually orthogonal resolution bands

    band_m = (U^m D^m - U^{m+1} D^{m+1}) g

which telescope back to g together with the final block-mean remainder.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "downsample",
    "upsample",
    "coarse_project",
    "BandStack",
    "band_decompose",
    "band_energies",
    "band_energy_curves",
    "measured_chromatography",
    "max_levels",
    "validate_grid",
    "write_grid",
    "read_grid",
    "write_band_energies_csv",
]

GRID_MAGIC = b"RCG1"


def validate_grid(g: np.ndarray) -> np.ndarray:
    """Check the power-of-two square-grid contract and return g as float64."""
    g = np.asarray(g, dtype=float)
    if g.ndim not in (2, 3):
        raise ValueError(f"grid must be 2D or 3D (side, side[, channels]), got shape {g.shape}")
    side = g.shape[0]
    if g.shape[1] != side:
        raise ValueError(f"grid must be square, got shape {g.shape}")
    if side < 1 or side & (side - 1) != 0:
        raise ValueError(f"grid side must be a power of two, got {side}")
    if not np.all(np.isfinite(g)):
        raise ValueError("grid contains non-finite values")
    return g


def max_levels(side: int) -> int:
    """Number of resolution levels down to the single averaged pixel."""
    return int(np.log2(side)) + 1


def downsample(g: np.ndarray) -> np.ndarray:
    """2x2 block mean; halves the side. Errors on a single-pixel grid."""
    g = np.asarray(g, dtype=float)
    side = g.shape[0]
    if side < 2:
        raise ValueError("cannot downsample a grid of side 1")
    r = g.reshape((side // 2, 2, side // 2, 2) + g.shape[2:])
    # fixed summation order keeps channel slices bitwise identical to
    # per-channel application
    return (r[:, 0, :, 0] + r[:, 0, :, 1] + r[:, 1, :, 0] + r[:, 1, :, 1]) * 0.25


def upsample(g: np.ndarray) -> np.ndarray:
    """Nearest-neighbor replication into 2x2 blocks; doubles the side."""
    g = np.asarray(g, dtype=float)
    return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)


def coarse_project(g: np.ndarray, m: int) -> np.ndarray:
    """U^m D^m g: the block-constant component at scale 2^m, full size."""
    if m < 0:
        raise ValueError(f"level must be non-negative, got {m}")
    out = g
    for _ in range(m):
        out = downsample(out)
    for _ in range(m):
        out = upsample(out)
    return out


@dataclass
class BandStack:
    """Resolution bands of a grid, all stored at full resolution.

    ``bands[m]`` holds the content between block scales 2^m and 2^{m+1};
    ``residual_mean`` is the block-mean remainder beyond the last band.
    The parts are mutually orthogonal and sum back to the input exactly.
    """

    bands: list[np.ndarray]
    residual_mean: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.bands)

    def reconstruct(self) -> np.ndarray:
        out = self.residual_mean.copy()
        for b in self.bands:
            out += b
        return out


def band_decompose(g: np.ndarray, levels: int) -> BandStack:
    """Split g into ``levels`` resolution bands plus the mean remainder.

    Requires levels <= log2(side) + 1.  At the maximum level count the
    last band is the constant mean field and the remainder is zero (there
    is nothing below a single pixel).
    """
    g = validate_grid(g)
    side = g.shape[0]
    depth = int(np.log2(side))  # poolings available down to 1x1
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if levels > depth + 1:
        raise ValueError(
            f"levels={levels} exceeds log2(side)+1 = {depth + 1} for side {side}"
        )
    # progressively pooled copies, then re-expanded to full size
    pooled = [g]
    for _ in range(min(levels, depth)):
        pooled.append(downsample(pooled[-1]))
    coarse = []
    for k, p in enumerate(pooled):
        for _ in range(k):
            p = upsample(p)
        coarse.append(p)
    if levels > depth:  # single pixel reached: nothing coarser remains
        coarse.append(np.zeros_like(g))
    bands = [coarse[m] - coarse[m + 1] for m in range(levels)]
    return BandStack(bands=bands, residual_mean=coarse[levels])


def band_energies(stack: BandStack) -> np.ndarray:
    """Squared L2 norm of each band (summed over space and channels)."""
    return np.array([float(np.sum(b * b)) for b in stack.bands])


def band_energy_curves(fields, levels: int):
    """Band energies for a sequence of (time, grid) pairs.

    Returns ``(times, energies, residual)`` with energies of shape
    (levels, n_times) and the residual-mean energies alongside.
    """
    times, cols, res = [], [], []
    side = None
    for t, g in fields:
        g = validate_grid(g)
        if side is None:
            side = g.shape[0]
        elif g.shape[0] != side:
            raise ValueError(
                f"mismatched grid sides in field sequence: {g.shape[0]} vs {side}"
            )
        stack = band_decompose(g, levels)
        times.append(float(t))
        cols.append(band_energies(stack))
        res.append(float(np.sum(stack.residual_mean**2)))
    return np.array(times), np.array(cols).T, np.array(res)


def measured_chromatography(fields, levels: int, include_residual: bool = False):
    """Normalized band-energy profile of a field sequence.

    For each (time, grid) pair the grid's band energies are normalized to
    fractions; with ``include_residual`` the mean remainder participates
    in the normalization (and is reported as an extra final level).
    Raises on time points where every band is zero.
    """
    from .chroma import ChromatographyProfile

    times, energies, res = band_energy_curves(fields, levels)
    if include_residual:
        energies = np.vstack([energies, res[None, :]])
    total = energies.sum(axis=0)
    degenerate = total <= 0.0
    if np.any(degenerate):
        idx = int(np.argmax(degenerate))
        raise ValueError(
            f"degenerate normalization: zero band energy at t={times[idx]}"
        )
    return ChromatographyProfile(times, energies / total)


# ---------------------------------------------------------------------------
# binary grid format: magic "RCG1", u32 LE side, u32 LE channels, then
# side*side*channels little-endian float32, row-major, channel-interleaved.
# ---------------------------------------------------------------------------

def write_grid(path, g: np.ndarray) -> None:
    g = validate_grid(g)
    channels = 1 if g.ndim == 2 else g.shape[2]
    data = np.ascontiguousarray(g, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", GRID_MAGIC, g.shape[0], channels))
        fh.write(data.tobytes())


def read_grid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12:
            raise ValueError(f"{path}: truncated grid header")
        magic, side, channels = struct.unpack("<4sII", head)
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
        count = side * side * channels
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if data.size != count:
            raise ValueError(f"{path}: truncated grid payload")
    g = data.astype(float).reshape(
        (side, side) if channels == 1 else (side, side, channels)
    )
    return g


def write_band_energies_csv(path, times, energies) -> None:
    """Write rows ``t,e0,...,e{M-1}`` for an (M, n_times) energy array."""
    energies = np.asarray(energies)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"e{m}" for m in range(energies.shape[0])])
        for i, t in enumerate(times):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in energies[:, i]])
