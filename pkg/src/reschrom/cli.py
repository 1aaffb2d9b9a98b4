"""Command-line surface.

Subcommands: chroma, measure, simulate, upscale, compose.  Every command
validates its inputs before writing anything, computes in memory, then
writes a run directory containing ``config.json`` plus CSV/grid
artifacts.  Runs are deterministic given (config, seed).

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cascade, chroma, diffusion, pyramid, spectra
from .schedule import NoiseSchedule, load_tabulated_csv, make_schedule

DEFAULT_ETAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0)


@dataclass
class RunConfig:
    command: str
    out: str
    seed: int = 0
    side: int = 32
    levels: int | None = None
    steps: int = 50
    samples: int = 100
    schedule: str = "natural"
    schedule_file: str | None = None
    cosine_offset: float = 0.008
    grid_points: int = 256
    verify: bool = False
    include_residual: bool = False
    guidance_weight: float = 2.0
    mean_scale: float = 1.0
    pixel_std: float = 0.25
    time_grid: str = "uniform"
    no_time_adjust: bool = False
    no_intensity_rescale: bool = False
    no_threshold: bool = False
    dump_grids: bool = False
    etas: tuple = field(default_factory=lambda: DEFAULT_ETAS)


def _build_schedule(cfg: RunConfig) -> NoiseSchedule:
    if cfg.schedule == "tabulated":
        if not cfg.schedule_file:
            raise ValueError("tabulated schedule needs --file")
        if not Path(cfg.schedule_file).is_file():
            raise ValueError(f"schedule file not found: {cfg.schedule_file}")
        return load_tabulated_csv(cfg.schedule_file)
    if cfg.schedule == "cosine":
        return make_schedule("cosine", offset=cfg.cosine_offset)
    return make_schedule(cfg.schedule)


def _check_side(side: int):
    if side < 4 or side & (side - 1) != 0:
        raise ValueError(f"--side must be a power of two >= 4, got {side}")


def _check_common(cfg: RunConfig):
    if cfg.steps < 1:
        raise ValueError(f"--steps must be >= 1, got {cfg.steps}")
    if cfg.samples < 1:
        raise ValueError(f"--samples must be >= 1, got {cfg.samples}")
    if cfg.time_grid not in ("uniform", "logsnr"):
        raise ValueError(f"--time-grid must be uniform or logsnr, got {cfg.time_grid}")


def _resolve_levels(cfg: RunConfig, cap: int) -> int:
    levels = cfg.levels if cfg.levels is not None else cap
    if not 1 <= levels <= cap:
        raise ValueError(f"--levels must be in [1, {cap}], got {levels}")
    return levels


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, default=list)
        fh.write("\n")
    return out


def _write_report(out: Path, report: dict):
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# chroma: theoretical chromatography profile (+ numeric cross-check)
# ---------------------------------------------------------------------------

def cmd_chroma(cfg: RunConfig) -> int:
    _check_side(cfg.side)
    schedule = _build_schedule(cfg)
    levels = _resolve_levels(cfg, cap=pyramid.max_levels(cfg.side))
    if cfg.grid_points < 2:
        raise ValueError(f"--grid must be >= 2, got {cfg.grid_points}")

    h = 1e-4 * (schedule.t_max - schedule.t_min)
    times = chroma.default_time_grid(schedule, cfg.grid_points, margin=h)
    profile = chroma.chromatography(schedule, times, levels)
    numeric = deviation = None
    if cfg.verify:
        numeric = chroma.chromatography_numeric(schedule, times, levels, h)
        deviation = float(np.abs(numeric.values - profile.values).max())

    out = _out_dir(cfg)
    profile.to_csv(out / "chromatography.csv")
    report = {"levels": levels, "schedule": schedule.kind, "time_points": len(times)}
    if cfg.verify:
        numeric.to_csv(out / "chromatography_numeric.csv")
        report["max_numeric_deviation"] = deviation
        print(f"max deviation theoretical vs finite-difference: {deviation:.3e}")
    _write_report(out, report)
    print(f"wrote {out / 'chromatography.csv'}")
    return 0


# ---------------------------------------------------------------------------
# measure: band energies of guidance fields along a guided trajectory
# ---------------------------------------------------------------------------

def _measure_models(cfg: RunConfig, levels: int):
    base = diffusion.GaussianImageModel.band_separable(cfg.side, np.ones(levels))
    if cfg.mean_scale == 0.0:
        mean = np.zeros((cfg.side, cfg.side))
    else:
        mean = diffusion.band_probe_image(
            cfg.side, levels, seed=cfg.seed + 1_000_003, scale=cfg.mean_scale
        )
    return base, base.with_mean(mean)


def cmd_measure(cfg: RunConfig) -> int:
    _check_side(cfg.side)
    _check_common(cfg)
    schedule = _build_schedule(cfg)
    levels = _resolve_levels(cfg, cap=pyramid.max_levels(cfg.side) - 1)

    uncond_model, cond_model = _measure_models(cfg, levels)
    d_uncond = diffusion.wiener_denoiser(uncond_model, schedule, name="uncond")
    d_cond = diffusion.wiener_denoiser(cond_model, schedule, name="cond")
    guided = diffusion.guided_denoiser(
        d_uncond, [d_cond],
        diffusion.ConditionWeights([("cond", lambda t: cfg.guidance_weight)]),
    )

    times = diffusion.sampling_times(schedule, cfg.steps, cfg.time_grid)
    x = diffusion.initial_noise(cfg.side, cfg.seed, channels=None)
    fields = []
    for t, state, eps in diffusion.ddim_trajectory(guided, schedule, x, times):
        if eps is None:
            break
        fields.append((t, diffusion.guidance_field(d_uncond, d_cond, state, t)))
    fields.reverse()  # report in forward-time order

    eval_times, energies, residual = pyramid.band_energy_curves(fields, levels)
    totals = energies.sum(axis=0)
    degenerate = totals <= 0.0
    values = np.zeros_like(energies)
    np.divide(energies, totals, out=values, where=~degenerate)

    theory = chroma.chromatography(schedule, eval_times, levels)

    out = _out_dir(cfg)
    pyramid.write_band_energies_csv(out / "band_energies.csv", eval_times, energies)
    _write_profile_csv(out / "measured_chromatography.csv", eval_times, values)
    theory.to_csv(out / "theoretical_chromatography.csv")

    report = {"levels": levels, "degenerate_rows": int(degenerate.sum())}
    if np.all(degenerate):
        print(
            "warning: degenerate normalization (all-zero guidance at every time); "
            "measured rows written as zeros",
            file=sys.stderr,
        )
    else:
        measured_peaks = [float(eval_times[int(np.argmax(values[m]))]) for m in range(levels)]
        theory_peaks = [float(eval_times[int(np.argmax(theory.values[m]))]) for m in range(levels)]
        report["measured_peak_times"] = measured_peaks
        report["theoretical_peak_times"] = theory_peaks
        report["peak_order_match"] = list(np.argsort(measured_peaks)) == list(
            np.argsort(theory_peaks)
        )
        print(f"measured peak times:    {measured_peaks}")
        print(f"theoretical peak times: {theory_peaks}")
        print(f"peak ordering match: {report['peak_order_match']}")
    _write_report(out, report)
    return 0


def _write_profile_csv(path, times, values):
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t"] + [f"r{m}" for m in range(values.shape[0])])
        for i, t in enumerate(times):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in values[:, i]])


# ---------------------------------------------------------------------------
# simulate: PSD trajectory of posterior-expectation changes
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    _check_side(cfg.side)
    _check_common(cfg)
    schedule = _build_schedule(cfg)
    model = diffusion.GaussianImageModel.power_law(cfg.side, variance=1.0)
    entries = spectra.change_psd_trajectory(
        model, schedule, steps=cfg.steps, n_samples=cfg.samples,
        seed=cfg.seed, time_grid=cfg.time_grid,
    )

    dumps = None
    if cfg.dump_grids:
        denoiser = diffusion.wiener_denoiser(model, schedule)
        times = diffusion.sampling_times(schedule, cfg.steps, cfg.time_grid)
        x = diffusion.initial_noise(cfg.side, cfg.seed)
        dumps = [
            (k, t, schedule.alpha(t), state)
            for k, (t, state, _eps) in enumerate(
                diffusion.ddim_trajectory(denoiser, schedule, x, times)
            )
        ]

    out = _out_dir(cfg)
    spectra.write_radial_psd_csv(out / "change_psd.csv", entries)
    if dumps is not None:
        import csv as _csv

        with open(out / "trajectory_index.csv", "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["step", "t", "alpha", "file"])
            for k, t, a, state in dumps:
                name = f"state_{k:04d}.rcg"
                pyramid.write_grid(out / name, state)
                writer.writerow([k, _fmt(t), _fmt(a), name])
    centroids = [spectra.spectral_centroid(rp) for _t, rp in entries]
    moves = np.diff(centroids)
    frac = float(np.mean(moves >= 0)) if len(moves) else 1.0
    _write_report(out, {
        "pairs": len(entries),
        "centroid_nondecreasing_fraction": frac,
    })
    print(f"centroid non-decreasing over {frac:.1%} of consecutive pairs "
          f"(sampling order, coarse to fine)")
    print(f"wrote {out / 'change_psd.csv'}")
    return 0


# ---------------------------------------------------------------------------
# upscale: cascaded generation and its ablations
# ---------------------------------------------------------------------------

def _upscale_variants(cfg: RunConfig):
    if cfg.no_time_adjust or cfg.no_intensity_rescale or cfg.no_threshold:
        return {
            "custom": dict(
                time_adjust_on=not cfg.no_time_adjust,
                intensity_rescale_on=not cfg.no_intensity_rescale,
                threshold=not cfg.no_threshold,
            )
        }
    return {
        "full": dict(time_adjust_on=True, intensity_rescale_on=True, threshold=True),
        "no_time_adjust": dict(time_adjust_on=False, intensity_rescale_on=True, threshold=True),
        "no_intensity_rescale": dict(time_adjust_on=True, intensity_rescale_on=False, threshold=True),
        "no_threshold": dict(time_adjust_on=True, intensity_rescale_on=True, threshold=False),
    }


def cmd_upscale(cfg: RunConfig) -> int:
    _check_side(cfg.side)
    _check_common(cfg)
    if cfg.pixel_std <= 0:
        raise ValueError(f"--pixel-std must be positive, got {cfg.pixel_std}")
    schedule = _build_schedule(cfg)
    cap = pyramid.max_levels(cfg.side)
    levels = min(3, cap) if cfg.levels is None else _resolve_levels(cfg, cap=cap)

    model = diffusion.GaussianImageModel.band_separable(cfg.side, np.ones(levels))
    scale = cfg.pixel_std / np.sqrt(model.pixel_variance())
    model = diffusion.GaussianImageModel.band_separable(cfg.side, scale * np.ones(levels))
    bank = cascade.bank_from_band_model(model, schedule)

    reference = model.color(
        diffusion.initial_noise(cfg.side, cfg.seed, channels=cfg.samples)
    )
    ref_psd = spectra.radial_average(spectra.psd2d(reference), cfg.samples)

    variants = _upscale_variants(cfg)
    results, psds, deviations = {}, {}, {}
    for name, flags in variants.items():
        x = cascade.cascaded_sample(
            bank, schedule, steps=cfg.steps, seed=cfg.seed,
            channels=cfg.samples, time_grid=cfg.time_grid, **flags,
        )
        results[name] = x
        rp = spectra.radial_average(spectra.psd2d(x), cfg.samples)
        psds[name] = rp
        deviations[name] = np.abs(rp.power / ref_psd.power - 1.0)

    trivial = None
    if levels == 1:
        plain = diffusion.ddim_sample(
            bank.levels[0], schedule, cfg.side, steps=cfg.steps, seed=cfg.seed,
            channels=cfg.samples, time_grid=cfg.time_grid,
        )
        key = "no_threshold" if "no_threshold" in results else "custom"
        trivial = float(np.abs(results[key] - plain).max())

    analytic = spectra.radial_average(model.expected_psd())

    out = _out_dir(cfg)
    import csv as _csv

    with open(out / "ablation_report.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        header = ["r", "psd_model_analytic", "psd_model_sampled"]
        for name in variants:
            header += [f"psd_{name}", f"dev_{name}"]
        writer.writerow(header)
        for i, r in enumerate(ref_psd.freqs):
            row = [_fmt(r), _fmt(analytic.power[i]), _fmt(ref_psd.power[i])]
            for name in variants:
                row += [_fmt(psds[name].power[i]), _fmt(deviations[name][i])]
            writer.writerow(row)
    for name, x in results.items():
        grid = x[:, :, 0] if x.ndim == 3 else x
        pyramid.write_grid(out / f"sample_{name}.rcg", grid)

    report = {
        "levels": levels,
        "max_deviation": {k: float(v.max()) for k, v in deviations.items()},
    }
    if trivial is not None:
        report["trivial_reduction"] = True
        report["max_difference_vs_plain_ddim"] = trivial
        print(f"levels=1: trivial reduction, max |cascade - plain DDIM| = {trivial:.3e}")
    _write_report(out, report)
    for name, dev in report["max_deviation"].items():
        print(f"{name}: max per-bin PSD deviation {dev:.3%}")
    return 0


# ---------------------------------------------------------------------------
# compose: time-dependent two-condition switching
# ---------------------------------------------------------------------------

def cmd_compose(cfg: RunConfig) -> int:
    _check_side(cfg.side)
    _check_common(cfg)
    for eta in cfg.etas:
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"--eta values must lie in [0, 1], got {eta}")
    schedule = _build_schedule(cfg)
    levels = _resolve_levels(cfg, cap=pyramid.max_levels(cfg.side) - 1)

    base = diffusion.GaussianImageModel.band_separable(cfg.side, np.ones(levels))
    mean_late = cfg.mean_scale * base.sample(seed=cfg.seed + 2_000_003)
    mean_early = cfg.mean_scale * base.sample(seed=cfg.seed + 3_000_003)
    d_uncond = diffusion.wiener_denoiser(base, schedule, name="uncond")
    d_late = diffusion.wiener_denoiser(base.with_mean(mean_late), schedule, name="late")
    d_early = diffusion.wiener_denoiser(base.with_mean(mean_early), schedule, name="early")

    times = diffusion.sampling_times(schedule, cfg.steps, cfg.time_grid)
    t_total = schedule.t_max

    def run(weights):
        guided = diffusion.guided_denoiser(d_uncond, [d_late, d_early], weights)
        x = diffusion.initial_noise(cfg.side, cfg.seed)
        for _t, x, _eps in diffusion.ddim_trajectory(guided, schedule, x, times):
            pass
        return x

    ref_late = run(diffusion.ConditionWeights([("late", lambda t: 1.0), ("early", lambda t: 0.0)]))
    ref_early = run(diffusion.ConditionWeights([("late", lambda t: 0.0), ("early", lambda t: 1.0)]))

    samples, switch_steps = {}, {}
    for eta in cfg.etas:
        weights = diffusion.prompt_switch_weights(eta, t_total)
        samples[eta] = run(weights)
        active_late = [weights.at(t)[0] > 0.5 for t in times[:-1]]
        switch_steps[eta] = int(np.argmax(active_late)) if any(active_late) else -1

    def band_corr(x, ref):
        sx = pyramid.band_decompose(x, levels)
        sr = pyramid.band_decompose(ref, levels)
        out = []
        for bx, br in zip(sx.bands, sr.bands):
            denom = np.linalg.norm(bx) * np.linalg.norm(br)
            out.append(float(np.sum(bx * br) / denom) if denom > 0 else 0.0)
        return out

    out = _out_dir(cfg)
    import csv as _csv

    with open(out / "band_correlation.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["eta", "band", "corr_late_ref", "corr_early_ref"])
        for eta in cfg.etas:
            cl = band_corr(samples[eta], ref_late)
            ce = band_corr(samples[eta], ref_early)
            for m in range(levels):
                writer.writerow([_fmt(eta), m, _fmt(cl[m]), _fmt(ce[m])])
    pyramid.write_grid(out / "sample_ref_late.rcg", ref_late)
    pyramid.write_grid(out / "sample_ref_early.rcg", ref_early)
    for eta in cfg.etas:
        pyramid.write_grid(out / f"sample_eta_{eta:g}.rcg", samples[eta])

    report = {
        "etas": list(cfg.etas),
        "switch_steps": {f"{eta:g}": switch_steps[eta] for eta in cfg.etas},
        "eta0_equals_early_ref": bool(np.array_equal(samples.get(0.0), ref_early))
        if 0.0 in samples else None,
        "eta1_equals_late_ref": bool(np.array_equal(samples.get(1.0), ref_late))
        if 1.0 in samples else None,
    }
    _write_report(out, report)
    for eta in cfg.etas:
        k = switch_steps[eta]
        desc = f"step {k}" if k >= 0 else "never"
        print(f"eta={eta:g}: late condition takes over at {desc}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _common_flags(p: argparse.ArgumentParser, side=32, steps=50, samples=100,
                  schedule="natural", time_grid="uniform"):
    p.add_argument("--seed", type=int, default=0, help="root RNG seed")
    p.add_argument("--out", required=True, help="output directory for this run")
    p.add_argument("--side", type=int, default=side, help="grid side (power of two)")
    p.add_argument("--levels", type=int, default=None, help="number of resolution levels")
    p.add_argument("--steps", type=int, default=steps, help="sampling steps")
    p.add_argument("--samples", type=int, default=samples, help="Monte Carlo sample count")
    p.add_argument("--schedule", default=schedule,
                   choices=["natural", "cosine", "linear", "tabulated"],
                   help="noise schedule kind")
    p.add_argument("--file", dest="schedule_file", default=None,
                   help="CSV knot file (t,alpha) for --schedule tabulated")
    p.add_argument("--cosine-offset", type=float, default=0.008,
                   help="offset s of the cosine schedule")
    p.add_argument("--time-grid", default=time_grid, choices=["uniform", "logsnr"],
                   help="sampling-time placement")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reschrom",
        description="Resolution chromatography of diffusion noise schedules: "
        "profiles, guided-trajectory measurements, PSD instrumentation, and "
        "cascaded multi-resolution sampling on analytic Gaussian models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chroma", help="theoretical chromatography profile CSV")
    _common_flags(p)
    p.add_argument("--grid", dest="grid_points", type=int, default=256,
                   help="number of profile time points")
    p.add_argument("--verify", action="store_true",
                   help="also run the finite-difference cross-check")

    p = sub.add_parser("measure", help="measured chromatography of guidance fields")
    _common_flags(p)
    p.add_argument("--guidance-weight", type=float, default=2.0,
                   help="guidance strength of the conditional trajectory")
    p.add_argument("--mean-scale", type=float, default=1.0,
                   help="amplitude of the condition mean image")
    p.add_argument("--include-residual", action="store_true",
                   help="include the block-mean remainder in the normalization")

    p = sub.add_parser("simulate", help="PSD trajectory of posterior-expectation changes")
    _common_flags(p, side=64, samples=500, schedule="cosine")
    p.add_argument("--dump-grids", action="store_true",
                   help="also dump one trajectory as binary grids + index CSV")

    p = sub.add_parser("upscale", help="cascaded generation and its ablations")
    _common_flags(p, steps=400, samples=200, time_grid="logsnr")
    p.add_argument("--pixel-std", type=float, default=0.25,
                   help="target pixel standard deviation of the synthetic prior")
    p.add_argument("--no-time-adjust", action="store_true",
                   help="disable the SNR-matching time adjustment (single custom run)")
    p.add_argument("--no-intensity-rescale", action="store_true",
                   help="disable the intensity rescale (single custom run)")
    p.add_argument("--no-threshold", action="store_true",
                   help="disable the multi-resolution static threshold (single custom run)")

    p = sub.add_parser("compose", help="time-dependent two-condition switching")
    _common_flags(p)
    p.add_argument("--eta", dest="etas", default=",".join(str(e) for e in DEFAULT_ETAS),
                   help="comma-separated switch fractions in [0, 1]")
    p.add_argument("--mean-scale", type=float, default=1.0,
                   help="amplitude of the condition mean images")
    return parser


COMMANDS = {
    "chroma": cmd_chroma,
    "measure": cmd_measure,
    "simulate": cmd_simulate,
    "upscale": cmd_upscale,
    "compose": cmd_compose,
}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    if "etas" in fields and isinstance(fields["etas"], str):
        try:
            fields["etas"] = tuple(float(v) for v in fields["etas"].split(",") if v)
        except ValueError as exc:
            raise ValueError(f"bad --eta list: {exc}") from None
    return RunConfig(**fields)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        runner = COMMANDS[cfg.command]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return runner(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
