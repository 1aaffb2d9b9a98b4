"""Resolution chromatography of diffusion noise schedules.

Noise-schedule algebra, cross-resolution SNR matching, closed-form and
measured chromatography profiles, analytic Gaussian denoisers, and a
cascaded multi-resolution DDIM sampler, all exactly testable at desk
scale.
"""

from .schedule import (
    ALPHA_EPS,
    CosineSchedule,
    LinearSchedule,
    NaturalSchedule,
    NoiseSchedule,
    TabulatedSchedule,
    load_tabulated_csv,
    make_schedule,
    natural_remap,
    remap_between,
    snr,
    snr_inverse,
)
from .chroma import (
    ChromatographyProfile,
    alpha_adjusted,
    chromatography,
    chromatography_numeric,
    intensity_scale,
    natural_chromatography,
    time_adjust,
)
from .pyramid import (
    BandStack,
    band_decompose,
    band_energies,
    downsample,
    max_levels,
    measured_chromatography,
    read_grid,
    upsample,
    write_grid,
)
from .diffusion import (
    ConditionWeights,
    Denoiser,
    GaussianImageModel,
    compose_guidance,
    ddim_sample,
    ddim_step,
    ddim_trajectory,
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
from .cascade import (
    ResolutionDenoiserBank,
    bank_from_band_model,
    cascaded_sample,
    combine_multi,
    combine_two,
    level_posterior,
    multiresolution_threshold,
    residual_target,
)
from .spectra import (
    RadialPSD,
    change_psd_trajectory,
    psd2d,
    radial_average,
    spectral_centroid,
)

__version__ = "0.1.0"
