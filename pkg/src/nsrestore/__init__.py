"""Zero-shot restoration of linear inverse problems with diffusion priors.

The library decomposes the unknown image into the part determined by the
measurement (range space of the degradation operator) and the free part
(null space), and lets a diffusion prior fill in only the free part.  An
analytic Gaussian-mixture denoiser stands in for a trained network so that
every algebraic property is checkable at desk scale.
"""

from .baselines import RepaintParams, run_ddpm_uncond, run_ddrm, run_ilvr, run_repaint
from .denoiser import DenoiserHandle, analytic_gmm_denoiser, external_denoiser, predict_noise
from .formats import read_image, read_tensor, write_image, write_tensor
from .gmm import (
    GmmPrior,
    gmm_posterior_x0,
    gmm_sample,
    image_pattern_prior,
    make_prior,
    mc_posterior_x0,
    read_prior,
    write_prior,
)
from .metrics import consistency, psnr, ssim
from .operators import (
    LinearOperator,
    apply,
    build_operator,
    compose,
    null_project,
    pinv_apply,
    pinv_from_svd,
    projector,
    range_project,
    svd_of,
    verify_pinv,
)
from .rng import RngStream, gaussian_sample
from .sampler import (
    NoiseScalingSimple,
    RestorationProblem,
    SamplerParams,
    TimeTravelParams,
    ddim_step,
    ddpm_step,
    estimate_x0,
    rectify,
    rectify_scaled,
    run_ddnm,
    run_ddnm_plus,
    simple_lambda_gamma,
    time_travel_plan,
)
from .schedule import DiffusionSchedule, build_schedule, forward_sample, posterior_coeffs
from .spectral import (
    SpectralScaling,
    rectify_spectral,
    sample_spectral_noise_ddim,
    spectral_lambda_gamma_ddim,
    spectral_lambda_gamma_ddpm,
)
from .svd import SvdFactors, jacobi_svd
from .tiling import TilePlan, plan_tiles, run_mask_shift

__version__ = "0.1.0"
