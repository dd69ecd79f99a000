"""Refinement of artifact-prone novel-view videos with a guided diffusion
sampler, plus the supporting pipeline: depth-to-point-cloud rendering with
opacity masks, camera pose parsing and trajectories, an extrapolation-degree
metric for benchmark splits, analytic denoiser oracles, and a wire protocol
for out-of-process model backends.
"""

__version__ = "0.1.0"

from .oracle import GaussianPrior, MixturePrior, closed_form_gaussian_flow
from .sampler import GuidanceInput, SamplerConfig, refine_video

__all__ = [
    "GaussianPrior",
    "GuidanceInput",
    "MixturePrior",
    "SamplerConfig",
    "closed_form_gaussian_flow",
    "refine_video",
    "__version__",
]
