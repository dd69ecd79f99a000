"""Guided diffusion sampler with guidance annealing and resampling annealing.

The engine drives any ``Denoiser`` backend through a variance-exploding
probability-flow ODE: at each noise level the backend predicts the clean
video, the prediction is optionally blended with a rendered reference video
under an opacity mask, and an Euler step moves the latent to the next level.
During the first ``guided_steps`` levels each step is repeated
``resample_rounds`` times (re-noising in between), with the masked blend
applied only on the first ``guided_resample_rounds`` repeats.

Latents are plain 4-D numpy arrays (frames, channels, height, width); the
engine is agnostic to what space they live in (pixels for the analytic
backends, a VAE latent for a real video model).
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Protocol

import numpy as np

from .errors import (
    ConfigError,
    DenoiserError,
    DomainError,
    NumericalDivergenceError,
    ShapeMismatchError,
)
from .rng import NoiseStream


class Denoiser(Protocol):
    """Anything that maps a noisy latent to a clean-video estimate.

    Implementations must be deterministic (identical inputs give identical
    outputs) and shape-preserving. ``condition`` is an opaque payload the
    engine never inspects; backends that condition on a reference frame
    receive it here.
    """

    def predict(self, x_t: np.ndarray, sigma: float, condition: bytes) -> np.ndarray: ...


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    """Run parameters. Defaults follow the reference setup for static scenes."""

    steps: int = 25
    guided_steps: int = 15
    resample_rounds: int = 3
    guided_resample_rounds: int = 1
    seed: int = 0
    sigma_min: float = 0.002
    sigma_max: float = 700.0
    rho: float = 7.0
    sigma_data: float = 0.5

    def validate(self) -> "SamplerConfig":
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.guided_steps <= self.steps:
            raise ConfigError(
                f"guided_steps must be in [0, steps], got {self.guided_steps} with steps={self.steps}"
            )
        if self.resample_rounds < 1:
            raise ConfigError(f"resample_rounds must be >= 1, got {self.resample_rounds}")
        if not 0 <= self.guided_resample_rounds <= self.resample_rounds:
            raise ConfigError(
                "guided_resample_rounds must be in [0, resample_rounds], got "
                f"{self.guided_resample_rounds} with resample_rounds={self.resample_rounds}"
            )
        if not self.sigma_min > 0:
            raise ConfigError(f"sigma_min must be > 0, got {self.sigma_min}")
        if not self.sigma_max > self.sigma_min:
            raise ConfigError(
                f"sigma_max must exceed sigma_min, got {self.sigma_max} <= {self.sigma_min}"
            )
        if not self.rho > 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        return self

    @classmethod
    def from_json(cls, text: str) -> "SamplerConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigError("sampler config JSON must be an object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown sampler config fields: {sorted(unknown)}")
        return cls(**data).validate()

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    """Noise levels indexed by step: sigmas[t] for t in 0..T, sigmas[0] == 0."""

    sigmas: np.ndarray
    sigma_data: float

    @property
    def steps(self) -> int:
        return len(self.sigmas) - 1


@dataclasses.dataclass
class GuidanceInput:
    """Reference video, opacity mask, and opaque conditioning payload.

    ``video`` is the rendered reference the sampler is steered toward; the
    mask marks where that reference actually observed scene content (1) vs
    holes to be inpainted (0). Fractional values blend linearly.
    """

    video: np.ndarray
    mask: np.ndarray
    condition: bytes = b""


def build_schedule(config: SamplerConfig) -> NoiseSchedule:
    """Power-law noise schedule from sigma_max down to sigma_min, then 0.

    sigma_t = (a + (T-t)/(T-1) * (b - a))**rho with a = sigma_max**(1/rho),
    b = sigma_min**(1/rho), for t = T..1; sigma_0 = 0. Values are computed in
    float64 and stored as float32 so a noise level survives a 32-bit wire
    round trip exactly.
    """
    config.validate()
    total = config.steps
    sig = np.zeros(total + 1, dtype=np.float64)
    a = config.sigma_max ** (1.0 / config.rho)
    b = config.sigma_min ** (1.0 / config.rho)
    for t in range(total, 0, -1):
        frac = (total - t) / (total - 1) if total > 1 else 0.0
        sig[t] = (a + frac * (b - a)) ** config.rho
    sig = sig.astype(np.float32)
    if not np.all(np.diff(sig) > 0):
        raise ConfigError(
            "schedule is not strictly decreasing after float32 rounding; "
            "reduce steps or widen the sigma range"
        )
    return NoiseSchedule(sigmas=sig, sigma_data=config.sigma_data)


def precondition_coeffs(sigma: float, sigma_data: float):
    """Skip/out/in/noise coefficients for a raw-network denoiser.

    c_noise clamps sigma at 1e-20 so the zero-noise case stays finite.
    """
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    s2 = sigma * sigma
    d2 = sigma_data * sigma_data
    denom = math.sqrt(s2 + d2)
    c_skip = d2 / (s2 + d2)
    c_out = sigma * sigma_data / denom
    c_in = 1.0 / denom
    c_noise = 0.25 * math.log(max(sigma, 1e-20))
    return c_skip, c_out, c_in, c_noise


def edm_precondition(raw: np.ndarray, x_t: np.ndarray, sigma: float, sigma_data: float) -> np.ndarray:
    """Combine a raw network output with the noisy latent: c_skip*x_t + c_out*raw."""
    if raw.shape != x_t.shape:
        raise ShapeMismatchError(f"raw shape {raw.shape} != latent shape {x_t.shape}")
    c_skip, c_out, _, _ = precondition_coeffs(sigma, sigma_data)
    return c_skip * x_t + c_out * raw


def ode_derivative(x_t: np.ndarray, x0_hat: np.ndarray, sigma: float) -> np.ndarray:
    """Flow derivative (x_t - x0_hat) / sigma. Undefined at sigma = 0."""
    if x0_hat.shape != x_t.shape:
        raise ShapeMismatchError(f"prediction shape {x0_hat.shape} != latent shape {x_t.shape}")
    if sigma == 0:
        raise DomainError("ode_derivative is undefined at sigma = 0")
    return (x_t - x0_hat) / sigma


def euler_step(x_t: np.ndarray, dx: np.ndarray, sigma: float, sigma_prev: float) -> np.ndarray:
    """One explicit Euler move: x_t + dx * (sigma_prev - sigma)."""
    if dx.shape != x_t.shape:
        raise ShapeMismatchError(f"derivative shape {dx.shape} != latent shape {x_t.shape}")
    if not sigma_prev < sigma:
        raise DomainError(f"expected sigma_prev < sigma, got {sigma_prev} >= {sigma}")
    return x_t + dx * (sigma_prev - sigma)


def _broadcast_mask(mask: np.ndarray, video_shape) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[:, None, :, :]
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise ShapeMismatchError(f"mask must have shape (F, 1, H, W), got {mask.shape}")
    frames, _, height, width = mask.shape
    if (frames, height, width) != (video_shape[0], video_shape[2], video_shape[3]):
        raise ShapeMismatchError(
            f"mask shape {mask.shape} does not match video shape {tuple(video_shape)}"
        )
    if mask.size and (mask.min() < 0 or mask.max() > 1):
        raise DomainError("mask values must lie in [0, 1]")
    return mask


def guided_direction(x0_hat: np.ndarray, guidance: GuidanceInput) -> np.ndarray:
    """Blend the reference into the prediction where the mask says it was seen."""
    ref = np.asarray(guidance.video)
    if ref.shape != x0_hat.shape:
        raise ShapeMismatchError(
            f"reference shape {ref.shape} != prediction shape {x0_hat.shape}"
        )
    mask = _broadcast_mask(guidance.mask, x0_hat.shape).astype(x0_hat.dtype, copy=False)
    return ref * mask + x0_hat * (1 - mask)


def renoise(x0_dir: np.ndarray, sigma: float, stream: NoiseStream) -> np.ndarray:
    """Diffuse back to noise level sigma: x + sigma * eps, eps ~ N(0, I)."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x0_dir.copy()
    return x0_dir + sigma * stream.standard_normal(x0_dir.shape, dtype=x0_dir.dtype)


def downsample_mask(mask: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Area-average a mask onto a coarser grid, e.g. pixel -> latent resolution.

    Exact box averaging: block means when the target divides the source,
    fractional-area integration otherwise. Output stays within [0, 1].
    """
    mask = np.asarray(mask)
    height, width = mask.shape[-2:]
    if target_h <= 0 or target_w <= 0:
        raise DomainError(f"target dims must be positive, got {target_h}x{target_w}")
    if target_h > height or target_w > width:
        raise DomainError(
            f"target {target_h}x{target_w} exceeds source {height}x{width}"
        )
    lead = mask.shape[:-2]
    work = mask.reshape(-1, height, width).astype(np.float64)
    if height % target_h == 0 and width % target_w == 0:
        out = work.reshape(
            -1, target_h, height // target_h, target_w, width // target_w
        ).mean(axis=(2, 4))
    else:
        out = _fractional_area_pool(work, target_h, target_w)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(*lead, target_h, target_w).astype(mask.dtype, copy=False)


def _fractional_area_pool(work: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    # Integral image with a zero border; bilinear evaluation at fractional
    # coordinates is exact for a piecewise-constant field.
    _, height, width = work.shape
    integral = np.zeros((work.shape[0], height + 1, width + 1))
    np.cumsum(np.cumsum(work, axis=1), axis=2, out=integral[:, 1:, 1:])

    def eval_at(ys, xs):
        iy = np.clip(np.floor(ys).astype(int), 0, height - 1)
        ix = np.clip(np.floor(xs).astype(int), 0, width - 1)
        fy = (ys - iy)[None, :, None]
        fx = (xs - ix)[None, None, :]
        a = integral[:, iy, :][:, :, ix]
        b = integral[:, iy + 1, :][:, :, ix]
        c = integral[:, iy, :][:, :, ix + 1]
        d = integral[:, iy + 1, :][:, :, ix + 1]
        return a + fy * (b - a) + fx * (c - a) + fy * fx * (d - c - b + a)

    ys = np.linspace(0.0, float(height), target_h + 1)
    xs = np.linspace(0.0, float(width), target_w + 1)
    grid = eval_at(ys, xs)
    box = grid[:, 1:, 1:] - grid[:, :-1, 1:] - grid[:, 1:, :-1] + grid[:, :-1, :-1]
    area = np.outer(np.diff(ys), np.diff(xs))
    return box / area


def binarize_mask(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Harden a fractional mask; values >= threshold become 1."""
    mask = np.asarray(mask)
    return (mask >= threshold).astype(mask.dtype)


def _checked_predict(denoiser, x, sigma, condition, step, resample):
    where = f"step {step}" + ("" if resample is None else f", resample {resample}")
    try:
        pred = denoiser.predict(x, sigma, condition)
    except (DenoiserError, NumericalDivergenceError):
        raise
    except Exception as exc:
        raise DenoiserError(
            f"denoiser failed at {where}: {exc}", step=step, resample=resample
        ) from exc
    pred = np.asarray(pred)
    if pred.shape != x.shape:
        raise DenoiserError(
            f"denoiser returned shape {pred.shape}, expected {x.shape} ({where})",
            step=step,
            resample=resample,
        )
    pred = pred.astype(x.dtype, copy=False)
    if not np.all(np.isfinite(pred)):
        raise NumericalDivergenceError(
            f"denoiser output contains non-finite values at {where}", step=step
        )
    return pred


def _check_latent(x, step):
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError(
            f"latent diverged to non-finite values at step {step}", step=step
        )


def refine_video(
    guidance: GuidanceInput, denoiser: Denoiser, config: SamplerConfig
) -> np.ndarray:
    """Run the full guided refinement loop and return the clean latent.

    Noise is drawn in a fixed order from one seeded stream (initial latent
    first, then each re-noising in loop order), so a (guidance, config) pair
    fully determines the output. Total backend predictions equal
    guided_steps * resample_rounds + (steps - guided_steps).
    """
    config.validate()
    video = np.asarray(guidance.video)
    if video.ndim != 4:
        raise ShapeMismatchError(
            f"reference video must be 4-D (F, C, H, W), got shape {video.shape}"
        )
    if not np.all(np.isfinite(video)):
        raise DomainError("reference video contains non-finite values")
    if not np.issubdtype(video.dtype, np.floating):
        video = video.astype(np.float32)
    mask = _broadcast_mask(guidance.mask, video.shape).astype(video.dtype, copy=False)
    guidance = GuidanceInput(video=video, mask=mask, condition=guidance.condition)

    schedule = build_schedule(config)
    sig = schedule.sigmas
    total = config.steps
    stream = NoiseStream(config.seed)

    x = float(sig[total]) * stream.standard_normal(video.shape, dtype=video.dtype)
    for t in range(total, 0, -1):
        sigma_t = float(sig[t])
        sigma_prev = float(sig[t - 1])
        if t > total - config.guided_steps:
            for r in range(1, config.resample_rounds + 1):
                x0_hat = _checked_predict(denoiser, x, sigma_t, guidance.condition, t, r)
                if r <= config.guided_resample_rounds:
                    x0_dir = guided_direction(x0_hat, guidance)
                else:
                    x0_dir = x0_hat
                if r < config.resample_rounds:
                    # The Euler move to sigma_prev would be overwritten by the
                    # next round; only the re-noised latent survives.
                    x = renoise(x0_dir, sigma_t, stream)
                else:
                    x = euler_step(x, ode_derivative(x, x0_dir, sigma_t), sigma_t, sigma_prev)
        else:
            x0_hat = _checked_predict(denoiser, x, sigma_t, guidance.condition, t, None)
            x = euler_step(x, ode_derivative(x, x0_hat, sigma_t), sigma_t, sigma_prev)
        _check_latent(x, t)
    return x
