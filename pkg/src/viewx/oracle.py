"""Analytic denoiser backends with closed-form ground truth.

Under a Gaussian or discrete-mixture prior on the clean video, the posterior
mean E[x_0 | x_t] is available in closed form, so the sampler can be driven
and verified end to end without any trained model. The Gaussian case also
admits an exact solution of the flow ODE, giving an independent target for
convergence checks.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import ConfigError, DomainError


@dataclasses.dataclass(frozen=True)
class GaussianPrior:
    """Clean videos distributed as N(mean, scale**2) per element."""

    mean: float | np.ndarray = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"prior scale must be > 0, got {self.scale}")
        if not np.all(np.isfinite(self.mean)):
            raise ConfigError("prior mean must be finite")


@dataclasses.dataclass(frozen=True)
class MixturePrior:
    """Discrete mixture of candidate clean videos with optional weights."""

    atoms: tuple
    weights: tuple | None = None

    def __post_init__(self):
        if len(self.atoms) < 1:
            raise ConfigError("mixture prior needs at least one atom")
        if self.weights is not None:
            if len(self.weights) != len(self.atoms):
                raise ConfigError("weights and atoms must have equal length")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w <= 0):
                raise ConfigError("mixture weights must be positive")
            if not np.isclose(w.sum(), 1.0, atol=1e-9):
                raise ConfigError("mixture weights must sum to 1")


def gaussian_posterior_mean(x_t: np.ndarray, sigma: float, prior: GaussianPrior) -> np.ndarray:
    """Exact E[x_0 | x_t] for x_t = x_0 + sigma * eps, x_0 ~ N(mean, scale**2).

    The expression below is the backend's wire contract: a remote mock must
    evaluate exactly ``(sigma^2 * mean + scale^2 * x_t) / (sigma^2 + scale^2)``
    in this grouping so in-process and remote runs agree bitwise.
    """
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    sg2 = float(sigma) * float(sigma)
    s2 = float(prior.scale) * float(prior.scale)
    return (sg2 * prior.mean + s2 * x_t) / (sg2 + s2)


def mixture_posterior_mean(x_t: np.ndarray, sigma: float, prior: MixturePrior) -> np.ndarray:
    """Posterior-weighted average of the atoms under isotropic Gaussian noise.

    Responsibilities are softmax(log w_i - ||x_t - atom_i||^2 / (2 sigma^2)),
    computed in float64 with the max subtracted so small sigmas stay stable.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x_t, dtype=np.float64)
    atoms = [np.broadcast_to(np.asarray(a, dtype=np.float64), x.shape) for a in prior.atoms]
    logits = np.empty(len(atoms))
    for i, atom in enumerate(atoms):
        diff = x - atom
        logits[i] = -float(np.dot(diff.ravel(), diff.ravel())) / (2.0 * sigma * sigma)
    if prior.weights is not None:
        logits += np.log(np.asarray(prior.weights, dtype=np.float64))
    logits -= logits.max()
    resp = np.exp(logits)
    resp /= resp.sum()
    out = np.zeros_like(x)
    for w, atom in zip(resp, atoms):
        out += w * atom
    if not np.all(np.isfinite(out)):
        raise DomainError("mixture posterior mean is non-finite")
    return out.astype(np.asarray(x_t).dtype, copy=False)


def closed_form_gaussian_flow(
    x_start: np.ndarray, sigma_start: float, sigma_end: float, prior: GaussianPrior
) -> np.ndarray:
    """Exact endpoint of the flow ODE under the Gaussian prior.

    Integrating dx/dsigma = sigma * (x - mean) / (sigma^2 + scale^2) from
    sigma_start down to sigma_end contracts the offset from the mean by
    sqrt((sigma_end^2 + scale^2) / (sigma_start^2 + scale^2)).
    """
    if not 0 <= sigma_end <= sigma_start:
        raise DomainError(
            f"need 0 <= sigma_end <= sigma_start, got {sigma_end}, {sigma_start}"
        )
    s2 = float(prior.scale) * float(prior.scale)
    factor = float(
        np.sqrt((sigma_end * sigma_end + s2) / (sigma_start * sigma_start + s2))
    )
    return prior.mean + (x_start - prior.mean) * factor


class GaussianDenoiser:
    """Denoiser backend returning the exact Gaussian posterior mean."""

    def __init__(self, prior: GaussianPrior | None = None):
        self.prior = prior or GaussianPrior()

    def predict(self, x_t, sigma, condition=b""):
        return gaussian_posterior_mean(x_t, sigma, self.prior)


class MixtureDenoiser:
    """Denoiser backend returning the exact mixture posterior mean."""

    def __init__(self, prior: MixturePrior):
        self.prior = prior

    def predict(self, x_t, sigma, condition=b""):
        return mixture_posterior_mean(x_t, sigma, self.prior)


def load_prior(path) -> GaussianPrior | MixturePrior:
    """Load a prior description from JSON.

    Gaussian: {"kind": "gaussian", "mean": 0.0, "scale": 1.0} where mean may
    instead be given as {"mean_tensor": "mu.vxt"}. Mixture: {"kind":
    "mixture", "atoms": ["a.vxt", ...], "weights": [...]} with tensor-file
    paths resolved relative to the JSON file.
    """
    from pathlib import Path

    from .bridge import load_tensor

    path = Path(path)
    data = json.loads(path.read_text())
    kind = data.get("kind")
    if kind == "gaussian":
        if "mean_tensor" in data:
            mean = load_tensor(path.parent / data["mean_tensor"])
        else:
            mean = float(data.get("mean", 0.0))
        return GaussianPrior(mean=mean, scale=float(data.get("scale", 1.0)))
    if kind == "mixture":
        atoms = tuple(load_tensor(path.parent / p) for p in data["atoms"])
        weights = tuple(data["weights"]) if "weights" in data else None
        return MixturePrior(atoms=atoms, weights=weights)
    raise ConfigError(f"unknown prior kind {kind!r}")


def make_denoiser(prior: GaussianPrior | MixturePrior):
    if isinstance(prior, GaussianPrior):
        return GaussianDenoiser(prior)
    return MixtureDenoiser(prior)
