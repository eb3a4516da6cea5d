# This file is part of ts_knolling
#
# Developed for the LSST Telescope and Site Systems.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

__all__ = [
    "STD_FLOOR",
    "GmmParams",
    "MixtureTensors",
    "GmmHead",
    "SamplerConfig",
    "gmm_sample",
]

import dataclasses
import math

import numpy as np
import torch
import torch.nn.functional as F

# Lower bound of predicted stds, in normalized coordinates.
STD_FLOOR = 1e-4

WEIGHT_TOLERANCE = 1e-6


@dataclasses.dataclass(frozen=True)
class GmmParams:
    """Diagonal Gaussian mixture over a 2D position, in meters.

    Parameters
    ----------
    means : `numpy.ndarray`
        Component means, shape (K, 2).
    stds : `numpy.ndarray`
        Component standard deviations, shape (K, 2), strictly positive.
    weights : `numpy.ndarray`
        Mixture weights, shape (K,), non-negative and summing to one.
    """

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64).reshape(-1, 2)
        stds = np.asarray(self.stds, dtype=np.float64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not len(means) == len(stds) == len(weights):
            raise ValueError(
                f"Component count mismatch: {len(means)} means, "
                f"{len(stds)} stds, {len(weights)} weights."
            )
        if not np.all(stds > 0.0):
            raise ValueError("Mixture stds must be strictly positive.")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(
                f"Mixture weights must be >= 0 and sum to 1, got {weights}."
            )
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", weights)

    @property
    def num_components(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        """Mean of the whole mixture, shape (2,)."""
        return self.weights @ self.means


@dataclasses.dataclass
class MixtureTensors:
    """Batched mixture output of a network, in normalized coordinates.

    Attributes
    ----------
    log_weights : `torch.Tensor`
        Log mixture weights, shape (B, N, K).
    means : `torch.Tensor`
        Means, shape (B, N, K, 2).
    stds : `torch.Tensor`
        Standard deviations, shape (B, N, K, 2).
    scale : `float`
        Meters per normalized unit.
    """

    log_weights: torch.Tensor
    means: torch.Tensor
    stds: torch.Tensor
    scale: float = 1.0

    def mode(self) -> torch.Tensor:
        """Mean of the heaviest component per slot, shape (B, N, 2)."""
        index = self.log_weights.argmax(dim=-1)
        return torch.gather(
            self.means, -2, index[..., None, None].expand(*index.shape, 1, 2)
        ).squeeze(-2)

    def params(self, batch: int, slot: int) -> GmmParams:
        """Mixture of one slot, converted to meters."""
        return GmmParams(
            means=self.means[batch, slot].detach().double().cpu().numpy() * self.scale,
            stds=self.stds[batch, slot].detach().double().cpu().numpy() * self.scale,
            weights=self.log_weights[batch, slot].detach().double().exp().cpu().numpy(),
        )


class GmmHead(torch.nn.Module):
    """Linear map from features to mixture parameters.

    Weights go through a softmax and stds through a softplus with a small
    floor.
    """

    def __init__(self, in_dim: int, num_mixtures: int, scale: float) -> None:
        super().__init__()
        self.num_mixtures = num_mixtures
        self.scale = scale
        self.linear = torch.nn.Linear(in_dim, num_mixtures * 5)

    def forward(self, features: torch.Tensor) -> MixtureTensors:
        raw = self.linear(features)
        logits, means, raw_stds = torch.split(
            raw,
            [self.num_mixtures, 2 * self.num_mixtures, 2 * self.num_mixtures],
            dim=-1,
        )
        shape = raw.shape[:-1] + (self.num_mixtures, 2)
        return MixtureTensors(
            log_weights=F.log_softmax(logits, dim=-1),
            means=means.reshape(shape),
            stds=F.softplus(raw_stds.reshape(shape)) + STD_FLOOR,
            scale=self.scale,
        )


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    """Sampling settings.

    Parameters
    ----------
    temperature : `float`
        0 returns the heaviest component's mean; larger values sample from
        sharpened (T < 1) or flattened (T > 1) weights and scaled stds.
    seed : `int`
        Seed of the sampling generator.
    """

    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.temperature) and self.temperature >= 0.0):
            raise ValueError(
                f"temperature must be finite and >= 0, got {self.temperature}."
            )


def gmm_sample(
    params: GmmParams,
    s: SamplerConfig = SamplerConfig(),
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Draw a position from a mixture.

    With temperature 0 the mean of the heaviest component is returned (the
    lowest index wins ties). Otherwise a component is drawn with
    probabilities proportional to ``w**(1/T)`` and the position is drawn from
    ``Normal(mean, T * std)``.

    Parameters
    ----------
    params : `GmmParams`
        Mixture to sample.
    s : `SamplerConfig`
        Temperature and seed.
    rng : `numpy.random.Generator`, optional
        Generator to draw from; a new one seeded with ``s.seed`` if `None`.

    Returns
    -------
    position : `tuple` [`float`, `float`]
        Sampled (x, y) in meters.
    """
    if s.temperature == 0.0:
        x, y = params.means[int(np.argmax(params.weights))]
        return float(x), float(y)

    rng = rng if rng is not None else np.random.default_rng(s.seed)
    with np.errstate(divide="ignore"):
        logits = np.log(params.weights) / s.temperature
    probabilities = np.exp(logits - logits.max())
    probabilities /= probabilities.sum()
    component = rng.choice(params.num_components, p=probabilities)
    x, y = rng.normal(params.means[component], s.temperature * params.stds[component])
    return float(x), float(y)
