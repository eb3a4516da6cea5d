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
    "LiftConfig",
    "lift_frequencies",
    "lift_dimension",
    "sinusoidal_lift",
    "index_encoding",
    "index_encoding_table",
    "SinusoidalLift",
]

import dataclasses
import math
import typing

import numpy as np
import torch

from .core import MAX_OBJECTS


@dataclasses.dataclass(frozen=True)
class LiftConfig:
    """Sinusoidal feature lift settings.

    Frequencies are ``2**k * base_wavelength`` for ``k = 0 .. num_frequencies-1``.
    """

    num_frequencies: int = 5
    include_input: bool = True
    base_wavelength: float = math.pi

    def __post_init__(self) -> None:
        if self.num_frequencies < 1:
            raise ValueError(
                f"num_frequencies must be >= 1, got {self.num_frequencies}."
            )


def lift_frequencies(cfg: LiftConfig) -> np.ndarray:
    """Angular frequencies of the lift, shape (num_frequencies,)."""
    return cfg.base_wavelength * 2.0 ** np.arange(cfg.num_frequencies)


def lift_dimension(input_dim: int, cfg: LiftConfig) -> int:
    """Size of the lifted vector for ``input_dim`` scalars."""
    return input_dim * (int(cfg.include_input) + 2 * cfg.num_frequencies)


def sinusoidal_lift(
    v: typing.Sequence[float] | np.ndarray, cfg: LiftConfig = LiftConfig()
) -> np.ndarray:
    """Lift scalars into sine/cosine features.

    Each scalar ``p`` becomes ``[p, sin(f0 p), cos(f0 p), ..., sin(f4 p),
    cos(f4 p)]`` and the blocks are concatenated in input order. Leading
    dimensions are preserved; the last dimension is lifted.

    Parameters
    ----------
    v : `numpy.ndarray` or sequence of `float`
        Values to lift.
    cfg : `LiftConfig`, optional
        Lift settings.

    Returns
    -------
    features : `numpy.ndarray`
        Array of shape ``v.shape[:-1] + (lift_dimension(v.shape[-1]),)``.

    Raises
    ------
    ValueError
        If any input is not finite.
    """
    values = np.asarray(v, dtype=np.float64)
    if values.ndim == 0:
        values = values.reshape(1)
    if not np.all(np.isfinite(values)):
        raise ValueError("sinusoidal_lift input must be finite.")

    angles = values[..., None] * lift_frequencies(cfg)
    trig = np.stack([np.sin(angles), np.cos(angles)], axis=-1).reshape(
        values.shape + (2 * cfg.num_frequencies,)
    )
    if cfg.include_input:
        trig = np.concatenate([values[..., None], trig], axis=-1)
    return trig.reshape(values.shape[:-1] + (-1,))


def index_encoding(slot: int, d_model: int, max_objects: int = MAX_OBJECTS) -> np.ndarray:
    """Sine/cosine token for a slot index.

    Even components are ``sin(slot / 10000**(2i/d_model))``, odd components
    the matching cosine.

    Raises
    ------
    ValueError
        If ``slot`` is outside ``[0, max_objects)``.
    """
    if not 0 <= slot < max_objects:
        raise ValueError(f"Slot {slot} outside [0, {max_objects}).")
    pairs = np.arange(0, d_model, 2, dtype=np.float64)
    angles = slot / np.power(10000.0, pairs / d_model)
    encoding = np.zeros(d_model)
    encoding[0::2] = np.sin(angles)
    encoding[1::2] = np.cos(angles[: d_model // 2])
    return encoding


def index_encoding_table(max_objects: int, d_model: int) -> np.ndarray:
    """Stacked index encodings for every slot, shape (max_objects, d_model)."""
    return np.stack(
        [index_encoding(slot, d_model, max_objects) for slot in range(max_objects)]
    )


class SinusoidalLift(torch.nn.Module):
    """Tensor version of `sinusoidal_lift` used inside the networks."""

    def __init__(self, cfg: LiftConfig = LiftConfig()) -> None:
        super().__init__()
        self.cfg = cfg
        self.register_buffer(
            "frequencies",
            torch.from_numpy(lift_frequencies(cfg)),
            persistent=False,
        )

    def output_dim(self, input_dim: int) -> int:
        return lift_dimension(input_dim, self.cfg)

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        angles = values[..., None] * self.frequencies.to(values.dtype)
        trig = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(
            start_dim=-2
        )
        if self.cfg.include_input:
            trig = torch.cat([values[..., None], trig], dim=-1)
        return trig.flatten(start_dim=-2)
