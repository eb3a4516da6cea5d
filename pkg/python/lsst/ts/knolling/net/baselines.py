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

__all__ = ["LstmBaseline", "MlpBaseline", "baseline_forward"]

import typing

import torch

from ..core import ObjectSpec
from ..encode import SinusoidalLift
from .base import BaseKnollingModel, EncoderState, ModelConfig
from .mixture import STD_FLOOR, GmmHead, GmmParams, MixtureTensors


class LstmBaseline(BaseKnollingModel):
    """Recurrent baseline.

    Step ``t`` reads the lifted size of object ``t``, the lifted position of
    slot ``t - 1`` (zeros if not placed) and a placed flag, and emits a
    mixture for slot ``t``.
    """

    kind = "lstm"

    def __init__(self, config: ModelConfig = ModelConfig()) -> None:
        super().__init__(config)
        self.lift = SinusoidalLift(config.lift)
        lifted = self.lift.output_dim(2)
        self.lstm = torch.nn.LSTM(
            input_size=2 * lifted + 1,
            hidden_size=config.lstm_hidden,
            num_layers=config.lstm_layers,
            batch_first=True,
        )
        self.head = GmmHead(config.lstm_hidden, config.num_mixtures, config.position_scale)

    def encode(self, sizes: torch.Tensor, padding: torch.Tensor) -> EncoderState:
        return EncoderState(sizes=sizes, padding=padding)

    def decode(
        self, state: EncoderState, context: torch.Tensor, known: torch.Tensor
    ) -> MixtureTensors:
        previous = torch.cat([torch.zeros_like(context[:, :1]), context[:, :-1]], dim=1)
        previous_known = torch.cat(
            [torch.zeros_like(known[:, :1]), known[:, :-1]], dim=1
        ).to(context.dtype)[..., None]
        inputs = torch.cat(
            [
                self.lift(state.sizes / self.config.size_scale),
                self.lift(previous / self.config.position_scale) * previous_known,
                previous_known,
            ],
            dim=-1,
        )
        features, _ = self.lstm(inputs)
        return self.head(features)


class MlpBaseline(BaseKnollingModel):
    """Feed-forward baseline.

    All ``max_objects`` slots (lifted size plus a presence flag, zeros for
    absent slots) are read at once and all ``2 * max_objects`` coordinates
    are emitted at once. The output is a single-component mixture per slot
    with a learned, input-independent std, so it trains with the same loss
    as the other models. Placed positions are ignored.
    """

    kind = "mlp"

    def __init__(self, config: ModelConfig = ModelConfig()) -> None:
        super().__init__(config)
        self.lift = SinusoidalLift(config.lift)
        slot_features = self.lift.output_dim(2) + 1
        outputs = 2 * config.max_objects
        self.mlp = torch.nn.Sequential(
            torch.nn.Linear(config.max_objects * slot_features, config.mlp_hidden),
            torch.nn.ReLU(),
            torch.nn.Linear(config.mlp_hidden, config.mlp_hidden),
            torch.nn.ReLU(),
            torch.nn.Linear(config.mlp_hidden, outputs),
        )
        self.log_std = torch.nn.Parameter(torch.full((outputs,), -3.0))

    def encode(self, sizes: torch.Tensor, padding: torch.Tensor) -> EncoderState:
        return EncoderState(sizes=sizes, padding=padding)

    def coordinates(self, sizes: torch.Tensor, padding: torch.Tensor) -> torch.Tensor:
        """Raw normalized coordinates for every slot, shape (B, 2 * max_objects)."""
        batch, n = sizes.shape[:2]
        if n > self.config.max_objects:
            raise ValueError(f"At most {self.config.max_objects} slots, got {n}.")
        present = (~padding).to(sizes.dtype)[..., None]
        slots = torch.cat([self.lift(sizes / self.config.size_scale), present], dim=-1)
        slots = slots * present
        full = torch.zeros(
            batch, self.config.max_objects, slots.shape[-1], dtype=sizes.dtype
        )
        full[:, :n] = slots
        return self.mlp(full.flatten(start_dim=1))

    def decode(
        self, state: EncoderState, context: torch.Tensor, known: torch.Tensor
    ) -> MixtureTensors:
        batch, n = state.sizes.shape[:2]
        means = self.coordinates(state.sizes, state.padding).view(
            batch, self.config.max_objects, 1, 2
        )[:, :n]
        stds = (self.log_std.exp() + STD_FLOOR).view(self.config.max_objects, 1, 2)[:n]
        return MixtureTensors(
            log_weights=torch.zeros(batch, n, 1, dtype=means.dtype),
            means=means,
            stds=stds.expand_as(means),
            scale=self.config.position_scale,
        )


def baseline_forward(
    model: LstmBaseline | MlpBaseline,
    objects: typing.Sequence[ObjectSpec],
    placed: typing.Sequence[tuple[float, float] | None] | None = None,
) -> list[GmmParams]:
    """Mixtures of a baseline for every slot of one scene.

    Parameters
    ----------
    model : `LstmBaseline` or `MlpBaseline`
        Baseline to run.
    objects : `list` [`ObjectSpec`]
        Objects in slot order.
    placed : `list` [`tuple` [`float`, `float`] or `None`], optional
        Placed positions per slot; all masked if `None`. The LSTM conditions
        slot ``t`` on slot ``t - 1``; the MLP ignores them.

    Returns
    -------
    params : `list` [`GmmParams`]
        One mixture per object, in slot order.
    """
    if not isinstance(model, (LstmBaseline, MlpBaseline)):
        raise TypeError(f"Not a baseline model: {type(model).__name__}.")
    state = model.forward_encoder(objects)
    n = len(objects)
    placed = list(placed) if placed is not None else [None] * n
    if len(placed) != n:
        raise ValueError(f"Expected {n} placed entries, got {len(placed)}.")
    context = torch.tensor(
        [[position if position is not None else (0.0, 0.0) for position in placed]],
        dtype=model.dtype,
    )
    known = torch.tensor([[position is not None for position in placed]])
    with torch.no_grad():
        mixture = model.decode(state, context, known)
    return [mixture.params(0, slot) for slot in range(n)]
