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
    "ModelConfig",
    "EncoderState",
    "BaseKnollingModel",
    "predict_layout",
    "count_params",
    "within_budget",
    "PARAMETER_BUDGETS",
]

import abc
import dataclasses
import typing

import numpy as np
import torch

from ..core import MAX_OBJECT_SIZE, MAX_OBJECTS, ObjectSpec, Workspace
from ..encode import LiftConfig
from .mixture import GmmParams, MixtureTensors, SamplerConfig, gmm_sample

# Reference parameter counts the three architectures are sized against.
PARAMETER_BUDGETS = {"transformer": 87_458, "lstm": 86_858, "mlp": 87_788}


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture settings shared by the knolling model and baselines.

    Parameters
    ----------
    d_model : `int`
        Transformer token width.
    num_heads : `int`
        Attention heads; must divide ``d_model``.
    num_encoder_layers, num_decoder_layers : `int`
        Transformer depth.
    feedforward_dim : `int`
        Transformer feed-forward width.
    num_mixtures : `int`
        Mixture components per position.
    max_objects : `int`
        Number of slots.
    dropout : `float`
        Dropout probability inside the transformer.
    num_frequencies : `int`
        Frequencies of the sinusoidal lift.
    lstm_hidden, lstm_layers : `int`
        LSTM baseline shape.
    mlp_hidden : `int`
        Width of the two hidden layers of the MLP baseline.
    size_scale : `float`
        Object sizes are divided by this before the lift (m).
    position_scale : `float`
        Positions are divided by this before the lift and the loss (m).
    """

    d_model: int = 32
    num_heads: int = 4
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    feedforward_dim: int = 224
    num_mixtures: int = 5
    max_objects: int = MAX_OBJECTS
    dropout: float = 0.0
    num_frequencies: int = 5
    lstm_hidden: int = 76
    lstm_layers: int = 2
    mlp_hidden: int = 196
    size_scale: float = MAX_OBJECT_SIZE
    position_scale: float = Workspace().width

    def __post_init__(self) -> None:
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by "
                f"num_heads={self.num_heads}."
            )
        for name in (
            "num_mixtures",
            "max_objects",
            "num_encoder_layers",
            "num_decoder_layers",
            "lstm_layers",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}.")

    @property
    def lift(self) -> LiftConfig:
        return LiftConfig(num_frequencies=self.num_frequencies)


@dataclasses.dataclass
class EncoderState:
    """What the decoder needs from the encoder pass.

    Attributes
    ----------
    sizes : `torch.Tensor`
        Object sizes in meters, shape (B, N, 2).
    padding : `torch.Tensor`
        True on padding slots, shape (B, N).
    memory : `torch.Tensor` or `None`
        Contextual slot vectors, shape (B, N, d_model); `None` for models
        without an encoder.
    """

    sizes: torch.Tensor
    padding: torch.Tensor
    memory: torch.Tensor | None = None

    @property
    def num_slots(self) -> int:
        return self.sizes.shape[1]


class BaseKnollingModel(torch.nn.Module, abc.ABC):
    """Base class of the position predictors.

    Every model maps object sizes plus the positions already placed to a
    mixture per slot. Slot ``t`` is conditioned only on slots before ``t``,
    so the same `forward` serves teacher-forced training and step-by-step
    decoding.

    Parameters
    ----------
    config : `ModelConfig`
        Architecture settings.
    """

    kind: typing.ClassVar[str] = ""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config

    @abc.abstractmethod
    def encode(self, sizes: torch.Tensor, padding: torch.Tensor) -> EncoderState:
        """Run the encoder over padded sizes (m), shape (B, N, 2)."""
        raise NotImplementedError()

    @abc.abstractmethod
    def decode(
        self, state: EncoderState, context: torch.Tensor, known: torch.Tensor
    ) -> MixtureTensors:
        """Predict a mixture for every slot.

        Parameters
        ----------
        state : `EncoderState`
            Output of `encode`.
        context : `torch.Tensor`
            Positions of placed slots (m), shape (B, N, 2); ignored where
            ``known`` is false.
        known : `torch.Tensor`
            Boolean mask of placed slots, shape (B, N).
        """
        raise NotImplementedError()

    def forward(
        self,
        sizes: torch.Tensor,
        context: torch.Tensor,
        known: torch.Tensor,
        padding: torch.Tensor | None = None,
    ) -> MixtureTensors:
        if padding is None:
            padding = torch.zeros(sizes.shape[:2], dtype=torch.bool, device=sizes.device)
        return self.decode(self.encode(sizes, padding), context, known)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def objects_to_tensor(self, objects: typing.Sequence[ObjectSpec]) -> torch.Tensor:
        """Sizes of ``objects`` as a (1, n, 2) tensor."""
        n = len(objects)
        if not 1 <= n <= self.config.max_objects:
            raise ValueError(
                f"Expected 1 to {self.config.max_objects} objects, got {n}."
            )
        return torch.tensor(
            [[[spec.width, spec.length] for spec in objects]], dtype=self.dtype
        )

    def forward_encoder(self, objects: typing.Sequence[ObjectSpec]) -> EncoderState:
        """Encode one scene of 1 to ``max_objects`` objects.

        Raises
        ------
        ValueError
            If the object count is out of range.
        """
        sizes = self.objects_to_tensor(objects)
        padding = torch.zeros(sizes.shape[:2], dtype=torch.bool)
        return self.encode(sizes, padding)

    def decode_step(
        self,
        state: EncoderState,
        placed: typing.Sequence[tuple[float, float] | None],
        step: int,
    ) -> GmmParams:
        """Mixture for slot ``step`` of the first scene in ``state``.

        Parameters
        ----------
        state : `EncoderState`
            Output of `forward_encoder`.
        placed : `list` [`tuple` [`float`, `float`] or `None`]
            One entry per slot: the placed position, or `None` for a masked
            slot. Only entries before ``step`` influence the result.
        step : `int`
            Slot to predict.

        Raises
        ------
        ValueError
            If ``step`` or the length of ``placed`` does not match the scene.
        """
        n = state.num_slots
        if not 0 <= step < n:
            raise ValueError(f"step {step} outside [0, {n}).")
        if len(placed) != n:
            raise ValueError(f"Expected {n} placed entries, got {len(placed)}.")
        context = torch.tensor(
            [[position if position is not None else (0.0, 0.0) for position in placed]],
            dtype=self.dtype,
        )
        known = torch.tensor([[position is not None for position in placed]])
        return self.decode(state, context, known).params(0, step)


def predict_layout(
    model: BaseKnollingModel,
    objects: typing.Sequence[ObjectSpec],
    s: SamplerConfig = SamplerConfig(),
) -> list[tuple[float, float]]:
    """Predict target positions autoregressively.

    The encoder runs once; then each slot is decoded from the positions
    sampled for the slots before it, starting from a fully masked scene.

    Parameters
    ----------
    model : `BaseKnollingModel`
        Trained model, in eval mode.
    objects : `list` [`ObjectSpec`]
        Objects in slot order.
    s : `SamplerConfig`
        Temperature and seed.

    Returns
    -------
    targets : `list` [`tuple` [`float`, `float`]]
        Predicted (x, y) per object, meters.
    """
    rng = np.random.default_rng(s.seed)
    with torch.no_grad():
        state = model.forward_encoder(objects)
        placed: list[tuple[float, float] | None] = [None] * len(objects)
        for step in range(len(objects)):
            placed[step] = gmm_sample(model.decode_step(state, placed, step), s, rng)
    return typing.cast(list[tuple[float, float]], placed)


def count_params(model: torch.nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(parameter.numel() for parameter in model.parameters() if parameter.requires_grad)


def within_budget(count: int, reference: int, tolerance: float = 0.1) -> bool:
    """Is ``count`` within ``tolerance`` (relative) of ``reference``?"""
    return abs(count - reference) <= tolerance * reference
