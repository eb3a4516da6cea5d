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

__all__ = ["KnollingTransformer", "causal_mask"]

import torch

from ..encode import SinusoidalLift, index_encoding_table
from .base import BaseKnollingModel, EncoderState, ModelConfig
from .mixture import GmmHead, MixtureTensors


def causal_mask(size: int, device: torch.device | None = None) -> torch.Tensor:
    """Boolean attention mask; True above the diagonal (not attended)."""
    return torch.triu(
        torch.ones(size, size, dtype=torch.bool, device=device), diagonal=1
    )


class KnollingTransformer(BaseKnollingModel):
    """Encoder-decoder transformer with a Gaussian mixture head.

    The encoder sees the lifted sizes of all objects. Decoder token ``t``
    carries the lifted size of object ``t`` plus the embedding of the
    position placed in slot ``t - 1``, or the learned mask token when that
    slot is not placed yet (always the case for token 0). With a causal
    mask, the mixture for slot ``t`` therefore depends only on positions of
    slots before ``t``.
    """

    kind = "transformer"

    def __init__(self, config: ModelConfig = ModelConfig()) -> None:
        super().__init__(config)
        self.lift = SinusoidalLift(config.lift)
        lifted = self.lift.output_dim(2)

        self.encoder_input = torch.nn.Linear(lifted, config.d_model)
        self.decoder_input = torch.nn.Linear(lifted, config.d_model)
        self.position_input = torch.nn.Linear(lifted, config.d_model, bias=False)
        self.mask_token = torch.nn.Parameter(torch.randn(config.d_model) * 0.02)
        self.register_buffer(
            "index_table",
            torch.from_numpy(
                index_encoding_table(config.max_objects, config.d_model)
            ).float(),
            persistent=False,
        )

        self.encoder = torch.nn.TransformerEncoder(
            torch.nn.TransformerEncoderLayer(
                config.d_model,
                config.num_heads,
                dim_feedforward=config.feedforward_dim,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
            ),
            num_layers=config.num_encoder_layers,
            norm=torch.nn.LayerNorm(config.d_model),
            enable_nested_tensor=False,
        )
        self.decoder = torch.nn.TransformerDecoder(
            torch.nn.TransformerDecoderLayer(
                config.d_model,
                config.num_heads,
                dim_feedforward=config.feedforward_dim,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
            ),
            num_layers=config.num_decoder_layers,
            norm=torch.nn.LayerNorm(config.d_model),
        )
        self.head = GmmHead(config.d_model, config.num_mixtures, config.position_scale)

    def encode(self, sizes: torch.Tensor, padding: torch.Tensor) -> EncoderState:
        n = sizes.shape[1]
        tokens = self.encoder_input(self.lift(sizes / self.config.size_scale))
        tokens = tokens + self.index_table[:n].to(tokens.dtype)
        memory = self.encoder(tokens, src_key_padding_mask=padding)
        return EncoderState(sizes=sizes, padding=padding, memory=memory)

    def decode(
        self, state: EncoderState, context: torch.Tensor, known: torch.Tensor
    ) -> MixtureTensors:
        sizes = state.sizes
        n = sizes.shape[1]
        previous = torch.cat(
            [torch.zeros_like(context[:, :1]), context[:, :-1]], dim=1
        )
        previous_known = torch.cat(
            [torch.zeros_like(known[:, :1]), known[:, :-1]], dim=1
        )
        position = self.position_input(
            self.lift(previous / self.config.position_scale)
        )
        position = torch.where(
            previous_known[..., None], position, self.mask_token.expand_as(position)
        )
        tokens = (
            self.decoder_input(self.lift(sizes / self.config.size_scale))
            + position
            + self.index_table[:n].to(sizes.dtype)
        )
        features = self.decoder(
            tokens,
            state.memory,
            tgt_mask=causal_mask(n, device=sizes.device),
            memory_key_padding_mask=state.padding,
        )
        return self.head(features)
