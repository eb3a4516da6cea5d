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
    "MODEL_MAGIC",
    "MODEL_FORMAT_VERSION",
    "MODEL_KINDS",
    "ModelFormatError",
    "make_model",
    "save_model",
    "load_model",
]

import dataclasses
import os
import struct
import typing

import numpy as np
import torch
import yaml

from .base import BaseKnollingModel, ModelConfig
from .baselines import LstmBaseline, MlpBaseline
from .transformer import KnollingTransformer

MODEL_MAGIC = b"KNOLLMDL"
MODEL_FORMAT_VERSION = 1

MODEL_KINDS: dict[str, type[BaseKnollingModel]] = {
    model_class.kind: model_class
    for model_class in (KnollingTransformer, LstmBaseline, MlpBaseline)
}


class ModelFormatError(ValueError):
    """Raised when a model file is not readable."""


def make_model(kind: str, config: ModelConfig = ModelConfig()) -> BaseKnollingModel:
    """Construct a model by kind name: transformer, lstm or mlp."""
    try:
        model_class = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"Unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}."
        ) from None
    return model_class(config)


def _write_blob(stream: typing.BinaryIO, data: bytes) -> None:
    stream.write(struct.pack("<I", len(data)))
    stream.write(data)


def _read_exact(stream: typing.BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise ModelFormatError("Unexpected end of model file.")
    return data


def _read_blob(stream: typing.BinaryIO) -> bytes:
    (size,) = struct.unpack("<I", _read_exact(stream, 4))
    return _read_exact(stream, size)


def save_model(path: str | os.PathLike, model: BaseKnollingModel) -> None:
    """Write a model file.

    Layout: magic, format version (uint16), model kind, YAML config, tensor
    count, then per tensor its name, rank, shape and float32 little-endian
    values, in `state_dict` order. Strings are length-prefixed UTF-8.
    """
    state = model.state_dict()
    with open(path, "wb") as stream:
        stream.write(MODEL_MAGIC)
        stream.write(struct.pack("<H", MODEL_FORMAT_VERSION))
        _write_blob(stream, model.kind.encode())
        _write_blob(
            stream,
            yaml.safe_dump(dataclasses.asdict(model.config), sort_keys=True).encode(),
        )
        stream.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            values = tensor.detach().cpu().numpy().astype("<f4")
            _write_blob(stream, name.encode())
            stream.write(struct.pack("<I", values.ndim))
            stream.write(struct.pack(f"<{values.ndim}I", *values.shape))
            stream.write(values.tobytes())


def load_model(path: str | os.PathLike) -> BaseKnollingModel:
    """Read a model written by `save_model`.

    Raises
    ------
    ModelFormatError
        If the magic, version, kind, config or tensor list do not match.
    """
    with open(path, "rb") as stream:
        if _read_exact(stream, len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ModelFormatError(f"{path} is not a knolling model file.")
        (version,) = struct.unpack("<H", _read_exact(stream, 2))
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"Unsupported model format version {version}; "
                f"expected {MODEL_FORMAT_VERSION}."
            )
        kind = _read_blob(stream).decode()
        try:
            config = ModelConfig(**yaml.safe_load(_read_blob(stream).decode()))
            model = make_model(kind, config)
        except (TypeError, ValueError) as e:
            raise ModelFormatError(f"Invalid model header: {e}") from e

        expected = model.state_dict()
        (count,) = struct.unpack("<I", _read_exact(stream, 4))
        if count != len(expected):
            raise ModelFormatError(
                f"File has {count} tensors; a {kind} model has {len(expected)}."
            )
        state = {}
        for _ in range(count):
            name = _read_blob(stream).decode()
            (ndim,) = struct.unpack("<I", _read_exact(stream, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(stream, 4 * ndim))
            if name not in expected or tuple(expected[name].shape) != shape:
                raise ModelFormatError(f"Unexpected tensor {name} with shape {shape}.")
            values = np.frombuffer(
                _read_exact(stream, 4 * int(np.prod(shape, dtype=np.int64))), dtype="<f4"
            )
            state[name] = torch.from_numpy(values.reshape(shape).astype(np.float32))
    model.load_state_dict(state)
    model.eval()
    return model
