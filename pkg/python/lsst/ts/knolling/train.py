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
    "NonFiniteGradientError",
    "Phase",
    "TrainConfig",
    "CurriculumSpec",
    "EpochStats",
    "TrainResult",
    "AdamState",
    "gmm_nll",
    "mixture_nll",
    "adam_step",
    "records_to_tensors",
    "train_phase",
    "train_curriculum",
    "write_training_log",
    "TRAINING_LOG_COLUMNS",
]

import copy
import csv
import dataclasses
import enum
import logging
import math
import os
import time
import typing

import torch

from .core import MAX_OBJECTS, ScenarioRecord
from .net.base import BaseKnollingModel
from .net.mixture import GmmParams, MixtureTensors

TRAINING_LOG_COLUMNS = ("epoch", "train_nll", "val_nll", "lr", "wall_seconds")

LOG_TWO_PI = math.log(2.0 * math.pi)


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient holds NaN or infinite values.

    Parameters
    ----------
    name : `str`
        Name of the offending parameter.
    """

    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"Non-finite gradient for parameter {name}.")


class Phase(enum.Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimization settings of one training phase."""

    learning_rate: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    validation_fraction: float = 0.02

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}.")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError(
                "batch_size, max_epochs and early_stop_patience must be >= 1."
            )
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}."
            )


@dataclasses.dataclass(frozen=True)
class CurriculumSpec:
    """How a phase reshapes the training records.

    Parameters
    ----------
    phase : `Phase`
        Pretraining or fine-tuning.
    n_range : `tuple` [`int`, `int`]
        Object counts seen in this phase. Pretraining truncates larger
        records to a random count inside the range.
    teacher_prefix : `int`
        Pretraining only: up to this many leading slots are given as already
        placed and excluded from the loss (drawn per record).
    encoder_mask_prob : `float`
        Fine-tuning only: probability of truncating a record to fewer
        objects.
    rollout_prob : `float`
        Probability per batch of replacing the decoder context by the
        model's own zero-temperature predictions.
    """

    phase: Phase = Phase.FINETUNE
    n_range: tuple[int, int] = (2, MAX_OBJECTS)
    teacher_prefix: int = 0
    encoder_mask_prob: float = 0.0
    rollout_prob: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase", Phase(self.phase))
        n_min, n_max = self.n_range
        if self.phase is Phase.PRETRAIN and not 2 <= n_min <= n_max <= 5:
            raise ValueError(f"Pretraining n_range must lie in [2, 5], got {self.n_range}.")
        if self.phase is Phase.FINETUNE and tuple(self.n_range) != (2, MAX_OBJECTS):
            raise ValueError(
                f"Fine-tuning n_range must be (2, {MAX_OBJECTS}), got {self.n_range}."
            )
        if self.teacher_prefix < 0:
            raise ValueError(f"teacher_prefix must be >= 0, got {self.teacher_prefix}.")
        for name in ("encoder_mask_prob", "rollout_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}.")

    @classmethod
    def pretrain(cls, **kwargs: typing.Any) -> "CurriculumSpec":
        return cls(**{"phase": Phase.PRETRAIN, "n_range": (2, 5), "teacher_prefix": 2, **kwargs})

    @classmethod
    def finetune(cls, **kwargs: typing.Any) -> "CurriculumSpec":
        return cls(**{"phase": Phase.FINETUNE, "encoder_mask_prob": 0.5, **kwargs})


@dataclasses.dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_nll: float
    val_nll: float
    lr: float
    wall_seconds: float


@dataclasses.dataclass
class TrainResult:
    model: BaseKnollingModel
    history: list[EpochStats]

    @property
    def best_val_nll(self) -> float:
        return min(stats.val_nll for stats in self.history)


@dataclasses.dataclass
class AdamState:
    """Moment estimates of `adam_step`."""

    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def create(cls, params: typing.Mapping[str, torch.Tensor], **kwargs: typing.Any) -> "AdamState":
        return cls(
            exp_avg={name: torch.zeros_like(value) for name, value in params.items()},
            exp_avg_sq={name: torch.zeros_like(value) for name, value in params.items()},
            **kwargs,
        )


def _component_log_density(
    means: torch.Tensor, stds: torch.Tensor, targets: torch.Tensor
) -> torch.Tensor:
    """Log density of each 2D diagonal component at ``targets``."""
    z = (targets - means) / stds
    return -0.5 * (z**2).sum(-1) - torch.log(stds).sum(-1) - LOG_TWO_PI


def gmm_nll(params: GmmParams, target: tuple[float, float]) -> float:
    """Negative log-likelihood of a position under a mixture.

    Computed as ``-logsumexp(log w_k + log N(target; mean_k, std_k**2))`` in
    double precision.

    Parameters
    ----------
    params : `GmmParams`
        Mixture, meters.
    target : `tuple` [`float`, `float`]
        Position, meters.

    Returns
    -------
    nll : `float`
        Loss value.
    """
    with torch.no_grad():
        log_weights = torch.log(torch.from_numpy(params.weights))
        log_density = _component_log_density(
            torch.from_numpy(params.means),
            torch.from_numpy(params.stds),
            torch.tensor(target, dtype=torch.float64),
        )
        return float(-torch.logsumexp(log_weights + log_density, dim=-1))


def mixture_nll(
    mixture: MixtureTensors,
    targets: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean negative log-likelihood of batched targets.

    Parameters
    ----------
    mixture : `MixtureTensors`
        Model output, normalized coordinates.
    targets : `torch.Tensor`
        Normalized targets, shape (B, N, 2).
    mask : `torch.Tensor`, optional
        Boolean (B, N) mask of the slots to score.
    """
    log_density = _component_log_density(
        mixture.means, mixture.stds, targets[..., None, :]
    )
    nll = -torch.logsumexp(mixture.log_weights + log_density, dim=-1)
    if mask is None:
        return nll.mean()
    return nll[mask].mean()


def adam_step(
    params: typing.Mapping[str, torch.Tensor],
    grads: typing.Mapping[str, torch.Tensor | None],
    state: AdamState,
    lr: float,
) -> tuple[typing.Mapping[str, torch.Tensor], AdamState]:
    """One Adam update, in place.

    Missing gradients count as zero. All gradients are checked before any
    parameter changes.

    Raises
    ------
    NonFiniteGradientError
        If a gradient holds NaN or infinite values.
    """
    for name, grad in grads.items():
        if grad is not None and not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradientError(name)

    beta1, beta2 = state.betas
    state.step += 1
    bias_correction1 = 1.0 - beta1**state.step
    bias_correction2 = 1.0 - beta2**state.step
    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                grad = torch.zeros_like(param)
            exp_avg = state.exp_avg[name].mul_(beta1).add_(grad, alpha=1.0 - beta1)
            exp_avg_sq = state.exp_avg_sq[name].mul_(beta2).addcmul_(
                grad, grad, value=1.0 - beta2
            )
            denominator = (exp_avg_sq / bias_correction2).sqrt().add_(state.eps)
            param.sub_(lr * (exp_avg / bias_correction1) / denominator)
    return params, state


def records_to_tensors(
    records: typing.Sequence[ScenarioRecord],
    max_objects: int = MAX_OBJECTS,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad records into sizes (R, M, 2), targets (R, M, 2) and counts (R,)."""
    sizes = torch.zeros(len(records), max_objects, 2, dtype=dtype)
    targets = torch.zeros(len(records), max_objects, 2, dtype=dtype)
    counts = torch.zeros(len(records), dtype=torch.long)
    for index, record in enumerate(records):
        if record.n > max_objects:
            raise ValueError(f"Record {index} has {record.n} > {max_objects} objects.")
        sizes[index, : record.n] = torch.tensor(
            [[spec.width, spec.length] for spec in record.objects], dtype=dtype
        )
        targets[index, : record.n] = torch.tensor(record.targets, dtype=dtype)
        counts[index] = record.n
    return sizes, targets, counts


def _uniform_int(
    low: torch.Tensor, high: torch.Tensor, generator: torch.Generator
) -> torch.Tensor:
    """Per-element integers uniform in [low, high]."""
    draw = torch.rand(low.shape, generator=generator, dtype=torch.float64)
    return low + (draw * (high - low + 1).to(torch.float64)).floor().long().clamp(
        max=(high - low).clamp(min=0)
    )


def _curriculum_counts(
    counts: torch.Tensor, cur: CurriculumSpec, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """Effective object counts and teacher prefixes for one batch."""
    n_min, n_max = cur.n_range
    low = torch.full_like(counts, n_min).minimum(counts)
    if cur.phase is Phase.PRETRAIN:
        truncated = _uniform_int(low, torch.full_like(counts, n_max), generator)
        counts = torch.where(counts > n_max, truncated, counts)
    else:
        masked = torch.rand(counts.shape, generator=generator) < cur.encoder_mask_prob
        truncated = _uniform_int(low, (counts - 1).maximum(low), generator)
        counts = torch.where(masked & (counts > n_min), truncated, counts)

    prefix = torch.zeros_like(counts)
    if cur.phase is Phase.PRETRAIN and cur.teacher_prefix > 0:
        prefix = _uniform_int(
            prefix, (counts - 1).clamp(min=0).clamp(max=cur.teacher_prefix), generator
        )
    return counts, prefix


def _batch_loss(
    model: BaseKnollingModel,
    sizes: torch.Tensor,
    targets: torch.Tensor,
    counts: torch.Tensor,
    prefix: torch.Tensor,
    context: torch.Tensor | None = None,
) -> torch.Tensor:
    slots = torch.arange(sizes.shape[1])
    padding = slots[None, :] >= counts[:, None]
    mixture = model(sizes, targets if context is None else context, ~padding, padding)
    scored = ~padding & (slots[None, :] >= prefix[:, None])
    return mixture_nll(mixture, targets / model.config.position_scale, scored)


def _rollout_context(
    model: BaseKnollingModel,
    sizes: torch.Tensor,
    targets: torch.Tensor,
    counts: torch.Tensor,
    prefix: torch.Tensor,
) -> torch.Tensor:
    """Teacher context with unprefixed slots replaced by the model's own
    zero-temperature predictions.
    """
    slots = torch.arange(sizes.shape[1])
    padding = slots[None, :] >= counts[:, None]
    with torch.no_grad():
        mixture = model(sizes, targets, ~padding, padding)
        predicted = mixture.mode() * mixture.scale
    return torch.where((slots[None, :] < prefix[:, None])[..., None], targets, predicted)


def _validation_nll(
    model: BaseKnollingModel,
    sizes: torch.Tensor,
    targets: torch.Tensor,
    counts: torch.Tensor,
    cur: CurriculumSpec,
    batch_size: int,
) -> float:
    counts = counts.clamp(max=cur.n_range[1])
    total = 0.0
    model.eval()
    with torch.no_grad():
        for batch in torch.arange(len(counts)).split(batch_size):
            loss = _batch_loss(
                model,
                sizes[batch],
                targets[batch],
                counts[batch],
                torch.zeros_like(counts[batch]),
            )
            total += float(loss) * len(batch)
    return total / len(counts)


def train_phase(
    model: BaseKnollingModel,
    dataset: typing.Iterable[ScenarioRecord],
    cfg: TrainConfig,
    cur: CurriculumSpec,
    log: logging.Logger | None = None,
) -> TrainResult:
    """Train a model for one curriculum phase.

    Every epoch shuffles the training split, reshapes each batch with the
    curriculum and takes one `adam_step` per batch on the teacher-forced
    mixture NLL. Training stops after ``max_epochs`` or when the validation
    loss has not improved for ``early_stop_patience`` epochs; the model is
    left with its best-validation parameters.

    Parameters
    ----------
    model : `BaseKnollingModel`
        Model to train in place.
    dataset : iterable of `ScenarioRecord`
        Training records; a ``validation_fraction`` share, chosen by the
        seed, is held out.
    cfg : `TrainConfig`
        Optimization settings.
    cur : `CurriculumSpec`
        Phase settings.
    log : `logging.Logger`, optional
        Logger for per-epoch progress.

    Returns
    -------
    result : `TrainResult`
        The model and its per-epoch history.

    Raises
    ------
    ValueError
        If the dataset is empty.
    NonFiniteGradientError
        If a gradient becomes NaN or infinite.
    """
    log = log or logging.getLogger(__name__)
    records = list(dataset)
    if not records:
        raise ValueError("Cannot train on an empty dataset.")

    generator = torch.Generator().manual_seed(cfg.seed)
    sizes, targets, counts = records_to_tensors(
        records, model.config.max_objects, model.dtype
    )
    order = torch.randperm(len(records), generator=generator)
    num_validation = (
        max(1, round(cfg.validation_fraction * len(records))) if len(records) > 1 else 0
    )
    validation_index = order[:num_validation] if num_validation else order
    train_index = order[num_validation:]

    params = {
        name: parameter
        for name, parameter in model.named_parameters()
        if parameter.requires_grad
    }
    state = AdamState.create(params)
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    stale_epochs = 0
    history: list[EpochStats] = []

    log.info(
        f"Training {model.kind} ({cur.phase.value}) on {len(train_index)} records, "
        f"validating on {len(validation_index)}."
    )
    for epoch in range(cfg.max_epochs):
        start = time.monotonic()
        model.train()
        shuffled = train_index[torch.randperm(len(train_index), generator=generator)]
        total = 0.0
        for batch in shuffled.split(cfg.batch_size):
            batch_counts, prefix = _curriculum_counts(counts[batch], cur, generator)
            context = None
            if cur.rollout_prob > 0.0 and (
                float(torch.rand((), generator=generator)) < cur.rollout_prob
            ):
                context = _rollout_context(
                    model, sizes[batch], targets[batch], batch_counts, prefix
                )
            loss = _batch_loss(
                model, sizes[batch], targets[batch], batch_counts, prefix, context
            )
            model.zero_grad(set_to_none=True)
            loss.backward()
            adam_step(
                params,
                {name: parameter.grad for name, parameter in params.items()},
                state,
                cfg.learning_rate,
            )
            total += float(loss) * len(batch)

        train_nll = total / max(1, len(shuffled))
        val_nll = _validation_nll(
            model,
            sizes[validation_index],
            targets[validation_index],
            counts[validation_index],
            cur,
            cfg.batch_size,
        )
        stats = EpochStats(
            epoch=epoch,
            train_nll=train_nll,
            val_nll=val_nll,
            lr=cfg.learning_rate,
            wall_seconds=time.monotonic() - start,
        )
        history.append(stats)
        log.info(
            f"Epoch {epoch}: train_nll={train_nll:.5f} val_nll={val_nll:.5f} "
            f"({stats.wall_seconds:.1f}s)."
        )

        if val_nll < best_val:
            best_val = val_nll
            best_state = copy.deepcopy(model.state_dict())
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= cfg.early_stop_patience:
                log.info(f"No improvement for {stale_epochs} epochs; stopping.")
                break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, history=history)


def train_curriculum(
    model: BaseKnollingModel,
    dataset: typing.Iterable[ScenarioRecord],
    pretrain_cfg: TrainConfig = TrainConfig(learning_rate=1e-4),
    finetune_cfg: TrainConfig = TrainConfig(learning_rate=1e-5),
    pretrain: CurriculumSpec = CurriculumSpec.pretrain(),
    finetune: CurriculumSpec = CurriculumSpec.finetune(),
    log: logging.Logger | None = None,
) -> TrainResult:
    """Pretrain on simpler scenes, then fine-tune on full scenes.

    The histories of both phases are concatenated with consecutive epoch
    numbers.
    """
    records = list(dataset)
    first = train_phase(model, records, pretrain_cfg, pretrain, log=log)
    second = train_phase(first.model, records, finetune_cfg, finetune, log=log)
    offset = len(first.history)
    history = first.history + [
        dataclasses.replace(stats, epoch=stats.epoch + offset)
        for stats in second.history
    ]
    return TrainResult(model=second.model, history=history)


def write_training_log(
    path: str | os.PathLike, history: typing.Sequence[EpochStats]
) -> None:
    """Write the per-epoch history as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(TRAINING_LOG_COLUMNS)
        for stats in history:
            writer.writerow(
                [
                    stats.epoch,
                    repr(stats.train_nll),
                    repr(stats.val_nll),
                    repr(stats.lr),
                    f"{stats.wall_seconds:.3f}",
                ]
            )
