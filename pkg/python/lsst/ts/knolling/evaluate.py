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
    "REPORT_COUNTS",
    "TEST_STREAM_BASE",
    "CountStats",
    "EvalReport",
    "AblationRow",
    "l1_error",
    "evaluate_suite",
    "report_from_errors",
    "make_test_sets",
    "compare_baselines",
    "ablation_dataset_size",
    "ablation_pretraining",
    "write_report_csv",
    "format_report_table",
    "write_errors",
    "read_errors",
]

import csv
import dataclasses
import functools
import logging
import os
import typing

import numpy as np
import torch

from .core import ObjectSpec, ScenarioRecord
from .laygen import AnnealConfig, PackConfig, generate_dataset
from .net.base import BaseKnollingModel, ModelConfig, count_params, predict_layout
from .net.mixture import SamplerConfig
from .net.persist import make_model
from .train import CurriculumSpec, TrainConfig, train_curriculum, train_phase
from .utils import get_worker_count, map_ordered

REPORT_COUNTS = (2, 4, 6, 8, 10)

# Test sets of n objects use stream TEST_STREAM_BASE + n; training uses 0.
TEST_STREAM_BASE = 1000

Predictor = typing.Callable[[typing.Sequence[ObjectSpec]], typing.Sequence[tuple[float, float]]]


@dataclasses.dataclass(frozen=True)
class CountStats:
    """L1 error statistics for one object count."""

    n: int
    mean: float
    std: float
    min: float
    max: float
    count: int


@dataclasses.dataclass
class EvalReport:
    """Per object count L1 statistics of one model.

    Attributes
    ----------
    model_id : `str`
        Label of the evaluated model.
    stats : `dict` [`int`, `CountStats`]
        Statistics keyed by object count.
    errors : `dict` [`int`, `list` [`float`]]
        Per-scenario errors, in test-set order.
    """

    model_id: str
    stats: dict[int, CountStats]
    errors: dict[int, list[float]]

    @property
    def test_set_size(self) -> int:
        return sum(stats.count for stats in self.stats.values())

    @property
    def overall_mean(self) -> float:
        """Mean error over every scenario of every count."""
        return float(np.mean([error for errors in self.errors.values() for error in errors]))


@dataclasses.dataclass(frozen=True)
class AblationRow:
    label: str
    num_records: int
    num_params: int
    report: EvalReport


def l1_error(
    predicted: typing.Sequence[tuple[float, float]],
    truth: typing.Sequence[tuple[float, float]],
) -> float:
    """Mean absolute coordinate error.

    The mean runs over all objects and both coordinates (2n values).

    Raises
    ------
    ValueError
        If the sequences are empty or differ in length.
    """
    if len(predicted) != len(truth):
        raise ValueError(
            f"Cannot compare {len(predicted)} predicted with {len(truth)} true positions."
        )
    if len(truth) == 0:
        raise ValueError("Cannot compare empty layouts.")
    difference = np.asarray(predicted, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return float(np.mean(np.abs(difference)))


def report_from_errors(model_id: str, errors: typing.Mapping[int, typing.Sequence[float]]) -> EvalReport:
    """Build a report from per-scenario errors.

    Raises
    ------
    ValueError
        If any object count has no errors.
    """
    stats = {}
    for n, values in sorted(errors.items()):
        if len(values) == 0:
            raise ValueError(f"Empty test set for n={n}.")
        array = np.asarray(values, dtype=np.float64)
        stats[n] = CountStats(
            n=n,
            mean=float(array.mean()),
            std=float(array.std()),
            min=float(array.min()),
            max=float(array.max()),
            count=len(array),
        )
    return EvalReport(
        model_id=model_id,
        stats=stats,
        errors={n: [float(value) for value in values] for n, values in sorted(errors.items())},
    )


def _scenario_error(
    predictor: Predictor, temperature: float, seed: int, item: tuple[int, int, ScenarioRecord]
) -> float:
    n, index, record = item
    if isinstance(predictor, BaseKnollingModel):
        sampler = SamplerConfig(temperature=temperature, seed=seed + 7919 * n + index)
        predicted = predict_layout(predictor, record.objects, sampler)
    else:
        predicted = predictor(record.objects)
    return l1_error(predicted, record.targets)


def evaluate_suite(
    model: BaseKnollingModel | Predictor,
    test_sets: typing.Mapping[int, typing.Sequence[ScenarioRecord]],
    temperature: float = 0.0,
    model_id: str | None = None,
    seed: int = 0,
    workers: int | None = None,
    log: logging.Logger | None = None,
) -> EvalReport:
    """L1 error statistics of a model on per-count test sets.

    Parameters
    ----------
    model : `BaseKnollingModel` or callable
        Model decoded with `predict_layout`, or any callable mapping objects
        to predicted targets.
    test_sets : `dict` [`int`, `list` [`ScenarioRecord`]]
        Test scenarios keyed by object count.
    temperature : `float`
        Sampling temperature; 0 is deterministic.
    model_id : `str`, optional
        Report label; the model kind by default.
    seed : `int`
        Base sampling seed for non-zero temperature.
    workers : `int`, optional
        Thread count; read from ``KNOLL_THREADS`` if `None`.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    report : `EvalReport`
        Statistics aggregated in test-set order.

    Raises
    ------
    ValueError
        If a test set is empty.
    """
    log = log or logging.getLogger(__name__)
    if isinstance(model, BaseKnollingModel):
        model.eval()
        model_id = model_id or model.kind
    model_id = model_id or getattr(model, "__name__", "predictor")
    for n, records in test_sets.items():
        if len(records) == 0:
            raise ValueError(f"Empty test set for n={n}.")

    items = [
        (n, index, record)
        for n, records in sorted(test_sets.items())
        for index, record in enumerate(records)
    ]
    scorer = functools.partial(_scenario_error, model, temperature, seed)
    scores = list(map_ordered(scorer, items, get_worker_count(workers), processes=False))

    errors: dict[int, list[float]] = {}
    for (n, _, _), score in zip(items, scores):
        errors.setdefault(n, []).append(score)
    report = report_from_errors(model_id, errors)
    log.info(
        f"Evaluated {model_id} on {report.test_set_size} scenarios; "
        f"overall mean L1 {report.overall_mean:.3e} m."
    )
    return report


def make_test_sets(
    ns: typing.Iterable[int] = REPORT_COUNTS,
    count: int = 2000,
    anneal: AnnealConfig = AnnealConfig(),
    pack: PackConfig = PackConfig(),
    seed: int = 0,
    workers: int | None = None,
) -> dict[int, list[ScenarioRecord]]:
    """Per-count test sets from streams disjoint from training data."""
    return {
        n: list(
            generate_dataset(
                count,
                (n, n),
                anneal,
                pack,
                seed=seed,
                stream=TEST_STREAM_BASE + n,
                workers=workers,
            )
        )
        for n in ns
    }


def _train_model(
    kind: str,
    records: typing.Sequence[ScenarioRecord],
    model_config: ModelConfig,
    train_cfg: TrainConfig,
    pretrain: bool,
    log: logging.Logger | None,
) -> BaseKnollingModel:
    torch.manual_seed(train_cfg.seed)
    model = make_model(kind, model_config)
    if pretrain:
        return train_curriculum(
            model,
            records,
            pretrain_cfg=train_cfg,
            finetune_cfg=dataclasses.replace(
                train_cfg, learning_rate=train_cfg.learning_rate / 10
            ),
            log=log,
        ).model
    return train_phase(model, records, train_cfg, CurriculumSpec.finetune(), log=log).model


def compare_baselines(
    records: typing.Sequence[ScenarioRecord],
    test_sets: typing.Mapping[int, typing.Sequence[ScenarioRecord]],
    model_config: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    kinds: typing.Sequence[str] = ("transformer", "lstm", "mlp"),
    pretrain: bool = False,
    log: logging.Logger | None = None,
) -> dict[str, EvalReport]:
    """Train every model kind on the same records and evaluate each on the
    same test sets at temperature 0.
    """
    reports = {}
    for kind in kinds:
        model = _train_model(kind, records, model_config, train_cfg, pretrain, log)
        reports[kind] = evaluate_suite(model, test_sets, model_id=kind, log=log)
    return reports


def ablation_dataset_size(
    records: typing.Sequence[ScenarioRecord],
    test_sets: typing.Mapping[int, typing.Sequence[ScenarioRecord]],
    sizes: typing.Sequence[int] = (12_500, 25_000, 50_000, 100_000),
    model_config: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    kind: str = "transformer",
    log: logging.Logger | None = None,
) -> list[AblationRow]:
    """Train one model per dataset size on nested prefixes of ``records``.

    Returns rows sorted by size.

    Raises
    ------
    ValueError
        If a size exceeds the number of records.
    """
    rows = []
    for size in sorted(sizes):
        if size > len(records):
            raise ValueError(f"Requested {size} records but only {len(records)} exist.")
        model = _train_model(kind, records[:size], model_config, train_cfg, False, log)
        rows.append(
            AblationRow(
                label=f"{size}",
                num_records=size,
                num_params=count_params(model),
                report=evaluate_suite(model, test_sets, model_id=f"{kind}-{size}", log=log),
            )
        )
    return rows


def ablation_pretraining(
    records: typing.Sequence[ScenarioRecord],
    test_sets: typing.Mapping[int, typing.Sequence[ScenarioRecord]],
    model_config: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    seeds: typing.Sequence[int] = (0, 1, 2),
    kind: str = "transformer",
    log: logging.Logger | None = None,
) -> list[AblationRow]:
    """Direct training versus pretraining then fine-tuning.

    Both arms share data, seeds and architecture. Each arm's report pools the
    per-scenario errors of all seeds.
    """
    rows = []
    for label, pretrain in (("direct", False), ("pretrain+finetune", True)):
        pooled: dict[int, list[float]] = {}
        num_params = 0
        for seed in seeds:
            cfg = dataclasses.replace(train_cfg, seed=seed)
            model = _train_model(kind, records, model_config, cfg, pretrain, log)
            num_params = count_params(model)
            report = evaluate_suite(model, test_sets, model_id=f"{label}-{seed}", log=log)
            for n, errors in report.errors.items():
                pooled.setdefault(n, []).extend(errors)
        rows.append(
            AblationRow(
                label=label,
                num_records=len(records),
                num_params=num_params,
                report=report_from_errors(label, pooled),
            )
        )
    return rows


def write_report_csv(path: str | os.PathLike, reports: typing.Iterable[EvalReport]) -> None:
    """One row per model and object count."""
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(["model", "n", "mean", "std", "min", "max", "count"])
        for report in reports:
            for stats in report.stats.values():
                writer.writerow(
                    [
                        report.model_id,
                        stats.n,
                        repr(stats.mean),
                        repr(stats.std),
                        repr(stats.min),
                        repr(stats.max),
                        stats.count,
                    ]
                )


def format_report_table(reports: typing.Sequence[EvalReport]) -> str:
    """Aligned text table, one row per model and one column per count.

    Cells read ``mean ± std`` in scientific notation.
    """
    counts = sorted({n for report in reports for n in report.stats})
    header = ["model"] + [f"n={n}" for n in counts]
    rows = [
        [report.model_id]
        + [
            (
                f"{report.stats[n].mean:.2E} ± {report.stats[n].std:.2E}"
                if n in report.stats
                else "-"
            )
            for n in counts
        ]
        for report in reports
    ]
    widths = [max(len(row[column]) for row in [header] + rows) for column in range(len(header))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
        for row in [header] + rows
    ]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)


def write_errors(path: str | os.PathLike, reports: typing.Iterable[EvalReport]) -> None:
    """Dump per-scenario errors as CSV (model, n, index, error)."""
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(["model", "n", "index", "error"])
        for report in reports:
            for n, errors in report.errors.items():
                for index, error in enumerate(errors):
                    writer.writerow([report.model_id, n, index, repr(error)])


def read_errors(path: str | os.PathLike) -> dict[str, dict[int, list[float]]]:
    """Read a file written by `write_errors`, keyed by model then count."""
    errors: dict[str, dict[int, list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as stream:
        for row in csv.DictReader(stream):
            errors.setdefault(row["model"], {}).setdefault(int(row["n"]), []).append(
                float(row["error"])
            )
    return errors
