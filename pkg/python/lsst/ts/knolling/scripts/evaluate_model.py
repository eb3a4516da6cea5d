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

__all__ = ["EvaluateModel"]

import pathlib
import types

import yaml

from ..base_script import BaseScript
from ..core import MAX_OBJECTS, ScenarioRecord
from ..evaluate import (
    REPORT_COUNTS,
    EvalReport,
    ablation_dataset_size,
    ablation_pretraining,
    compare_baselines,
    evaluate_suite,
    format_report_table,
    make_test_sets,
    write_errors,
    write_report_csv,
)
from ..laygen import AnnealConfig, read_dataset
from ..net import MODEL_KINDS, ModelConfig, load_model
from ..train import TrainConfig


class EvaluateModel(BaseScript):
    """Evaluate models by mean L1 placement error per object count.

    Experiments:

    * ``suite``: evaluate one saved model.
    * ``baselines``: train every model kind on ``dataset`` and compare them.
    * ``dataset_size``: train on nested prefixes of ``dataset``.
    * ``pretraining``: direct training versus pretraining then fine-tuning,
      pooled over ``seeds``.

    Test scenarios come from ``test_dataset`` if given, otherwise they are
    generated from a stream disjoint from training data.
    """

    def __init__(self, index: int = 0) -> None:
        super().__init__(index, descr="Evaluate knolling models.")

        self.train_config = TrainConfig()
        self.model_config = ModelConfig()
        self.reports: list[EvalReport] = []
        self.table = ""

    @classmethod
    def get_schema(cls) -> dict:
        schema_yaml = f"""
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/scripts/evaluate_model.py
        title: EvaluateModel v1
        description: Configuration for EvaluateModel.
        type: object
        additionalProperties: false
        required: [output]
        properties:
            experiment:
                type: string
                enum: [suite, baselines, dataset_size, pretraining]
                default: suite
            output:
                description: >-
                    Report CSV file to write. The text table is written beside
                    it, with a .txt suffix.
                type: string
            errors_file:
                description: Optional CSV dump of per-scenario errors.
                anyOf:
                  - type: string
                  - type: "null"
                default: null
            model:
                description: Model file; required by the suite experiment.
                anyOf:
                  - type: string
                  - type: "null"
                default: null
            dataset:
                description: Training dataset; required by the other experiments.
                anyOf:
                  - type: string
                  - type: "null"
                default: null
            test_dataset:
                description: >-
                    Test scenarios, grouped by object count. If null, they are
                    generated.
                anyOf:
                  - type: string
                  - type: "null"
                default: null
            test_counts:
                description: Object counts to report.
                type: array
                items:
                    type: integer
                    minimum: 1
                    maximum: {MAX_OBJECTS}
                minItems: 1
                default: {list(REPORT_COUNTS)}
            test_size:
                description: Generated test scenarios per object count.
                type: integer
                minimum: 1
                default: 2000
            test_iterations:
                description: Annealing iterations of generated test scenarios.
                type: integer
                minimum: 1
                default: 10000
            temperature:
                description: Sampling temperature of the suite experiment.
                type: number
                minimum: 0
                default: 0.0
            kinds:
                description: Model kinds of the baselines experiment.
                type: array
                items:
                    type: string
                    enum: {sorted(MODEL_KINDS)}
                minItems: 1
                default: [transformer, lstm, mlp]
            pretrain:
                description: Pretrain the models of the baselines experiment.
                type: boolean
                default: false
            sizes:
                description: Training set sizes of the dataset_size experiment.
                type: array
                items:
                    type: integer
                    minimum: 1
                minItems: 1
                default: [12500, 25000, 50000, 100000]
            seeds:
                description: Training seeds of the pretraining experiment.
                type: array
                items:
                    type: integer
                minItems: 1
                default: [0, 1, 2]
            learning_rate:
                type: number
                exclusiveMinimum: 0
                default: 1.0e-4
            batch_size:
                type: integer
                minimum: 1
                default: 512
            max_epochs:
                type: integer
                minimum: 1
                default: 100
            early_stop_patience:
                type: integer
                minimum: 1
                default: 10
            model_settings:
                description: Overrides of the architecture settings of trained models.
                type: object
                default: {{}}
        """
        schema_dict = yaml.safe_load(schema_yaml)

        base_schema_dict = super().get_schema()

        for properties in base_schema_dict["properties"]:
            schema_dict["properties"][properties] = base_schema_dict["properties"][properties]

        return schema_dict

    async def configure(self, config: types.SimpleNamespace) -> None:
        if config.experiment == "suite" and config.model is None:
            raise ValueError("The suite experiment needs a model file.")
        if config.experiment != "suite" and config.dataset is None:
            raise ValueError(f"The {config.experiment} experiment needs a dataset file.")
        if pathlib.Path(config.output).suffix == ".txt":
            raise ValueError("output must not end in .txt; the text table is written there.")
        try:
            self.model_config = ModelConfig(**config.model_settings)
        except TypeError as e:
            raise ValueError(f"Invalid model settings: {e}") from e
        self.train_config = TrainConfig(
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            early_stop_patience=config.early_stop_patience,
            seed=config.seed,
        )
        self.config = config

    def set_metadata(self, metadata: types.SimpleNamespace) -> None:
        num_models = {
            "suite": 1,
            "baselines": len(self.config.kinds),
            "dataset_size": len(self.config.sizes),
            "pretraining": 2 * len(self.config.seeds),
        }[self.config.experiment]
        metadata.duration = 60.0 * num_models * self.train_config.max_epochs

    def load_test_sets(self) -> dict[int, list[ScenarioRecord]]:
        """Test scenarios keyed by object count.

        Raises
        ------
        ValueError
            If a test file has no scenario for a requested count.
        """
        if self.config.test_dataset is None:
            return make_test_sets(
                self.config.test_counts,
                self.config.test_size,
                AnnealConfig(iterations=self.config.test_iterations),
                seed=self.config.seed,
                workers=self.config.workers,
            )
        test_sets: dict[int, list[ScenarioRecord]] = {n: [] for n in self.config.test_counts}
        for record in read_dataset(self.config.test_dataset):
            if record.n in test_sets:
                test_sets[record.n].append(record)
        missing = [n for n, records in test_sets.items() if not records]
        if missing:
            raise ValueError(f"{self.config.test_dataset} has no scenario with n in {missing}.")
        return test_sets

    async def run(self) -> None:
        await self.checkpoint("Preparing test sets")
        test_sets = self.load_test_sets()
        self.log.info(
            f"Test sets: {', '.join(f'n={n}: {len(r)}' for n, r in sorted(test_sets.items()))}."
        )

        await self.checkpoint(f"Running {self.config.experiment}")
        if self.config.experiment == "suite":
            model = load_model(self.config.model)
            self.reports = [
                evaluate_suite(
                    model,
                    test_sets,
                    temperature=self.config.temperature,
                    seed=self.config.seed,
                    workers=self.config.workers,
                    log=self.log,
                )
            ]
        else:
            records = list(read_dataset(self.config.dataset))
            if self.config.experiment == "baselines":
                self.reports = list(
                    compare_baselines(
                        records,
                        test_sets,
                        self.model_config,
                        self.train_config,
                        kinds=self.config.kinds,
                        pretrain=self.config.pretrain,
                        log=self.log,
                    ).values()
                )
            elif self.config.experiment == "dataset_size":
                rows = ablation_dataset_size(
                    records,
                    test_sets,
                    self.config.sizes,
                    self.model_config,
                    self.train_config,
                    log=self.log,
                )
                self.reports = [row.report for row in rows]
            else:
                rows = ablation_pretraining(
                    records,
                    test_sets,
                    self.model_config,
                    self.train_config,
                    seeds=self.config.seeds,
                    log=self.log,
                )
                self.reports = [row.report for row in rows]

        write_report_csv(self.config.output, self.reports)
        if self.config.errors_file is not None:
            write_errors(self.config.errors_file, self.reports)
        self.table = format_report_table(self.reports)
        pathlib.Path(self.config.output).with_suffix(".txt").write_text(self.table + "\n")
        self.log.info(f"Mean L1 error (m):\n{self.table}")
