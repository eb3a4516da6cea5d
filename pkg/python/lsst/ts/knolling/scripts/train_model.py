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

__all__ = ["TrainModel"]

import dataclasses
import types

import torch
import yaml

from ..base_script import BaseScript
from ..laygen import read_dataset
from ..net import MODEL_KINDS, ModelConfig, count_params, make_model, save_model
from ..train import (
    CurriculumSpec,
    TrainConfig,
    TrainResult,
    train_curriculum,
    train_phase,
    write_training_log,
)


class TrainModel(BaseScript):
    """Train a knolling model or baseline on a dataset file.

    With ``curriculum: pretrain`` the model is first trained on scenes of
    at most five objects and then fine-tuned on full scenes with encoder
    input masking, at a tenth of the learning rate unless
    ``finetune_learning_rate`` is set. With ``curriculum: direct`` a single
    fine-tune-shaped phase is run.
    """

    def __init__(self, index: int = 0) -> None:
        super().__init__(index, descr="Train a knolling model.")

        self.model_config = ModelConfig()
        self.train_config = TrainConfig()
        self.finetune_config = TrainConfig(learning_rate=1e-5)
        self.result: TrainResult | None = None

    @classmethod
    def get_schema(cls) -> dict:
        schema_yaml = f"""
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/scripts/train_model.py
        title: TrainModel v1
        description: Configuration for TrainModel.
        type: object
        additionalProperties: false
        required: [dataset, output]
        properties:
            dataset:
                description: Dataset file to train on.
                type: string
            output:
                description: Model file to write.
                type: string
            log_file:
                description: >-
                    CSV training log. If null, the model file name with a
                    ".log.csv" suffix.
                anyOf:
                  - type: string
                  - type: "null"
                default: null
            kind:
                description: Model architecture.
                type: string
                enum: {sorted(MODEL_KINDS)}
                default: transformer
            curriculum:
                description: Pretrain then fine-tune, or train directly.
                type: string
                enum: [pretrain, direct]
                default: pretrain
            learning_rate:
                type: number
                exclusiveMinimum: 0
                default: 1.0e-4
            finetune_learning_rate:
                description: Fine-tuning learning rate; learning_rate / 10 if null.
                anyOf:
                  - type: number
                    exclusiveMinimum: 0
                  - type: "null"
                default: null
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
            validation_fraction:
                type: number
                minimum: 0
                exclusiveMaximum: 1
                default: 0.02
            rollout_prob:
                description: >-
                    Probability per fine-tuning batch of replacing the decoder
                    context with the model's own predictions.
                type: number
                minimum: 0
                maximum: 1
                default: 0.0
            model:
                description: Overrides of the architecture settings, e.g. d_model.
                type: object
                default: {{}}
        """
        schema_dict = yaml.safe_load(schema_yaml)

        base_schema_dict = super().get_schema()

        for properties in base_schema_dict["properties"]:
            schema_dict["properties"][properties] = base_schema_dict["properties"][properties]

        return schema_dict

    async def configure(self, config: types.SimpleNamespace) -> None:
        try:
            self.model_config = ModelConfig(**config.model)
        except TypeError as e:
            raise ValueError(f"Invalid model settings: {e}") from e
        self.train_config = TrainConfig(
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            early_stop_patience=config.early_stop_patience,
            seed=config.seed,
            validation_fraction=config.validation_fraction,
        )
        finetune_learning_rate = config.finetune_learning_rate
        if finetune_learning_rate is None:
            finetune_learning_rate = config.learning_rate / 10
        self.finetune_config = dataclasses.replace(
            self.train_config, learning_rate=finetune_learning_rate
        )
        if config.log_file is None:
            config.log_file = f"{config.output}.log.csv"
        self.config = config

    def set_metadata(self, metadata: types.SimpleNamespace) -> None:
        phases = 2 if self.config.curriculum == "pretrain" else 1
        metadata.duration = 60.0 * phases * self.train_config.max_epochs

    async def run(self) -> None:
        records = list(read_dataset(self.config.dataset))
        self.log.info(f"Read {len(records)} scenarios from {self.config.dataset}.")

        torch.manual_seed(self.config.seed)
        model = make_model(self.config.kind, self.model_config)
        self.log.info(f"Training {model.kind} with {count_params(model)} parameters.")

        finetune = CurriculumSpec.finetune(rollout_prob=self.config.rollout_prob)
        if self.config.curriculum == "pretrain":
            await self.checkpoint("Pretraining then fine-tuning")
            self.result = train_curriculum(
                model,
                records,
                pretrain_cfg=self.train_config,
                finetune_cfg=self.finetune_config,
                finetune=finetune,
                log=self.log,
            )
        else:
            await self.checkpoint("Training")
            self.result = train_phase(model, records, self.train_config, finetune, log=self.log)

        save_model(self.config.output, self.result.model)
        write_training_log(self.config.log_file, self.result.history)
        self.log.info(
            f"Saved {self.config.output}; best validation NLL "
            f"{self.result.best_val_nll:.4f}."
        )
