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

__all__ = ["GenerateDataset"]

import types

import yaml

from ..base_script import BaseScript
from ..core import MAX_OBJECTS, Workspace
from ..laygen import AnnealConfig, PackConfig, generate_dataset, write_dataset

# Rough single-core cost of one annealing iteration (s).
ITERATION_DURATION_GUESS = 2e-5


class GenerateDataset(BaseScript):
    """Generate a dataset of tidy layouts and write it as JSON lines.

    Each scenario draws an object count in ``[n_min, n_max]`` and sizes in
    the generation range, then anneals a layout that minimizes the
    bounding-square area.
    """

    def __init__(self, index: int = 0) -> None:
        super().__init__(index, descr="Generate a knolling dataset.")

        self.anneal = AnnealConfig()
        self.pack = PackConfig()
        self.n_range = (2, MAX_OBJECTS)
        self.num_written = 0

    @classmethod
    def get_schema(cls) -> dict:
        schema_yaml = f"""
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/scripts/generate_dataset.py
        title: GenerateDataset v1
        description: Configuration for GenerateDataset.
        type: object
        additionalProperties: false
        required: [output]
        properties:
            output:
                description: Dataset file to write.
                type: string
            count:
                description: Number of scenarios.
                type: integer
                minimum: 1
                default: 1000
            n_min:
                description: Smallest object count.
                type: integer
                minimum: 1
                maximum: {MAX_OBJECTS}
                default: 2
            n_max:
                description: Largest object count.
                type: integer
                minimum: 1
                maximum: {MAX_OBJECTS}
                default: {MAX_OBJECTS}
            stream:
                description: >-
                    Random stream; scenarios of different streams are
                    independent for the same seed.
                type: integer
                minimum: 0
                default: 0
            gap:
                description: Spacing between neighboring objects (m).
                type: number
                minimum: 0
                default: 0.005
            max_row_width:
                description: Longest allowed row (m); the workspace width if null.
                anyOf:
                  - type: number
                    exclusiveMinimum: 0
                  - type: "null"
                default: null
            iterations:
                description: Annealing iterations per scenario.
                type: integer
                minimum: 1
                default: 10000
            initial_temperature:
                type: number
                exclusiveMinimum: 0
                default: 0.05
            cooling_rate:
                type: number
                exclusiveMinimum: 0
                exclusiveMaximum: 1
                default: 0.9995
            size_resolution:
                description: Sizes are rounded to multiples of this (m).
                type: number
                exclusiveMinimum: 0
                default: 0.001
        """
        schema_dict = yaml.safe_load(schema_yaml)

        base_schema_dict = super().get_schema()

        for properties in base_schema_dict["properties"]:
            schema_dict["properties"][properties] = base_schema_dict["properties"][properties]

        return schema_dict

    async def configure(self, config: types.SimpleNamespace) -> None:
        if config.n_min > config.n_max:
            raise ValueError(f"n_min={config.n_min} is larger than n_max={config.n_max}.")
        self.n_range = (config.n_min, config.n_max)
        self.anneal = AnnealConfig(
            iterations=config.iterations,
            initial_temperature=config.initial_temperature,
            cooling_rate=config.cooling_rate,
            seed=config.seed,
        )
        self.pack = PackConfig(
            gap=config.gap, max_row_width=config.max_row_width, workspace=Workspace()
        )
        self.config = config

    def set_metadata(self, metadata: types.SimpleNamespace) -> None:
        metadata.duration = self.config.count * self.anneal.iterations * ITERATION_DURATION_GUESS

    async def run(self) -> None:
        await self.checkpoint(f"Generating {self.config.count} scenarios")
        records = generate_dataset(
            self.config.count,
            self.n_range,
            self.anneal,
            self.pack,
            seed=self.config.seed,
            stream=self.config.stream,
            size_resolution=self.config.size_resolution,
            workers=self.config.workers,
            log=self.log,
        )
        self.num_written = write_dataset(self.config.output, records)
        self.log.info(f"Wrote {self.num_written} scenarios to {self.config.output}.")
