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

__all__ = ["RenderLayout"]

import types

import yaml

from ..base_script import BaseScript
from ..core import Layout, Workspace
from ..laygen import DatasetFormatError, decode_record
from ..percept import read_scene
from ..render import render_layout


class RenderLayout(BaseScript):
    """Draw one layout as SVG.

    The input is either a dataset file, of which line ``line`` is drawn at
    its targets, or a scene file, drawn at its current poses.
    """

    def __init__(self, index: int = 0) -> None:
        super().__init__(index, descr="Render a layout.")

        self.layout: Layout | None = None

    @classmethod
    def get_schema(cls) -> dict:
        schema_yaml = """
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/scripts/render_layout.py
        title: RenderLayout v1
        description: Configuration for RenderLayout.
        type: object
        additionalProperties: false
        required: [input, output]
        properties:
            input:
                description: Dataset or scene file.
                type: string
            output:
                description: SVG file to write.
                type: string
            format:
                type: string
                enum: [dataset, scene]
                default: dataset
            line:
                description: Dataset line to draw, counting from 1.
                type: integer
                minimum: 1
                default: 1
            title:
                anyOf:
                  - type: string
                  - type: "null"
                default: null
        """
        schema_dict = yaml.safe_load(schema_yaml)

        base_schema_dict = super().get_schema()

        for properties in base_schema_dict["properties"]:
            schema_dict["properties"][properties] = base_schema_dict["properties"][properties]

        return schema_dict

    async def configure(self, config: types.SimpleNamespace) -> None:
        self.config = config

    def read_layout(self) -> Layout:
        if self.config.format == "scene":
            return read_scene(self.config.input)
        with open(self.config.input, encoding="utf-8") as stream:
            for line_number, line in enumerate(stream, start=1):
                if line_number == self.config.line:
                    return decode_record(line, line_number).to_layout()
        raise DatasetFormatError(f"{self.config.input} has fewer than {self.config.line} lines.")

    async def run(self) -> None:
        self.layout = self.read_layout()
        render_layout(self.layout, self.config.output, Workspace(), title=self.config.title)
        self.log.info(f"Rendered {len(self.layout)} objects to {self.config.output}.")
