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

__all__ = ["KnollScene"]

import dataclasses
import os
import pathlib
import types

import yaml

from ..base_script import BaseScript, ExpectedError
from ..core import Layout, ScenarioRecord, Workspace, validate_scenario
from ..laygen import (
    OrderingRule,
    PackConfig,
    UnpackableError,
    apply_ordering,
    encode_record,
    pack_rows,
)
from ..net import BaseKnollingModel, SamplerConfig, load_model, predict_layout
from ..percept import read_scene
from ..plan import (
    Action,
    Collision,
    PlanConfig,
    plan_actions,
    simulate_execution,
    write_plan,
)
from ..render import render_layout


class KnollScene(BaseScript):
    """Tidy a scene: predict targets, plan the manipulations and simulate
    them.

    The scene objects are reordered by ``order``, the model predicts their
    targets slot by slot and the planner moves every object from its current
    pose to its target. A prediction that fails validation is replaced by a
    deterministic row packing of the ordered objects.

    Outputs, written to ``output_dir``:

    * ``targets.jsonl``: the ordered objects and their targets.
    * ``plan.txt``: one action per line; indices refer to scene lines.
    * ``before.svg``, ``after.svg``: the scene before and after the plan.
    """

    def __init__(self, index: int = 0) -> None:
        super().__init__(index, descr="Knoll a scene.")

        self.model: BaseKnollingModel | None = None
        self.sampler = SamplerConfig()
        self.plan_config = PlanConfig()
        self.workspace = Workspace()

        self.current: Layout | None = None
        self.target: Layout | None = None
        self.plan: list[Action] = []
        self.final: Layout | None = None
        self.collisions: list[Collision] = []
        self.used_fallback = False

    @classmethod
    def get_schema(cls) -> dict:
        orderings = [rule.value for rule in OrderingRule] + ["area-desc", "area-asc", "ratio-desc"]
        schema_yaml = f"""
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/scripts/knoll_scene.py
        title: KnollScene v1
        description: Configuration for KnollScene.
        type: object
        additionalProperties: false
        required: [scene, model, output_dir]
        properties:
            scene:
                description: >-
                    Scene file; one object per line, either as size and pose
                    or as four corner keypoints.
                type: string
            model:
                description: Model file.
                type: string
            output_dir:
                description: Directory for the outputs; created if needed.
                type: string
            order:
                description: Input ordering expressing the layout preference.
                type: string
                enum: {orderings}
                default: as-given
            temperature:
                type: number
                minimum: 0
                default: 0.0
            min_gap:
                description: Smallest edge clearance accepted between predicted targets (m).
                type: number
                minimum: 0
                default: 0.0
            fallback_gap:
                description: Spacing of the row packing used when the prediction is invalid (m).
                type: number
                minimum: 0
                default: 0.005
            separation_threshold:
                description: Clearance below which neighbors are separated before a grasp (m).
                type: number
                exclusiveMinimum: 0
                default: 0.01
            emit_transit:
                description: Precede every manipulation with a transit move.
                type: boolean
                default: false
        """
        schema_dict = yaml.safe_load(schema_yaml)

        base_schema_dict = super().get_schema()

        for properties in base_schema_dict["properties"]:
            schema_dict["properties"][properties] = base_schema_dict["properties"][properties]

        return schema_dict

    async def configure(self, config: types.SimpleNamespace) -> None:
        for name in ("scene", "model"):
            if not os.path.isfile(getattr(config, name)):
                raise ValueError(f"{name} file {getattr(config, name)} does not exist.")
        self.sampler = SamplerConfig(temperature=config.temperature, seed=config.seed)
        self.plan_config = PlanConfig(
            separation_threshold=config.separation_threshold,
            emit_transit=config.emit_transit,
            workspace=self.workspace,
        )
        self.config = config

    def set_metadata(self, metadata: types.SimpleNamespace) -> None:
        metadata.duration = 5.0

    def predict_targets(self, ordered: list) -> list[tuple[float, float]]:
        """Targets of the ordered objects, legalized if needed."""
        targets = predict_layout(self.model, ordered, self.sampler)
        report = validate_scenario(
            ScenarioRecord(ordered, targets), self.workspace, min_gap=self.config.min_gap
        )
        if report.ok:
            return targets

        self.log.warning(f"Predicted layout is invalid ({report.describe()}); using row packing.")
        self.used_fallback = True
        try:
            packed = pack_rows(ordered, PackConfig(gap=self.config.fallback_gap, workspace=self.workspace))
        except UnpackableError as e:
            raise ExpectedError(f"Scene objects do not fit the workspace: {e}") from e
        return list(packed.targets)

    async def run(self) -> None:
        output_dir = pathlib.Path(self.config.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        self.current = read_scene(self.config.scene)
        self.model = load_model(self.config.model)
        if len(self.current) > self.model.config.max_objects:
            raise ExpectedError(
                f"Scene has {len(self.current)} objects; the model handles at most "
                f"{self.model.config.max_objects}."
            )

        await self.checkpoint("Predicting targets")
        ordered, permutation = apply_ordering(self.current.objects, self.config.order)
        targets = self.predict_targets(ordered)
        self.target = Layout.from_targets(ordered, targets)
        with open(output_dir / "targets.jsonl", "w", encoding="utf-8") as stream:
            stream.write(encode_record(ScenarioRecord(ordered, targets)) + "\n")

        await self.checkpoint("Planning")
        # Plan in slot order, then report scene indices.
        current_ordered = Layout(tuple(self.current.items[i] for i in permutation))
        plan = plan_actions(current_ordered, targets, self.plan_config, log=self.log)
        self.plan = [dataclasses.replace(action, index=permutation[action.index]) for action in plan]
        write_plan(output_dir / "plan.txt", self.plan)

        self.final, self.collisions = simulate_execution(self.current, self.plan, log=self.log)
        if self.collisions:
            self.log.warning(f"Simulated plan has {len(self.collisions)} collision(s).")
        self.log.info(
            f"Planned {len(self.plan)} actions for {len(self.current)} objects "
            f"(ordering {OrderingRule.parse(self.config.order).value})."
        )

        render_layout(self.current, output_dir / "before.svg", self.workspace, title="Before")
        render_layout(self.final, output_dir / "after.svg", self.workspace, title="After")
