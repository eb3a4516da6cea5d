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

import json
import pathlib
import tempfile
import unittest
import unittest.mock

import numpy as np
import pytest
import torch
from lsst.ts.knolling import (
    ActionKind,
    ExpectedError,
    ModelConfig,
    ObjectSpec,
    Pose2D,
    ScriptState,
    decode_record,
    make_model,
    read_plan,
    save_model,
    validate_scenario,
    Workspace,
)
from lsst.ts.knolling.scripts import KnollScene
from lsst.ts.knolling.testutils import BaseScriptTestCase

PREDICT = "lsst.ts.knolling.scripts.knoll_scene.predict_layout"

SCENE = [
    dict(width=0.02, length=0.02, x=0.2, y=0.2, yaw=0.3),
    dict(width=0.05, length=0.04, x=0.08, y=0.22, yaw=-0.7),
    dict(width=0.03, length=0.01, x=0.15, y=0.1, yaw=1.2),
]


class TestKnollScene(BaseScriptTestCase, unittest.IsolatedAsyncioTestCase):
    async def basic_make_script(self, index):
        self.script = KnollScene(index=index)
        return (self.script,)

    def setUp(self) -> None:
        tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(tmpdir.cleanup)
        self.tmpdir = pathlib.Path(tmpdir.name)
        self.output_dir = self.tmpdir / "out"
        self.scene = self.write_scene("scene.jsonl", SCENE)
        self.model = str(self.tmpdir / "model.bin")
        torch.manual_seed(0)
        save_model(self.model, make_model("transformer", ModelConfig(d_model=16, feedforward_dim=32)))

    def write_scene(self, name: str, lines: list[dict]) -> str:
        path = self.tmpdir / name
        path.write_text("".join(json.dumps(line) + "\n" for line in lines))
        return str(path)

    async def knoll(self, **kwargs) -> None:
        async with self.make_script():
            await self.configure_script(
                scene=self.scene, model=self.model, output_dir=str(self.output_dir), **kwargs
            )
            await self.run_script()

    def check_outputs(self) -> None:
        for name in ("targets.jsonl", "plan.txt", "before.svg", "after.svg"):
            assert (self.output_dir / name).is_file(), name
        record = decode_record((self.output_dir / "targets.jsonl").read_text().strip())
        assert validate_scenario(record, Workspace()).ok
        assert read_plan(self.output_dir / "plan.txt") == self.script.plan
        assert self.script.collisions == []

        # Every scene object ends on the target of its slot.
        ordered = self.script.target
        for spec, pose in self.script.final.items:
            slot = ordered.objects.index(spec)
            target = ordered.poses[slot]
            assert abs(pose.x - target.x) < 1e-9
            assert abs(pose.y - target.y) < 1e-9
            assert pose.yaw == 0.0

    async def test_configure(self) -> None:
        async with self.make_script():
            await self.configure_script(scene=self.scene, model=self.model, output_dir=str(self.output_dir))
            assert self.script.config.order == "as-given"
            assert self.script.sampler.temperature == 0.0
            assert self.script.plan_config.separation_threshold == 0.01
            assert not self.script.plan_config.emit_transit

    async def test_configure_fails(self) -> None:
        async with self.make_script():
            with pytest.raises(ExpectedError, match="scene file .* does not exist"):
                await self.configure_script(
                    scene=str(self.tmpdir / "none.jsonl"), model=self.model, output_dir=str(self.output_dir)
                )
            with pytest.raises(ExpectedError, match="Failed validating"):
                await self.configure_script(
                    scene=self.scene, model=self.model, output_dir=str(self.output_dir), order="random"
                )

    async def test_valid_prediction(self) -> None:
        predicted = [(0.02, 0.02), (0.07, 0.03), (0.12, 0.015)]
        with unittest.mock.patch(PREDICT, return_value=predicted) as predict:
            await self.knoll()

        predict.assert_called_once()
        assert not self.script.used_fallback
        assert list(self.script.target.targets) == predicted
        assert self.script.checkpoints == ["Predicting targets", "Planning"]
        assert {action.kind for action in self.script.plan} == {ActionKind.PICK_PLACE}
        self.check_outputs()

    async def test_invalid_prediction_falls_back(self) -> None:
        with unittest.mock.patch(PREDICT, return_value=[(0.1, 0.1)] * 3):
            with self.assertLogs("KnollScene", level="WARNING"):
                await self.knoll()

        assert self.script.used_fallback
        self.check_outputs()

    async def test_untrained_model(self) -> None:
        await self.knoll(order="area-desc")
        self.check_outputs()

    async def test_already_knolled(self) -> None:
        predicted = [(0.02, 0.02), (0.07, 0.03)]
        self.scene = self.write_scene(
            "knolled.jsonl",
            [
                dict(width=0.02, length=0.02, x=0.02, y=0.02),
                dict(width=0.05, length=0.04, x=0.07, y=0.03),
            ],
        )
        with unittest.mock.patch(PREDICT, return_value=predicted):
            await self.knoll()
        assert self.script.plan == []
        assert (self.output_dir / "plan.txt").read_text() == ""

    async def test_ordering_changes_layout(self) -> None:
        # Predictions outside the workspace force the row packing.
        with unittest.mock.patch(PREDICT, return_value=[(-1.0, -1.0)] * 3):
            await self.knoll(order="area-desc")
            largest_first = self.script.final
            await self.knoll(order="area-asc")
            smallest_first = self.script.final

        assert largest_first.objects == smallest_first.objects
        assert largest_first.poses != smallest_first.poses
        areas = [spec.area for spec in largest_first.objects]
        assert largest_first.poses[int(np.argmax(areas))] == Pose2D(0.025, 0.02)
        assert smallest_first.poses[int(np.argmin(areas))] == Pose2D(0.015, 0.005)

    async def test_plan_indices_follow_the_scene(self) -> None:
        with unittest.mock.patch(PREDICT, return_value=[(-1.0, -1.0)] * 3):
            await self.knoll(order="area-asc")
        # The smallest object (scene index 2) is placed first.
        assert self.script.plan[0].index == 2
        assert self.script.plan[0].source == Pose2D(0.15, 0.1, 1.2)

    async def test_too_many_objects(self) -> None:
        save_model(self.model, make_model("transformer", ModelConfig(d_model=16, feedforward_dim=32, max_objects=2)))
        async with self.make_script():
            await self.configure_script(scene=self.scene, model=self.model, output_dir=str(self.output_dir))
            with pytest.raises(ExpectedError, match="at most 2"):
                await self.script.do_run()
            assert self.script.state == ScriptState.FAILED

    async def test_unpackable_scene(self) -> None:
        self.scene = self.write_scene(
            "huge.jsonl", [dict(width=0.25, length=0.25, x=0.15, y=0.15), dict(width=0.2, length=0.2, x=0.1, y=0.1)]
        )
        with unittest.mock.patch(PREDICT, return_value=[(0.0, 0.0)] * 2):
            async with self.make_script():
                await self.configure_script(scene=self.scene, model=self.model, output_dir=str(self.output_dir))
                with pytest.raises(ExpectedError, match="do not fit"):
                    await self.script.do_run()


if __name__ == "__main__":
    unittest.main()
