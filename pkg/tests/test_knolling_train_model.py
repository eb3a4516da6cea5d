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

import csv
import pathlib
import tempfile
import unittest

import pytest
from lsst.ts.knolling import (
    ExpectedError,
    MlpBaseline,
    ObjectSpec,
    PackConfig,
    ScenarioRecord,
    load_model,
    pack_rows,
    write_dataset,
)
from lsst.ts.knolling.scripts import TrainModel
from lsst.ts.knolling.testutils import BaseScriptTestCase


def write_small_dataset(path: pathlib.Path, count: int = 12) -> None:
    records = []
    for index in range(count):
        n = 2 + index % 3
        objects = [ObjectSpec(0.01 + 0.005 * ((index + i) % 5), 0.02) for i in range(n)]
        records.append(ScenarioRecord(objects, pack_rows(objects, PackConfig()).targets))
    write_dataset(path, records)


class TestTrainModel(BaseScriptTestCase, unittest.IsolatedAsyncioTestCase):
    async def basic_make_script(self, index):
        self.script = TrainModel(index=index)
        return (self.script,)

    def setUp(self) -> None:
        tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(tmpdir.cleanup)
        self.tmpdir = pathlib.Path(tmpdir.name)
        self.dataset = self.tmpdir / "data.jsonl"
        self.output = str(self.tmpdir / "model.bin")
        write_small_dataset(self.dataset)

    async def test_configure_defaults(self) -> None:
        async with self.make_script():
            await self.configure_script(dataset=str(self.dataset), output=self.output)

            assert self.script.config.kind == "transformer"
            assert self.script.config.curriculum == "pretrain"
            assert self.script.config.log_file == self.output + ".log.csv"
            assert self.script.train_config.learning_rate == 1e-4
            assert self.script.train_config.batch_size == 512
            assert self.script.finetune_config.learning_rate == pytest.approx(1e-5)
            assert self.script.finetune_config.max_epochs == 100
            assert self.script.metadata.duration == pytest.approx(60.0 * 2 * 100)

    async def test_configure_overrides(self) -> None:
        async with self.make_script():
            await self.configure_script(
                dataset=str(self.dataset),
                output=self.output,
                curriculum="direct",
                finetune_learning_rate=3e-6,
                model=dict(d_model=16, feedforward_dim=32),
                seed=3,
            )
            assert self.script.model_config.d_model == 16
            assert self.script.finetune_config.learning_rate == 3e-6
            assert self.script.train_config.seed == 3
            assert self.script.metadata.duration == pytest.approx(60.0 * 100)

    async def test_configure_fails(self) -> None:
        async with self.make_script():
            with pytest.raises(ExpectedError, match="Failed validating"):
                await self.configure_script(output=self.output)
            with pytest.raises(ExpectedError, match="Failed validating"):
                await self.configure_script(dataset=str(self.dataset), output=self.output, kind="gru")
            with pytest.raises(ExpectedError, match="Invalid model settings"):
                await self.configure_script(
                    dataset=str(self.dataset), output=self.output, model=dict(depth=3)
                )
            with pytest.raises(ExpectedError, match="divisible"):
                await self.configure_script(
                    dataset=str(self.dataset), output=self.output, model=dict(d_model=30)
                )

    async def test_run_direct(self) -> None:
        async with self.make_script():
            await self.configure_script(
                dataset=str(self.dataset),
                output=self.output,
                kind="mlp",
                curriculum="direct",
                batch_size=4,
                max_epochs=2,
                model=dict(mlp_hidden=16),
            )
            await self.run_script()

        assert self.script.checkpoints == ["Training"]
        model = load_model(self.output)
        assert isinstance(model, MlpBaseline)
        assert model.config.mlp_hidden == 16
        with open(self.output + ".log.csv", newline="") as stream:
            rows = list(csv.DictReader(stream))
        assert len(rows) == len(self.script.result.history)
        assert [int(row["epoch"]) for row in rows] == list(range(len(rows)))

    async def test_run_curriculum(self) -> None:
        log_file = str(self.tmpdir / "train.csv")
        async with self.make_script():
            await self.configure_script(
                dataset=str(self.dataset),
                output=self.output,
                log_file=log_file,
                batch_size=4,
                max_epochs=1,
                model=dict(d_model=16, feedforward_dim=32, num_mixtures=2),
            )
            await self.run_script()

        assert self.script.checkpoints == ["Pretraining then fine-tuning"]
        assert len(self.script.result.history) == 2
        with open(log_file, newline="") as stream:
            rows = list(csv.DictReader(stream))
        assert [float(row["lr"]) for row in rows] == pytest.approx([1e-4, 1e-5])

    async def test_run_missing_dataset(self) -> None:
        async with self.make_script():
            await self.configure_script(dataset=str(self.tmpdir / "none.jsonl"), output=self.output)
            with pytest.raises(FileNotFoundError):
                await self.script.do_run()


if __name__ == "__main__":
    unittest.main()
