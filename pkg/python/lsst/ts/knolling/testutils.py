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

__all__ = ["BaseScriptTestCase"]

import abc
import contextlib
import logging
import typing

from .base_script import BaseScript, ScriptState


class BaseScriptTestCase(metaclass=abc.ABCMeta):
    """Base class for script tests.

    Subclasses must also inherit from `unittest.IsolatedAsyncioTestCase`
    and implement `basic_make_script`.
    """

    _index_iter = iter(range(1000, 100_000))

    @abc.abstractmethod
    async def basic_make_script(self, index: int) -> typing.Sequence[BaseScript]:
        """Make the script under test as ``self.script``.

        Returns
        -------
        items : `list`
            Objects to close when the test ends; the script first.
        """
        raise NotImplementedError()

    @contextlib.asynccontextmanager
    async def make_script(
        self, log_level: int = logging.INFO
    ) -> typing.AsyncGenerator[typing.Sequence[BaseScript], None]:
        index = next(self._index_iter)
        items = await self.basic_make_script(index=index)
        self.script.log.setLevel(log_level)
        try:
            yield items
        finally:
            for item in items:
                await item.close()

    async def configure_script(self, **kwargs: typing.Any) -> None:
        """Configure ``self.script`` from keyword arguments and check that
        it reached the configured state.
        """
        await self.script.do_configure(kwargs)
        assert self.script.state == ScriptState.CONFIGURED

    async def run_script(self, expected_final_state: ScriptState = ScriptState.DONE) -> None:
        """Run ``self.script`` and check its final state.

        An exception raised by the script is re-raised unless
        ``expected_final_state`` is `ScriptState.FAILED`.
        """
        try:
            await self.script.do_run()
        except Exception:
            if expected_final_state != ScriptState.FAILED:
                raise
        assert self.script.state == expected_final_state
