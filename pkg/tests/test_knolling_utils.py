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

import os
import unittest
import unittest.mock

import pytest
from lsst.ts.knolling import THREADS_ENV_VAR, child_rng, get_worker_count, map_ordered


class TestUtils(unittest.TestCase):
    def test_worker_count(self) -> None:
        with unittest.mock.patch.dict(os.environ, {}, clear=True):
            assert get_worker_count() == 1
        with unittest.mock.patch.dict(os.environ, {THREADS_ENV_VAR: "4"}):
            assert get_worker_count() == 4
            assert get_worker_count(2) == 2
        with unittest.mock.patch.dict(os.environ, {THREADS_ENV_VAR: "0"}):
            assert get_worker_count() == 1
        with unittest.mock.patch.dict(os.environ, {THREADS_ENV_VAR: "many"}):
            with pytest.raises(ValueError, match=THREADS_ENV_VAR):
                get_worker_count()

    def test_child_rng(self) -> None:
        assert child_rng(3, 0, 5).random() == child_rng(3, 0, 5).random()
        assert child_rng(3, 0, 5).random() != child_rng(3, 0, 6).random()
        assert child_rng(3, 0, 5).random() != child_rng(3, 1, 5).random()

    def test_map_ordered(self) -> None:
        items = list(range(600))
        expected = [item * item for item in items]
        assert list(map_ordered(lambda x: x * x, items)) == expected
        threaded = map_ordered(lambda x: x * x, items, workers=3, processes=False, chunk_size=64)
        assert list(threaded) == expected


if __name__ == "__main__":
    unittest.main()
