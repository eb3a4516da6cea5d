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

__all__ = ["THREADS_ENV_VAR", "get_worker_count", "child_rng", "map_ordered"]

import concurrent.futures
import itertools
import os
import typing

import numpy as np

THREADS_ENV_VAR = "KNOLL_THREADS"

T = typing.TypeVar("T")
R = typing.TypeVar("R")


def get_worker_count(workers: int | None = None) -> int:
    """Resolve the number of workers.

    An explicit ``workers`` wins; otherwise ``KNOLL_THREADS`` is read, and
    the default is a single (sequential) worker.
    """
    if workers is None:
        value = os.environ.get(THREADS_ENV_VAR, "1")
        try:
            workers = int(value)
        except ValueError:
            raise ValueError(
                f"{THREADS_ENV_VAR} must be an integer, got {value!r}."
            ) from None
    return max(1, workers)


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator derived from a master seed and integer keys."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=keys))


def map_ordered(
    func: typing.Callable[[T], R],
    items: typing.Iterable[T],
    workers: int = 1,
    processes: bool = True,
    chunk_size: int = 256,
) -> typing.Iterator[R]:
    """Apply ``func`` to ``items`` and yield results in input order.

    With one worker the map is sequential. Otherwise items are submitted in
    chunks to a process (or thread) pool; output order never depends on
    completion order.
    """
    if workers <= 1:
        yield from map(func, items)
        return

    executor_class = (
        concurrent.futures.ProcessPoolExecutor
        if processes
        else concurrent.futures.ThreadPoolExecutor
    )
    iterator = iter(items)
    with executor_class(max_workers=workers) as executor:
        while chunk := list(itertools.islice(iterator, chunk_size)):
            yield from executor.map(func, chunk)
