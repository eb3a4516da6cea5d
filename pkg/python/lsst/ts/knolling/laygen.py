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

__all__ = [
    "UnpackableError",
    "DatasetFormatError",
    "PackConfig",
    "AnnealConfig",
    "OrderingRule",
    "RowAlign",
    "pack_rows",
    "bounding_square_area",
    "group_by_shape",
    "optimize_layout",
    "apply_ordering",
    "generate_dataset",
    "encode_record",
    "decode_record",
    "write_dataset",
    "read_dataset",
]

import dataclasses
import enum
import functools
import json
import logging
import math
import os
import pathlib
import typing

import numpy as np

from .core import (
    MAX_OBJECT_SIZE,
    MAX_OBJECTS,
    MIN_OBJECT_SIZE,
    OVERLAP_TOLERANCE,
    Layout,
    ObjectSpec,
    Pose2D,
    ScenarioRecord,
    Workspace,
)
from .utils import child_rng, get_worker_count, map_ordered

MonitorType = typing.Callable[[int, float, float], None]


class UnpackableError(ValueError):
    """Raised when objects cannot be arranged in rows inside the
    workspace.
    """


class DatasetFormatError(ValueError):
    """Raised when a dataset line cannot be parsed.

    Parameters
    ----------
    message : `str`
        What is wrong with the line.
    line_number : `int`, optional
        1-based line number in the source file, if known.
    """

    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


@dataclasses.dataclass(frozen=True)
class PackConfig:
    """Row packing settings.

    Parameters
    ----------
    gap : `float`
        Spacing between neighboring objects (m).
    max_row_width : `float`, optional
        Longest allowed row (m); the workspace width if `None`.
    workspace : `Workspace`
        Region the rows must fit in.
    """

    gap: float = 0.005
    max_row_width: float | None = None
    workspace: Workspace = Workspace()

    def __post_init__(self) -> None:
        if not self.gap >= 0.0:
            raise ValueError(f"gap must be >= 0, got {self.gap}.")
        if self.max_row_width is not None and not (
            0.0 < self.max_row_width <= self.workspace.width
        ):
            raise ValueError(
                f"max_row_width must be in (0, {self.workspace.width}], "
                f"got {self.max_row_width}."
            )

    @property
    def row_width_limit(self) -> float:
        if self.max_row_width is None:
            return self.workspace.width
        return self.max_row_width


@dataclasses.dataclass(frozen=True)
class AnnealConfig:
    """Simulated annealing settings for `optimize_layout`."""

    iterations: int = 10_000
    initial_temperature: float = 0.05
    cooling_rate: float = 0.9995
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}.")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ValueError(
                f"cooling_rate must be in (0, 1), got {self.cooling_rate}."
            )
        if not self.initial_temperature > 0.0:
            raise ValueError(
                f"initial_temperature must be > 0, got {self.initial_temperature}."
            )


class OrderingRule(enum.Enum):
    """Input ordering used to express a layout preference."""

    AS_GIVEN = "as-given"
    AREA_DESCENDING = "area-descending"
    AREA_ASCENDING = "area-ascending"
    ASPECT_RATIO_DESCENDING = "aspect-ratio-descending"

    @classmethod
    def parse(cls, name: typing.Union[str, "OrderingRule"]) -> "OrderingRule":
        """Look up a rule by value, enum name or short alias."""
        if isinstance(name, cls):
            return name
        key = name.strip().lower().replace("_", "-")
        for rule in cls:
            if key in (rule.value, rule.name.lower().replace("_", "-")):
                return rule
        if key in _ORDERING_ALIASES:
            return _ORDERING_ALIASES[key]
        raise ValueError(
            f"Unknown ordering {name!r}; expected one of "
            f"{sorted(_ORDERING_ALIASES) + [rule.value for rule in cls]}."
        )


_ORDERING_ALIASES = {
    "area-desc": OrderingRule.AREA_DESCENDING,
    "area-asc": OrderingRule.AREA_ASCENDING,
    "ratio-desc": OrderingRule.ASPECT_RATIO_DESCENDING,
    "given": OrderingRule.AS_GIVEN,
}


class RowAlign(enum.IntEnum):
    """Vertical alignment of objects inside a row."""

    BOTTOM = 0
    CENTER = 1
    TOP = 2


@dataclasses.dataclass(frozen=True)
class _RowState:
    """Row-structured layout: slot occupants, row starts and alignments.

    ``order[s]`` is the index of the object in slot ``s``; ``breaks`` holds
    the slots that start a new row (never slot 0); ``aligns`` maps a row's
    first slot to its alignment (missing means bottom).
    """

    order: tuple[int, ...]
    breaks: frozenset[int]
    aligns: tuple[tuple[int, RowAlign], ...] = ()

    def rows(self) -> list[tuple[int, int]]:
        starts = [0] + sorted(self.breaks)
        ends = starts[1:] + [len(self.order)]
        return list(zip(starts, ends))

    def align_of(self, start: int) -> RowAlign:
        return dict(self.aligns).get(start, RowAlign.BOTTOM)


def _row_metrics(
    widths: typing.Sequence[float],
    lengths: typing.Sequence[float],
    state: _RowState,
    gap: float,
) -> tuple[list[float], list[float]]:
    row_widths = []
    row_heights = []
    for start, end in state.rows():
        members = state.order[start:end]
        row_widths.append(sum(widths[i] for i in members) + gap * (len(members) - 1))
        row_heights.append(max(lengths[i] for i in members))
    return row_widths, row_heights


def _state_area(
    widths: typing.Sequence[float],
    lengths: typing.Sequence[float],
    state: _RowState,
    pack: PackConfig,
) -> float | None:
    """Bounding-square area of a state, or `None` if it is infeasible."""
    row_widths, row_heights = _row_metrics(widths, lengths, state, pack.gap)
    total_height = sum(row_heights) + pack.gap * (len(row_heights) - 1)
    if (
        max(row_widths) > pack.row_width_limit + OVERLAP_TOLERANCE
        or total_height > pack.workspace.height + OVERLAP_TOLERANCE
    ):
        return None
    return max(max(row_widths), total_height) ** 2


def _state_layout(
    objects: typing.Sequence[ObjectSpec], state: _RowState, gap: float
) -> Layout:
    """Place a row state; slot ``s`` of the result holds
    ``objects[state.order[s]]``.
    """
    items = []
    row_bottom = 0.0
    for start, end in state.rows():
        members = [objects[i] for i in state.order[start:end]]
        row_height = max(spec.length for spec in members)
        align = state.align_of(start)
        x_left = 0.0
        for spec in members:
            if align is RowAlign.BOTTOM:
                y = row_bottom + spec.length / 2
            elif align is RowAlign.TOP:
                y = row_bottom + row_height - spec.length / 2
            else:
                y = row_bottom + row_height / 2
            items.append((spec, Pose2D(x_left + spec.width / 2, y, 0.0)))
            x_left += spec.width + gap
        row_bottom += row_height + gap
    return Layout(tuple(items))


def _greedy_breaks(
    objects: typing.Sequence[ObjectSpec], pack: PackConfig
) -> frozenset[int]:
    limit = pack.row_width_limit
    breaks = set()
    row_width = 0.0
    for slot, spec in enumerate(objects):
        if spec.width > limit + OVERLAP_TOLERANCE:
            raise UnpackableError(
                f"Object {slot} is {spec.width} m wide; max row width is {limit} m."
            )
        if slot > 0 and row_width + pack.gap + spec.width > limit + OVERLAP_TOLERANCE:
            breaks.add(slot)
            row_width = spec.width
        elif slot == 0:
            row_width = spec.width
        else:
            row_width += pack.gap + spec.width
    return frozenset(breaks)


def pack_rows(objects: typing.Sequence[ObjectSpec], cfg: PackConfig) -> Layout:
    """Deterministic row packing.

    Objects are placed left to right in input order, starting at the origin
    corner. A new row starts when the next object would exceed the maximum
    row width; each row is as tall as its longest object and rows stack
    upwards separated by ``cfg.gap``. Object ``i`` ends up in slot ``i``.

    Parameters
    ----------
    objects : `list` [`ObjectSpec`]
        Objects in slot order.
    cfg : `PackConfig`
        Packing settings.

    Returns
    -------
    layout : `Layout`
        Axis-aligned, bottom-aligned rows.

    Raises
    ------
    UnpackableError
        If an object is wider than the maximum row width, if the rows do not
        fit the workspace height or if there are no objects.
    """
    if len(objects) == 0:
        raise UnpackableError("Cannot pack an empty object list.")
    state = _RowState(tuple(range(len(objects))), _greedy_breaks(objects, cfg))
    widths = [spec.width for spec in objects]
    lengths = [spec.length for spec in objects]
    if _state_area(widths, lengths, state, cfg) is None:
        raise UnpackableError(
            f"{len(objects)} objects do not fit a "
            f"{cfg.workspace.width} x {cfg.workspace.height} m workspace."
        )
    return _state_layout(objects, state, cfg.gap)


def bounding_square_area(layout: Layout) -> float:
    """Area of the smallest axis-aligned square side enclosing the layout.

    Returns ``s**2`` where ``s`` is the larger side of the union bounding box
    of all rectangles.

    Raises
    ------
    ValueError
        If the layout is empty.
    """
    xmin, ymin, xmax, ymax = layout.bounding_box()
    return max(xmax - xmin, ymax - ymin) ** 2


def group_by_shape(
    objects: typing.Sequence[ObjectSpec],
) -> tuple[list[ObjectSpec], list[int]]:
    """Move equal-size objects next to each other.

    Groups keep the order of their first appearance and objects keep their
    relative order inside a group.

    Returns
    -------
    grouped : `list` [`ObjectSpec`]
        Reordered objects.
    permutation : `list` [`int`]
        ``grouped[k] == objects[permutation[k]]``.
    """
    groups: dict[tuple[float, float], list[int]] = {}
    for index, spec in enumerate(objects):
        groups.setdefault((spec.width, spec.length), []).append(index)
    permutation = [index for members in groups.values() for index in members]
    return [objects[index] for index in permutation], permutation


def _propose(state: _RowState, rng: np.random.Generator) -> _RowState:
    n = len(state.order)
    move = rng.random()
    if n >= 2 and move < 0.45:
        first, second = rng.choice(n, size=2, replace=False)
        order = list(state.order)
        order[first], order[second] = order[second], order[first]
        return dataclasses.replace(state, order=tuple(order))
    if n >= 2 and move < 0.85:
        slot = int(rng.integers(1, n))
        breaks = state.breaks ^ {slot}
        starts = {0} | breaks
        aligns = tuple((start, align) for start, align in state.aligns if start in starts)
        return _RowState(state.order, frozenset(breaks), aligns)
    rows = state.rows()
    start = rows[int(rng.integers(len(rows)))][0]
    align = RowAlign(int(rng.integers(len(RowAlign))))
    aligns = dict(state.aligns)
    aligns[start] = align
    return dataclasses.replace(state, aligns=tuple(sorted(aligns.items())))


def optimize_layout(
    objects: typing.Sequence[ObjectSpec],
    cfg: AnnealConfig,
    pack: PackConfig,
    monitor: MonitorType | None = None,
    log: logging.Logger | None = None,
) -> Layout:
    """Minimize the bounding-square area with simulated annealing.

    The initial state is `pack_rows` of the objects in the given order, so a
    single iteration returns that packing. Each iteration proposes one move:
    swap two slot occupants, toggle a row break or change a row's vertical
    alignment. Infeasible states are rejected; feasible ones are accepted
    with the Metropolis rule on the relative change in area, with temperature
    ``initial_temperature * cooling_rate**k``.

    Parameters
    ----------
    objects : `list` [`ObjectSpec`]
        Objects to arrange.
    cfg : `AnnealConfig`
        Annealing settings.
    pack : `PackConfig`
        Gap, row width and workspace constraints.
    monitor : callable, optional
        Called as ``monitor(iteration, current_area, best_area)`` after the
        initial state and after every iteration.
    log : `logging.Logger`, optional
        Logger for debug output.

    Returns
    -------
    layout : `Layout`
        Best layout found, in slot order: item ``i`` is the object placed in
        the ``i``-th row-major slot.

    Raises
    ------
    UnpackableError
        If the initial packing fails.
    """
    log = log or logging.getLogger(__name__)

    widths = [spec.width for spec in objects]
    lengths = [spec.length for spec in objects]

    current = _RowState(tuple(range(len(objects))), _greedy_breaks(objects, pack))
    current_area = _state_area(widths, lengths, current, pack)
    if current_area is None:
        raise UnpackableError(
            f"{len(objects)} objects do not fit a "
            f"{pack.workspace.width} x {pack.workspace.height} m workspace."
        )
    best, best_area = current, current_area
    if monitor is not None:
        monitor(0, current_area, best_area)

    rng = np.random.default_rng(cfg.seed)
    temperature = cfg.initial_temperature
    for iteration in range(1, cfg.iterations):
        candidate = _propose(current, rng)
        candidate_area = _state_area(widths, lengths, candidate, pack)
        if candidate_area is not None:
            delta = (candidate_area - current_area) / current_area
            if delta <= 0.0 or rng.random() < math.exp(-delta / temperature):
                current, current_area = candidate, candidate_area
                if current_area < best_area:
                    best, best_area = current, current_area
        temperature *= cfg.cooling_rate
        if monitor is not None:
            monitor(iteration, current_area, best_area)

    log.debug(
        f"Annealed {len(objects)} objects over {cfg.iterations} iterations; "
        f"best area {best_area:.6g} m^2."
    )
    return _state_layout(objects, best, pack.gap)


def apply_ordering(
    objects: typing.Sequence[ObjectSpec], rule: OrderingRule | str
) -> tuple[list[ObjectSpec], list[int]]:
    """Reorder objects by a preference rule.

    The sort is stable: objects with equal keys keep their input order.

    Returns
    -------
    ordered : `list` [`ObjectSpec`]
        Reordered objects.
    permutation : `list` [`int`]
        ``ordered[k] == objects[permutation[k]]``.
    """
    rule = OrderingRule.parse(rule)
    indices = list(range(len(objects)))
    match rule:
        case OrderingRule.AREA_DESCENDING:
            indices.sort(key=lambda i: -objects[i].area)
        case OrderingRule.AREA_ASCENDING:
            indices.sort(key=lambda i: objects[i].area)
        case OrderingRule.ASPECT_RATIO_DESCENDING:
            indices.sort(key=lambda i: -objects[i].aspect_ratio)
    return [objects[i] for i in indices], indices


@dataclasses.dataclass(frozen=True)
class _GenerationTask:
    n_range: tuple[int, int]
    anneal: AnnealConfig
    pack: PackConfig
    seed: int
    stream: int
    size_resolution: float


def _generate_one(task: _GenerationTask, index: int) -> ScenarioRecord:
    rng = child_rng(task.seed, task.stream, index)
    n = int(rng.integers(task.n_range[0], task.n_range[1] + 1))
    sizes = rng.uniform(MIN_OBJECT_SIZE, MAX_OBJECT_SIZE, size=(n, 2))
    if task.size_resolution > 0.0:
        sizes = np.round(np.round(sizes / task.size_resolution) * task.size_resolution, 12)
        sizes = np.clip(sizes, MIN_OBJECT_SIZE, MAX_OBJECT_SIZE)
    objects, _ = group_by_shape([ObjectSpec(float(width), float(length)) for width, length in sizes])
    anneal = dataclasses.replace(task.anneal, seed=int(rng.integers(2**63)))
    layout = optimize_layout(objects, anneal, task.pack)
    return ScenarioRecord(layout.objects, layout.targets)


def generate_dataset(
    count: int,
    n_range: tuple[int, int] = (2, MAX_OBJECTS),
    cfg: AnnealConfig = AnnealConfig(),
    pack: PackConfig = PackConfig(),
    seed: int = 0,
    stream: int = 0,
    size_resolution: float = 0.001,
    workers: int | None = None,
    log: logging.Logger | None = None,
) -> typing.Iterator[ScenarioRecord]:
    """Generate tidy-layout scenarios.

    Scenario ``i`` draws its object count uniformly from ``n_range`` and its
    sizes uniformly from the generation range, groups equal shapes into
    adjacent slots and anneals a layout from there. Its random state derives
    only from ``(seed, stream, i)``, so the output does not depend on the
    number of workers.

    Parameters
    ----------
    count : `int`
        Number of scenarios.
    n_range : `tuple` [`int`, `int`]
        Inclusive range of objects per scenario.
    cfg : `AnnealConfig`
        Annealing settings; the seed is replaced per scenario.
    pack : `PackConfig`
        Packing constraints.
    seed : `int`
        Master seed.
    stream : `int`
        Stream id; different streams never share scenarios.
    size_resolution : `float`
        Sizes are rounded to multiples of this value (m); 0 disables it.
    workers : `int`, optional
        Process count; read from ``KNOLL_THREADS`` if `None`.
    log : `logging.Logger`, optional
        Progress logger.

    Yields
    ------
    record : `ScenarioRecord`
        Scenarios in index order.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}.")
    n_min, n_max = n_range
    if not 1 <= n_min <= n_max <= MAX_OBJECTS:
        raise ValueError(f"n_range must lie within [1, {MAX_OBJECTS}], got {n_range}.")
    log = log or logging.getLogger(__name__)
    workers = get_worker_count(workers)

    task = _GenerationTask(
        n_range=(n_min, n_max),
        anneal=cfg,
        pack=pack,
        seed=seed,
        stream=stream,
        size_resolution=size_resolution,
    )
    log.info(f"Generating {count} scenarios with {workers} worker(s).")
    for index, record in enumerate(
        map_ordered(functools.partial(_generate_one, task), range(count), workers)
    ):
        if (index + 1) % 1000 == 0:
            log.debug(f"Generated {index + 1}/{count} scenarios.")
        yield record


def encode_record(record: ScenarioRecord) -> str:
    """One-line JSON representation of a record.

    Floats are written with their shortest round-trip representation, so
    `decode_record` restores them exactly.
    """
    return json.dumps(
        {
            "n": record.n,
            "objects": [[spec.width, spec.length] for spec in record.objects],
            "targets": [[x, y] for x, y in record.targets],
        },
        separators=(",", ":"),
    )


def _number_pairs(
    data: dict, key: str, line_number: int | None
) -> list[tuple[float, float]]:
    value = data.get(key)
    if not isinstance(value, list):
        raise DatasetFormatError(f"{key!r} must be a list.", line_number)
    pairs = []
    for item in value:
        if (
            not isinstance(item, list)
            or len(item) != 2
            or not all(
                isinstance(number, (int, float)) and not isinstance(number, bool)
                for number in item
            )
        ):
            raise DatasetFormatError(
                f"{key!r} entries must be pairs of numbers, got {item!r}.",
                line_number,
            )
        pairs.append((float(item[0]), float(item[1])))
    return pairs


def decode_record(line: str, line_number: int | None = None) -> ScenarioRecord:
    """Parse a line written by `encode_record`.

    Raises
    ------
    DatasetFormatError
        If the line is not valid JSON, misses a field, or has inconsistent
        lengths or invalid sizes.
    """
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid JSON: {e.msg}.", line_number) from e
    if not isinstance(data, dict):
        raise DatasetFormatError("record must be a JSON object.", line_number)

    objects = _number_pairs(data, "objects", line_number)
    targets = _number_pairs(data, "targets", line_number)
    if len(objects) != len(targets):
        raise DatasetFormatError(
            f"{len(objects)} objects but {len(targets)} targets.", line_number
        )
    if "n" in data and data["n"] != len(objects):
        raise DatasetFormatError(
            f"n={data['n']} does not match {len(objects)} objects.", line_number
        )
    try:
        specs = [ObjectSpec(width, length) for width, length in objects]
    except ValueError as e:
        raise DatasetFormatError(str(e), line_number) from e
    return ScenarioRecord(specs, targets)


def write_dataset(
    path: str | os.PathLike, records: typing.Iterable[ScenarioRecord]
) -> int:
    """Write records one per line; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as stream:
        for record in records:
            stream.write(encode_record(record) + "\n")
            count += 1
    return count


def read_dataset(path: str | os.PathLike) -> typing.Iterator[ScenarioRecord]:
    """Read records from a dataset file, skipping blank lines.

    Raises
    ------
    DatasetFormatError
        On the first malformed line, with its line number.
    """
    with open(pathlib.Path(path), encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            if line.strip():
                yield decode_record(line, line_number)
