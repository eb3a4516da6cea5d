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
    "PlanningError",
    "ActionKind",
    "Action",
    "PlanConfig",
    "Collision",
    "obb_overlap",
    "plan_actions",
    "simulate_execution",
    "decode_action",
    "write_plan",
    "read_plan",
]

import dataclasses
import enum
import logging
import math
import os
import typing

import numpy as np
from shapely.geometry import Polygon

from .core import (
    OVERLAP_TOLERANCE,
    Layout,
    ObjectSpec,
    Pose2D,
    ScenarioRecord,
    Workspace,
    rectangle_corners,
    validate_scenario,
)

Placement = tuple[Pose2D, ObjectSpec]

# Candidate separation directions: the four axes, then the diagonals.
_DIRECTIONS = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
] + [(sx * math.sqrt(0.5), sy * math.sqrt(0.5)) for sx in (1, -1) for sy in (1, -1)]


class PlanningError(RuntimeError):
    """Raised when a plan cannot be built or executed."""


class ActionKind(enum.Enum):
    MOVE = "move"
    PICK_PLACE = "pick_place"
    SWEEP = "sweep"
    SEPARATE = "separate"


@dataclasses.dataclass(frozen=True)
class Action:
    """One manipulation of one object.

    Parameters
    ----------
    kind : `ActionKind`
        Controller mode.
    index : `int`
        Object index.
    source : `Pose2D`
        Pose before the action.
    destination : `Pose2D`
        Pose after the action.
    """

    kind: ActionKind
    index: int
    source: Pose2D
    destination: Pose2D

    def encode(self) -> str:
        """Text form ``kind, index, sx, sy, syaw, dx, dy, dyaw``."""
        fields = [self.kind.value, str(self.index)] + [
            repr(value)
            for pose in (self.source, self.destination)
            for value in (pose.x, pose.y, pose.yaw)
        ]
        return ", ".join(fields)


def decode_action(line: str) -> Action:
    """Parse a line written by `Action.encode`.

    Raises
    ------
    ValueError
        If the line is malformed.
    """
    fields = [field.strip() for field in line.split(",")]
    if len(fields) != 8:
        raise ValueError(f"Expected 8 comma-separated fields, got {len(fields)}: {line!r}.")
    values = [float(field) for field in fields[2:]]
    return Action(
        kind=ActionKind(fields[0]),
        index=int(fields[1]),
        source=Pose2D(*values[:3]),
        destination=Pose2D(*values[3:]),
    )


def write_plan(path: str | os.PathLike, plan: typing.Iterable[Action]) -> None:
    with open(path, "w", encoding="utf-8") as stream:
        for action in plan:
            stream.write(action.encode() + "\n")


def read_plan(path: str | os.PathLike) -> list[Action]:
    with open(path, encoding="utf-8") as stream:
        return [decode_action(line) for line in stream if line.strip()]


@dataclasses.dataclass(frozen=True)
class PlanConfig:
    """Planner settings.

    Parameters
    ----------
    separation_threshold : `float`
        Clearance below which a neighbor is separated before a grasp (m).
        Also the separation distance.
    buffer_depth : `float`
        Depth of the buffer strip along the far (y = height) workspace edge
        where swept objects go (m).
    clearance_epsilon : `float`
        Minimum clearance kept by swept and separated objects (m).
    search_step : `float`
        Grid step of the buffer search (m).
    emit_transit : `bool`
        Precede every manipulation with a transit move.
    workspace : `Workspace`
        Workspace bounds.
    """

    separation_threshold: float = 0.01
    buffer_depth: float = 0.06
    clearance_epsilon: float = 1e-6
    search_step: float = 0.0025
    emit_transit: bool = False
    workspace: Workspace = Workspace()

    def __post_init__(self) -> None:
        if not self.separation_threshold > 0.0:
            raise ValueError(
                f"separation_threshold must be > 0, got {self.separation_threshold}."
            )
        if not 0.0 < self.buffer_depth <= self.workspace.height:
            raise ValueError(f"buffer_depth must be in (0, {self.workspace.height}].")
        if not self.search_step > 0.0:
            raise ValueError(f"search_step must be > 0, got {self.search_step}.")


@dataclasses.dataclass(frozen=True)
class Collision:
    """Destination of ``index`` overlapped standing object ``other`` at
    plan step ``step``.
    """

    step: int
    index: int
    other: int


def _polygon(placement: Placement) -> Polygon:
    pose, spec = placement
    return Polygon(rectangle_corners(spec, pose))


def _interiors_intersect(a: Placement, b: Placement) -> bool:
    """Separating axis test on the edge normals of both rectangles."""
    corners_a = rectangle_corners(a[1], a[0])
    corners_b = rectangle_corners(b[1], b[0])
    axes = []
    for pose in (a[0], b[0]):
        cos_yaw, sin_yaw = math.cos(pose.yaw), math.sin(pose.yaw)
        axes += [(cos_yaw, sin_yaw), (-sin_yaw, cos_yaw)]
    for axis in np.asarray(axes):
        projection_a = corners_a @ axis
        projection_b = corners_b @ axis
        separation = max(
            projection_b.min() - projection_a.max(),
            projection_a.min() - projection_b.max(),
        )
        if separation >= -OVERLAP_TOLERANCE:
            return False
    return True


def obb_overlap(a: Placement, b: Placement) -> tuple[bool, float]:
    """Oriented rectangle intersection test.

    Uses separating axes (the edge normals of both rectangles). Touching
    rectangles do not overlap.

    Parameters
    ----------
    a, b : `tuple` [`Pose2D`, `ObjectSpec`]
        Rectangles.

    Returns
    -------
    overlap : `bool`
        Whether the interiors intersect.
    clearance : `float`
        Minimum distance between the rectangles (m); 0 if they overlap.
    """
    if _interiors_intersect(a, b):
        return True, 0.0
    return False, max(0.0, float(_polygon(a).distance(_polygon(b))))


def _inside(placement: Placement, ws: Workspace) -> bool:
    corners = rectangle_corners(placement[1], placement[0])
    return bool(
        corners[:, 0].min() >= -OVERLAP_TOLERANCE
        and corners[:, 1].min() >= -OVERLAP_TOLERANCE
        and corners[:, 0].max() <= ws.width + OVERLAP_TOLERANCE
        and corners[:, 1].max() <= ws.height + OVERLAP_TOLERANCE
    )


class _Planner:
    """Mutable planning state for one `plan_actions` call."""

    def __init__(
        self,
        current: Layout,
        targets: typing.Sequence[tuple[float, float]],
        cfg: PlanConfig,
        log: logging.Logger,
    ) -> None:
        self.cfg = cfg
        self.log = log
        self.specs = list(current.objects)
        self.poses = list(current.poses)
        self.targets = [Pose2D(x, y, 0.0) for x, y in targets]
        self.placed = {
            index for index in range(len(self.specs)) if self.at_target(index)
        }
        self.swept: set[int] = set()
        self.separated: set[int] = set()
        self.plan: list[Action] = []

    def at_target(self, index: int) -> bool:
        pose, target = self.poses[index], self.targets[index]
        return (
            abs(pose.x - target.x) <= OVERLAP_TOLERANCE
            and abs(pose.y - target.y) <= OVERLAP_TOLERANCE
            and abs(pose.yaw) <= OVERLAP_TOLERANCE
        )

    def placement(self, index: int, pose: Pose2D | None = None) -> Placement:
        return (pose if pose is not None else self.poses[index], self.specs[index])

    def target_placement(self, index: int) -> Placement:
        return (self.targets[index], self.specs[index])

    def act(self, kind: ActionKind, index: int, destination: Pose2D) -> None:
        if self.cfg.emit_transit:
            self.plan.append(Action(ActionKind.MOVE, index, self.poses[index], self.poses[index]))
        self.plan.append(Action(kind, index, self.poses[index], destination))
        self.poses[index] = destination

    def targets_hit(self, index: int, pose: Pose2D) -> set[int]:
        """Target footprints of other objects that ``index`` would overlap."""
        return {
            other
            for other in range(len(self.specs))
            if other != index
            and _interiors_intersect(self.placement(index, pose), self.target_placement(other))
        }

    def min_clearance(self, index: int, pose: Pose2D) -> float | None:
        """Smallest clearance to the standing objects; `None` on overlap."""
        clearance = math.inf
        for other in range(len(self.specs)):
            if other == index:
                continue
            overlap, distance = obb_overlap(
                self.placement(index, pose), self.placement(other)
            )
            if overlap or distance <= self.cfg.clearance_epsilon:
                return None
            clearance = min(clearance, distance)
        return clearance

    def nudge(self, index: int) -> Pose2D | None:
        """Pose ``separation_threshold`` away along the widest-clearance
        direction, or `None` if no direction is free.
        """
        pose = self.poses[index]
        allowed_targets = self.targets_hit(index, pose)
        best, best_clearance = None, -math.inf
        for dx, dy in _DIRECTIONS:
            candidate = Pose2D(
                pose.x + dx * self.cfg.separation_threshold,
                pose.y + dy * self.cfg.separation_threshold,
                pose.yaw,
            )
            if not _inside(self.placement(index, candidate), self.cfg.workspace):
                continue
            if not self.targets_hit(index, candidate) <= allowed_targets:
                continue
            clearance = self.min_clearance(index, candidate)
            if clearance is not None and clearance > best_clearance:
                best, best_clearance = candidate, clearance
        return best

    def separate(self, index: int) -> None:
        """Separate objects closer than the threshold to ``index``."""
        for other in range(len(self.specs)):
            if other == index:
                continue
            _, clearance = obb_overlap(self.placement(index), self.placement(other))
            if clearance >= self.cfg.separation_threshold - self.cfg.clearance_epsilon:
                continue
            for candidate in (other, index):
                if candidate in self.placed or candidate in self.separated:
                    continue
                destination = self.nudge(candidate)
                if destination is not None:
                    self.act(ActionKind.SEPARATE, candidate, destination)
                    self.separated.add(candidate)
                    break
            else:
                self.log.debug(
                    f"Cannot separate objects {index} and {other} "
                    f"(clearance {clearance:.4f} m); grasping anyway."
                )

    def buffer_pose(self, index: int) -> Pose2D:
        """Free yaw-0 pose for a swept object.

        First fit along the far edge strip, then a grid search of the whole
        workspace from the far edge down.

        Raises
        ------
        PlanningError
            If no free pose exists.
        """
        spec = self.specs[index]
        ws = self.cfg.workspace
        step = self.cfg.search_step
        margin = 2 * self.cfg.clearance_epsilon
        x_values = np.arange(spec.width / 2 + margin, ws.width - spec.width / 2, step)
        strip_bottom = max(ws.height - self.cfg.buffer_depth, 0.0) + spec.length / 2
        y_top = ws.height - spec.length / 2 - margin
        y_values = np.concatenate(
            [
                [y_top],
                np.arange(y_top - step, strip_bottom - OVERLAP_TOLERANCE, -step),
                np.arange(min(strip_bottom, y_top) - step, spec.length / 2, -step),
            ]
        )
        for y in y_values:
            for x in x_values:
                candidate = Pose2D(float(x), float(y), 0.0)
                if (
                    _inside(self.placement(index, candidate), ws)
                    and not self.targets_hit(index, candidate)
                    and not _interiors_intersect(
                        self.placement(index, candidate), self.target_placement(index)
                    )
                    and self.min_clearance(index, candidate) is not None
                ):
                    return candidate
        raise PlanningError(f"No free buffer position for object {index}.")

    def sweep_blockers(self, index: int) -> None:
        for other in range(len(self.specs)):
            if other == index:
                continue
            if _interiors_intersect(self.target_placement(index), self.placement(other)):
                if other in self.placed or other in self.swept:
                    raise PlanningError(
                        f"Object {other} blocks the target of {index} and cannot be swept."
                    )
                self.act(ActionKind.SWEEP, other, self.buffer_pose(other))
                self.swept.add(other)

    def run(self) -> list[Action]:
        for index in range(len(self.specs)):
            if index in self.placed:
                continue
            self.separate(index)
            self.sweep_blockers(index)
            self.act(ActionKind.PICK_PLACE, index, self.targets[index])
            self.placed.add(index)
        return self.plan


def plan_actions(
    current: Layout,
    target: typing.Sequence[tuple[float, float]],
    cfg: PlanConfig = PlanConfig(),
    log: logging.Logger | None = None,
) -> list[Action]:
    """Plan the manipulations that move ``current`` onto ``target``.

    Objects are handled in target slot order; objects already at their
    target are left alone. Before object ``i`` is picked, neighbors closer
    than the separation threshold are nudged away (or ``i`` itself is, if
    the neighbor cannot move), and objects standing on ``i``'s target
    footprint are swept to the buffer strip. Then ``i`` is placed at its
    target with yaw 0. Every object is separated at most once, swept at most
    once and placed at most once.

    Parameters
    ----------
    current : `Layout`
        Current objects and poses.
    target : `list` [`tuple` [`float`, `float`]]
        Target center per object, same order as ``current``.
    cfg : `PlanConfig`
        Planner settings.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    plan : `list` [`Action`]
        Ordered actions; empty if ``current`` already matches ``target``.

    Raises
    ------
    PlanningError
        If the target layout is invalid or no buffer space is left.
    """
    log = log or logging.getLogger(__name__)
    if len(target) != len(current):
        raise PlanningError(
            f"Got {len(target)} targets for {len(current)} objects."
        )
    report = validate_scenario(
        ScenarioRecord(current.objects, target), cfg.workspace
    )
    if not report.ok:
        raise PlanningError(f"Invalid target layout: {report.describe()}.")

    plan = _Planner(current, target, cfg, log).run()
    log.debug(f"Planned {len(plan)} actions for {len(current)} objects.")
    return plan


def simulate_execution(
    current: Layout,
    plan: typing.Sequence[Action],
    log: logging.Logger | None = None,
) -> tuple[Layout, list[Collision]]:
    """Apply a plan on a 2D table.

    Transit moves are no-ops. For every other action, the destination
    footprint is checked against all standing objects and overlaps are
    logged.

    Returns
    -------
    final : `Layout`
        Layout after the last action.
    collisions : `list` [`Collision`]
        Destination overlaps, in plan order.

    Raises
    ------
    PlanningError
        If an action references a missing object.
    """
    log = log or logging.getLogger(__name__)
    specs = list(current.objects)
    poses = list(current.poses)
    collisions = []
    for step, action in enumerate(plan):
        if not 0 <= action.index < len(specs):
            raise PlanningError(
                f"Action {step} references object {action.index}; "
                f"there are {len(specs)} objects."
            )
        if action.kind is ActionKind.MOVE:
            continue
        destination = (action.destination, specs[action.index])
        for other in range(len(specs)):
            if other != action.index and _interiors_intersect(
                destination, (poses[other], specs[other])
            ):
                collisions.append(Collision(step=step, index=action.index, other=other))
                log.warning(
                    f"Step {step}: {action.kind.value} of object {action.index} "
                    f"lands on object {other}."
                )
        poses[action.index] = action.destination
    return Layout(tuple(zip(specs, poses))), collisions
