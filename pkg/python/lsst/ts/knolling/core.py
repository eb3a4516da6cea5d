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
    "MIN_OBJECT_SIZE",
    "MAX_OBJECT_SIZE",
    "MAX_OBJECTS",
    "OVERLAP_TOLERANCE",
    "ObjectSpec",
    "Pose2D",
    "Layout",
    "Workspace",
    "ScenarioRecord",
    "ValidityReport",
    "normalize_yaw",
    "rectangle_corners",
    "edge_separation",
    "validate_scenario",
]

import dataclasses
import math
import typing

import numpy as np

# Generation range of object extents (meters).
MIN_OBJECT_SIZE = 0.01
MAX_OBJECT_SIZE = 0.05

MAX_OBJECTS = 10

OVERLAP_TOLERANCE = 1e-9


def normalize_yaw(yaw: float) -> float:
    """Fold an angle into the rectangle yaw range (-pi/2, pi/2].

    Parameters
    ----------
    yaw : `float`
        Angle (rad).

    Returns
    -------
    `float`
        Equivalent yaw modulo pi.
    """
    folded = math.fmod(yaw, math.pi)
    if folded <= -math.pi / 2:
        folded += math.pi
    elif folded > math.pi / 2:
        folded -= math.pi
    return folded


@dataclasses.dataclass(frozen=True)
class ObjectSpec:
    """Rectangular object footprint.

    Parameters
    ----------
    width : `float`
        Extent along the object x-axis (m).
    length : `float`
        Extent along the object y-axis (m).
    """

    width: float
    length: float

    def __post_init__(self) -> None:
        for name in ("width", "length"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise ValueError(
                    f"Object {name} must be finite and strictly positive, got {value}."
                )

    @property
    def area(self) -> float:
        return self.width * self.length

    @property
    def aspect_ratio(self) -> float:
        return max(self.width, self.length) / min(self.width, self.length)

    def in_generation_range(self) -> bool:
        """Is the object inside the size range used to generate data?"""
        return all(
            MIN_OBJECT_SIZE <= value <= MAX_OBJECT_SIZE
            for value in (self.width, self.length)
        )


@dataclasses.dataclass(frozen=True)
class Pose2D:
    """Planar pose; yaw is folded into (-pi/2, pi/2] on construction."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(value) for value in (self.x, self.y, self.yaw)):
            raise ValueError(f"Pose must be finite, got {self}.")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclasses.dataclass(frozen=True)
class Workspace:
    """Square tabletop region with its corner at the origin."""

    width: float = 0.30
    height: float = 0.30

    def __post_init__(self) -> None:
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("Workspace dimensions must be positive.")


@dataclasses.dataclass(frozen=True)
class Layout:
    """Ordered placement of objects.

    Parameters
    ----------
    items : `tuple` [`tuple` [`ObjectSpec`, `Pose2D`]]
        Object and pose, in slot order.
    """

    items: tuple[tuple[ObjectSpec, Pose2D], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(tuple(item) for item in self.items))

    @classmethod
    def from_targets(
        cls,
        objects: typing.Sequence[ObjectSpec],
        targets: typing.Sequence[tuple[float, float]],
    ) -> "Layout":
        """Build an axis-aligned layout from objects and (x, y) targets."""
        if len(objects) != len(targets):
            raise ValueError(
                f"Got {len(objects)} objects but {len(targets)} targets."
            )
        return cls(
            tuple(
                (spec, Pose2D(float(x), float(y), 0.0))
                for spec, (x, y) in zip(objects, targets)
            )
        )

    def __len__(self) -> int:
        return len(self.items)

    @property
    def objects(self) -> tuple[ObjectSpec, ...]:
        return tuple(spec for spec, _ in self.items)

    @property
    def poses(self) -> tuple[Pose2D, ...]:
        return tuple(pose for _, pose in self.items)

    @property
    def targets(self) -> tuple[tuple[float, float], ...]:
        return tuple((pose.x, pose.y) for _, pose in self.items)

    def bounding_box(self) -> tuple[float, float, float, float]:
        """Union bounding box (xmin, ymin, xmax, ymax) of the rotated
        rectangles.
        """
        if not self.items:
            raise ValueError("Empty layout has no bounding box.")
        corners = np.concatenate(
            [rectangle_corners(spec, pose) for spec, pose in self.items]
        )
        xmin, ymin = corners.min(axis=0)
        xmax, ymax = corners.max(axis=0)
        return float(xmin), float(ymin), float(xmax), float(ymax)


def rectangle_corners(spec: ObjectSpec, pose: Pose2D) -> np.ndarray:
    """Corners of a rectangle in counter-clockwise order, shape (4, 2)."""
    half = np.array(
        [
            [-spec.width / 2, -spec.length / 2],
            [spec.width / 2, -spec.length / 2],
            [spec.width / 2, spec.length / 2],
            [-spec.width / 2, spec.length / 2],
        ]
    )
    cos_yaw, sin_yaw = math.cos(pose.yaw), math.sin(pose.yaw)
    rotation = np.array([[cos_yaw, -sin_yaw], [sin_yaw, cos_yaw]])
    return half @ rotation.T + np.array([pose.x, pose.y])


@dataclasses.dataclass(frozen=True)
class ScenarioRecord:
    """One training pair: objects in slot order and their axis-aligned
    target centers.
    """

    objects: tuple[ObjectSpec, ...]
    targets: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(
            self,
            "targets",
            tuple((float(x), float(y)) for x, y in self.targets),
        )

    @property
    def n(self) -> int:
        return len(self.objects)

    def to_layout(self) -> Layout:
        return Layout.from_targets(self.objects, self.targets)

    def truncated(self, count: int) -> "ScenarioRecord":
        """The first ``count`` slots of this record."""
        return ScenarioRecord(self.objects[:count], self.targets[:count])


@dataclasses.dataclass
class ValidityReport:
    """Outcome of `validate_scenario`; empty lists mean no violation."""

    length_mismatch: bool = False
    non_finite: list[int] = dataclasses.field(default_factory=list)
    overlaps: list[tuple[int, int]] = dataclasses.field(default_factory=list)
    out_of_bounds: list[int] = dataclasses.field(default_factory=list)
    gap_violations: list[tuple[int, int]] = dataclasses.field(default_factory=list)
    slot_order_violations: list[tuple[int, int]] = dataclasses.field(
        default_factory=list
    )

    @property
    def ok(self) -> bool:
        return not (
            self.length_mismatch
            or self.non_finite
            or self.overlaps
            or self.out_of_bounds
            or self.gap_violations
            or self.slot_order_violations
        )

    def describe(self) -> str:
        if self.ok:
            return "OK"
        problems = []
        if self.length_mismatch:
            problems.append("objects/targets length mismatch")
        if self.non_finite:
            problems.append(f"non-finite targets {self.non_finite}")
        if self.overlaps:
            problems.append(f"overlapping pairs {self.overlaps}")
        if self.out_of_bounds:
            problems.append(f"out-of-bounds objects {self.out_of_bounds}")
        if self.gap_violations:
            problems.append(f"gap violations {self.gap_violations}")
        if self.slot_order_violations:
            problems.append(f"out-of-order slots {self.slot_order_violations}")
        return "; ".join(problems)


def edge_separation(
    first: tuple[ObjectSpec, tuple[float, float]],
    second: tuple[ObjectSpec, tuple[float, float]],
) -> tuple[float, float]:
    """Signed axis separations of two axis-aligned rectangles.

    Positive values are free space between the facing edges, negative values
    are interpenetration depth.

    Returns
    -------
    separation : `tuple` [`float`, `float`]
        Separation along x and along y (m).
    """
    (spec_a, (xa, ya)), (spec_b, (xb, yb)) = first, second
    sep_x = abs(xa - xb) - (spec_a.width + spec_b.width) / 2
    sep_y = abs(ya - yb) - (spec_a.length + spec_b.length) / 2
    return sep_x, sep_y


def _follows_in_slot_order(
    first: tuple[ObjectSpec, tuple[float, float]],
    second: tuple[ObjectSpec, tuple[float, float]],
) -> bool:
    (spec_a, (xa, ya)), (spec_b, (xb, yb)) = first, second
    if yb - spec_b.length / 2 >= ya + spec_a.length / 2 - OVERLAP_TOLERANCE:
        return True
    same_row = abs(ya - yb) < (spec_a.length + spec_b.length) / 2
    return same_row and xb > xa


def validate_scenario(
    record: ScenarioRecord,
    ws: Workspace,
    min_gap: float = 0.0,
    check_slot_order: bool = False,
) -> ValidityReport:
    """Check a record for overlap, containment and spacing violations.

    Parameters
    ----------
    record : `ScenarioRecord`
        Record to check; targets are axis-aligned centers.
    ws : `Workspace`
        Workspace the targets must lie in.
    min_gap : `float`, optional
        Minimum edge clearance between any two objects (m). Pairs closer than
        ``min_gap - 1e-9`` that do not overlap are reported as gap violations.
    check_slot_order : `bool`, optional
        Also require row-major slot order: for slots ``i < j``, object ``j``
        lies wholly above object ``i``, or shares its row and lies to its
        right. Pairs breaking this are reported as slot order violations.

    Returns
    -------
    report : `ValidityReport`
        Report listing every violation; ``report.ok`` when there is none.
    """
    report = ValidityReport()
    if len(record.objects) != len(record.targets):
        report.length_mismatch = True
        return report

    items = list(zip(record.objects, record.targets))
    for index, (spec, (x, y)) in enumerate(items):
        if not (math.isfinite(x) and math.isfinite(y)):
            report.non_finite.append(index)
            continue
        if (
            x - spec.width / 2 < -OVERLAP_TOLERANCE
            or y - spec.length / 2 < -OVERLAP_TOLERANCE
            or x + spec.width / 2 > ws.width + OVERLAP_TOLERANCE
            or y + spec.length / 2 > ws.height + OVERLAP_TOLERANCE
        ):
            report.out_of_bounds.append(index)

    finite = [index for index in range(len(items)) if index not in report.non_finite]
    for position, i in enumerate(finite):
        for j in finite[position + 1 :]:
            sep_x, sep_y = edge_separation(items[i], items[j])
            if sep_x < -OVERLAP_TOLERANCE and sep_y < -OVERLAP_TOLERANCE:
                report.overlaps.append((i, j))
            elif min_gap > 0.0 and max(sep_x, sep_y) < min_gap - OVERLAP_TOLERANCE:
                report.gap_violations.append((i, j))
            if check_slot_order and not _follows_in_slot_order(items[i], items[j]):
                report.slot_order_violations.append((i, j))

    return report
