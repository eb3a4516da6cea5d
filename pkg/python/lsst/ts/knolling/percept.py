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
    "RECTANGULARITY_TOLERANCE",
    "SQUARE_TOLERANCE",
    "DegenerateQuadError",
    "NonRectangularError",
    "pose_from_keypoints",
    "keypoints_from_pose",
    "canonical_pose",
    "parse_scene_line",
    "read_scene",
]

import json
import math
import os
import typing

import numpy as np
from shapely.geometry import MultiPoint

from .core import Layout, ObjectSpec, Pose2D, rectangle_corners
from .laygen import DatasetFormatError

RECTANGULARITY_TOLERANCE = 0.2

SQUARE_TOLERANCE = 1e-9


class DegenerateQuadError(ValueError):
    """Raised when four keypoints do not span a quadrilateral."""


class NonRectangularError(ValueError):
    """Raised when a quadrilateral is too far from a rectangle.

    Parameters
    ----------
    ratio : `float`
        Largest relative mismatch between opposite edges.
    """

    def __init__(self, ratio: float) -> None:
        self.ratio = ratio
        super().__init__(
            f"Keypoints are not rectangular: mismatch ratio {ratio:.3f} exceeds "
            f"{RECTANGULARITY_TOLERANCE}."
        )


def canonical_pose(pose: Pose2D, spec: ObjectSpec) -> tuple[Pose2D, ObjectSpec]:
    """Unique representation of a rectangle's pose.

    The width is the longer side and the yaw gives its direction in
    (-pi/2, pi/2]; squares have their yaw folded into (-pi/4, pi/4].
    """
    width, length, yaw = spec.width, spec.length, pose.yaw
    if width < length - SQUARE_TOLERANCE:
        width, length, yaw = length, width, yaw + math.pi / 2
    if abs(width - length) <= SQUARE_TOLERANCE:
        yaw = math.fmod(yaw, math.pi / 2)
        if yaw <= -math.pi / 4:
            yaw += math.pi / 2
        elif yaw > math.pi / 4:
            yaw -= math.pi / 2
    return Pose2D(pose.x, pose.y, yaw), ObjectSpec(width, length)


def pose_from_keypoints(
    q: typing.Sequence[typing.Sequence[float]] | np.ndarray,
) -> tuple[Pose2D, ObjectSpec]:
    """Recover a rectangle from its four corner keypoints.

    The points may come in any order; they are ordered along their convex
    hull first. The center is the mean of the corners, the dimensions are
    the mean lengths of opposite edges, and the yaw is the doubled-angle
    average of the edge directions. The result is in `canonical_pose` form.

    Parameters
    ----------
    q : array-like
        Four (x, y) points, meters.

    Returns
    -------
    pose : `Pose2D`
        Center and yaw.
    spec : `ObjectSpec`
        Width (longer side) and length.

    Raises
    ------
    DegenerateQuadError
        If the points are not finite, are collinear, or one lies inside the
        triangle of the others.
    NonRectangularError
        If the lengths of opposite edges differ by more than 20%.
    """
    points = np.asarray(q, dtype=np.float64)
    if points.shape != (4, 2):
        raise DegenerateQuadError(f"Expected 4 points of 2 coordinates, got {points.shape}.")
    if not np.all(np.isfinite(points)):
        raise DegenerateQuadError("Keypoints must be finite.")

    hull = MultiPoint([tuple(point) for point in points]).convex_hull
    if hull.geom_type != "Polygon":
        raise DegenerateQuadError(f"Keypoints are degenerate (hull is a {hull.geom_type}).")
    corners = np.asarray(hull.exterior.coords)[:-1]
    if len(corners) != 4:
        raise DegenerateQuadError(f"Keypoint hull has {len(corners)} vertices, not 4.")

    edges = np.roll(corners, -1, axis=0) - corners
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    ratio = max(
        abs(lengths[0] - lengths[2]) / (0.5 * (lengths[0] + lengths[2])),
        abs(lengths[1] - lengths[3]) / (0.5 * (lengths[1] + lengths[3])),
    )
    if ratio > RECTANGULARITY_TOLERANCE:
        raise NonRectangularError(ratio)

    # Edges 1 and 3 are perpendicular to the first axis; rotate them onto it.
    angles = np.arctan2(edges[:, 1], edges[:, 0]) + np.array([0.0, 0.5, 0.0, 0.5]) * math.pi
    yaw = 0.5 * math.atan2(np.sin(2 * angles).sum(), np.cos(2 * angles).sum())
    center = corners.mean(axis=0)

    pose = Pose2D(float(center[0]), float(center[1]), yaw)
    spec = ObjectSpec(
        float(0.5 * (lengths[0] + lengths[2])), float(0.5 * (lengths[1] + lengths[3]))
    )
    return canonical_pose(pose, spec)


def keypoints_from_pose(
    pose: Pose2D, spec: ObjectSpec, noise_std: float = 0.0, seed: int = 0
) -> np.ndarray:
    """Corner keypoints of a rectangle, optionally with Gaussian noise.

    Returns
    -------
    keypoints : `numpy.ndarray`
        Shape (4, 2), counter-clockwise from the (-w/2, -l/2) corner.
    """
    corners = rectangle_corners(spec, pose)
    if noise_std > 0.0:
        corners = corners + np.random.default_rng(seed).normal(0.0, noise_std, corners.shape)
    return corners


def parse_scene_line(line: str, line_number: int | None = None) -> tuple[str, ObjectSpec, Pose2D]:
    """Parse one scene line.

    A line is either ``{"width", "length", "x", "y", "yaw"}`` (yaw optional)
    or ``{"keypoints": [[x, y], ...]}`` with four points.

    Returns
    -------
    mode : `str`
        ``"pose"`` or ``"keypoints"``.
    spec : `ObjectSpec`
        Object size.
    pose : `Pose2D`
        Current pose.
    """
    try:
        data = json.loads(line)
        if not isinstance(data, dict):
            raise ValueError("scene line must be a JSON object.")
        if "keypoints" in data:
            pose, spec = pose_from_keypoints(data["keypoints"])
            return "keypoints", spec, pose
        spec = ObjectSpec(float(data["width"]), float(data["length"]))
        pose = Pose2D(float(data["x"]), float(data["y"]), float(data.get("yaw", 0.0)))
        return "pose", spec, pose
    except KeyError as e:
        raise DatasetFormatError(f"missing field {e}.", line_number) from e
    except (ValueError, TypeError) as e:
        raise DatasetFormatError(str(e), line_number) from e


def read_scene(path: str | os.PathLike) -> Layout:
    """Read a scene file into the current layout.

    Raises
    ------
    DatasetFormatError
        If a line is malformed, the file mixes line kinds or is empty.
    """
    items = []
    file_mode = None
    with open(path, encoding="utf-8") as stream:
        for line_number, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            mode, spec, pose = parse_scene_line(line, line_number)
            if file_mode is not None and mode != file_mode:
                raise DatasetFormatError(
                    f"{mode} line in a {file_mode} scene file.", line_number
                )
            file_mode = mode
            items.append((spec, pose))
    if not items:
        raise DatasetFormatError(f"Scene file {path} has no objects.")
    return Layout(tuple(items))
