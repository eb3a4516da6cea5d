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

import itertools
import json
import math
import os
import pathlib
import tempfile
import unittest

import numpy as np
import pytest
from lsst.ts.knolling import (
    DatasetFormatError,
    DegenerateQuadError,
    NonRectangularError,
    ObjectSpec,
    Pose2D,
    canonical_pose,
    keypoints_from_pose,
    normalize_yaw,
    parse_scene_line,
    pose_from_keypoints,
    read_scene,
)

FULL_TESTS = bool(os.environ.get("KNOLL_FULL_TESTS"))


def assert_same_pose(
    actual: tuple[Pose2D, ObjectSpec], expected: tuple[Pose2D, ObjectSpec], tolerance: float
) -> None:
    (pose, spec), (expected_pose, expected_spec) = actual, expected
    assert abs(pose.x - expected_pose.x) < tolerance
    assert abs(pose.y - expected_pose.y) < tolerance
    assert abs(normalize_yaw(pose.yaw - expected_pose.yaw)) < tolerance
    assert abs(spec.width - expected_spec.width) < tolerance
    assert abs(spec.length - expected_spec.length) < tolerance


class TestPoseFromKeypoints(unittest.TestCase):
    def test_unit_square(self) -> None:
        pose, spec = pose_from_keypoints([(0, 0), (1, 0), (1, 1), (0, 1)])
        assert pose.x == pytest.approx(0.5)
        assert pose.y == pytest.approx(0.5)
        assert abs(pose.yaw) < 1e-12
        assert spec.width == pytest.approx(1.0)
        assert spec.length == pytest.approx(1.0)

    def test_rotated_square(self) -> None:
        angle = math.radians(30)
        rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        square = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float) - 0.5
        pose, spec = pose_from_keypoints(square @ rotation.T + 0.5)
        assert abs(pose.yaw - angle) < 1e-9
        assert spec.width == pytest.approx(1.0, abs=1e-12)
        assert spec.length == pytest.approx(1.0, abs=1e-12)
        assert (pose.x, pose.y) == pytest.approx((0.5, 0.5), abs=1e-12)

    def test_steep_yaw(self) -> None:
        pose = Pose2D(0.1, 0.2, math.radians(89))
        recovered, spec = pose_from_keypoints(keypoints_from_pose(pose, ObjectSpec(0.04, 0.02)))
        assert abs(recovered.yaw - math.radians(89)) < 1e-9
        assert spec.width == pytest.approx(0.04, abs=1e-12)

        # A long y side is reported as the width, turned by 90 degrees.
        recovered, spec = pose_from_keypoints(
            keypoints_from_pose(Pose2D(0.1, 0.2, math.radians(10)), ObjectSpec(0.02, 0.04))
        )
        assert abs(recovered.yaw - math.radians(100 - 180)) < 1e-9
        assert (spec.width, spec.length) == pytest.approx((0.04, 0.02), abs=1e-12)

    def test_roundtrip(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(10_000 if FULL_TESTS else 1000):
            spec = ObjectSpec(*rng.uniform(0.01, 0.05, 2))
            pose = Pose2D(*rng.uniform(0.0, 0.3, 2), rng.uniform(-math.pi, math.pi))
            recovered = pose_from_keypoints(keypoints_from_pose(pose, spec))
            assert_same_pose(recovered, canonical_pose(pose, spec), 1e-9)

    def test_point_order_does_not_matter(self) -> None:
        points = keypoints_from_pose(Pose2D(0.12, 0.07, 0.4), ObjectSpec(0.05, 0.03))
        expected = pose_from_keypoints(points)
        for permutation in itertools.permutations(range(4)):
            assert_same_pose(pose_from_keypoints(points[list(permutation)]), expected, 1e-12)

    def test_dims_invariant_to_motion(self) -> None:
        points = keypoints_from_pose(Pose2D(0.0, 0.0, 0.0), ObjectSpec(0.05, 0.03))
        _, spec = pose_from_keypoints(points)
        angle = 1.1
        rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        _, moved = pose_from_keypoints(points @ rotation.T + np.array([0.2, -0.4]))
        assert moved.width == pytest.approx(spec.width, abs=1e-12)
        assert moved.length == pytest.approx(spec.length, abs=1e-12)

    def test_noisy_centers(self) -> None:
        rng = np.random.default_rng(1)
        trials = 10_000 if FULL_TESTS else 1000
        errors = []
        for trial in range(trials):
            spec = ObjectSpec(*rng.uniform(0.01, 0.05, 2))
            pose = Pose2D(*rng.uniform(0.05, 0.25, 2), rng.uniform(-math.pi, math.pi))
            try:
                recovered, _ = pose_from_keypoints(keypoints_from_pose(pose, spec, 1e-3, seed=trial))
            except NonRectangularError:
                # Noise of 1e-3 can skew a 1 cm edge past the tolerance.
                continue
            errors.append(math.hypot(recovered.x - pose.x, recovered.y - pose.y))
        assert len(errors) > 0.8 * trials
        assert np.mean(errors) < 1e-3

    def test_parallelogram_is_fitted(self) -> None:
        pose, spec = pose_from_keypoints([(0, 0), (0.03, 0), (0.04, 0.03), (0.01, 0.03)])
        assert pose.x == pytest.approx(0.02, abs=1e-12)
        assert pose.y == pytest.approx(0.015, abs=1e-12)
        assert spec.width == pytest.approx(math.sqrt(0.001), abs=1e-12)
        assert spec.length == pytest.approx(0.03, abs=1e-12)

    def test_degenerate(self) -> None:
        with pytest.raises(DegenerateQuadError, match="degenerate"):
            pose_from_keypoints([(0, 0), (1, 0), (2, 0), (3, 0)])
        with pytest.raises(DegenerateQuadError, match="3 vertices"):
            pose_from_keypoints([(0, 0), (1, 0), (0, 1), (0.2, 0.2)])
        with pytest.raises(DegenerateQuadError, match="finite"):
            pose_from_keypoints([(0, 0), (1, 0), (1, math.nan), (0, 1)])
        with pytest.raises(DegenerateQuadError, match="Expected 4 points"):
            pose_from_keypoints([(0, 0), (1, 0), (1, 1)])

    def test_not_rectangular(self) -> None:
        with pytest.raises(NonRectangularError, match="mismatch ratio") as excinfo:
            pose_from_keypoints([(0, 0), (1, 0), (0.7, 1), (0.3, 1)])
        assert excinfo.value.ratio > 0.2

        # A slightly skewed quad is fitted.
        _, spec = pose_from_keypoints([(0, 0), (1, 0), (1.02, 0.5), (0, 0.5)])
        assert spec.width == pytest.approx(1.0, abs=0.02)

    def test_canonical_square(self) -> None:
        pose, spec = canonical_pose(Pose2D(0.0, 0.0, math.radians(60)), ObjectSpec(0.02, 0.02))
        assert pose.yaw == pytest.approx(math.radians(-30))
        assert spec == ObjectSpec(0.02, 0.02)


class TestSceneFiles(unittest.TestCase):
    def setUp(self) -> None:
        self.tmpdir = tempfile.TemporaryDirectory()
        self.path = pathlib.Path(self.tmpdir.name) / "scene.jsonl"

    def tearDown(self) -> None:
        self.tmpdir.cleanup()

    def test_pose_lines(self) -> None:
        self.path.write_text(
            json.dumps(dict(width=0.02, length=0.03, x=0.1, y=0.1, yaw=0.3))
            + "\n\n"
            + json.dumps(dict(width=0.04, length=0.01, x=0.2, y=0.05))
            + "\n"
        )
        layout = read_scene(self.path)
        assert layout.objects == (ObjectSpec(0.02, 0.03), ObjectSpec(0.04, 0.01))
        assert layout.poses[0] == Pose2D(0.1, 0.1, 0.3)
        assert layout.poses[1].yaw == 0.0

    def test_keypoint_lines(self) -> None:
        points = keypoints_from_pose(Pose2D(0.1, 0.15, 0.2), ObjectSpec(0.04, 0.02))
        self.path.write_text(json.dumps(dict(keypoints=points.tolist())) + "\n")
        layout = read_scene(self.path)
        assert_same_pose((layout.poses[0], layout.objects[0]), (Pose2D(0.1, 0.15, 0.2), ObjectSpec(0.04, 0.02)), 1e-9)

    def test_mixed_lines(self) -> None:
        points = keypoints_from_pose(Pose2D(0.1, 0.15, 0.2), ObjectSpec(0.04, 0.02))
        self.path.write_text(
            json.dumps(dict(width=0.02, length=0.03, x=0.1, y=0.1))
            + "\n"
            + json.dumps(dict(keypoints=points.tolist()))
            + "\n"
        )
        with pytest.raises(DatasetFormatError, match="line 2: keypoints line in a pose scene file"):
            read_scene(self.path)

    def test_empty_file(self) -> None:
        self.path.write_text("\n")
        with pytest.raises(DatasetFormatError, match="has no objects"):
            read_scene(self.path)

    def test_bad_lines(self) -> None:
        with pytest.raises(DatasetFormatError, match="line 3: missing field 'x'"):
            parse_scene_line(json.dumps(dict(width=0.02, length=0.03, y=0.1)), 3)
        with pytest.raises(DatasetFormatError, match="JSON object"):
            parse_scene_line("[1, 2]")
        with pytest.raises(DatasetFormatError, match="strictly positive"):
            parse_scene_line(json.dumps(dict(width=0.0, length=0.03, x=0.1, y=0.1)))
        with pytest.raises(DatasetFormatError, match="not rectangular"):
            parse_scene_line(json.dumps(dict(keypoints=[[0, 0], [1, 0], [0.7, 1], [0.3, 1]])))
        with pytest.raises(DatasetFormatError):
            parse_scene_line("{not json")


if __name__ == "__main__":
    unittest.main()
