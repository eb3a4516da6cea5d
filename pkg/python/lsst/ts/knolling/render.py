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

__all__ = ["render_layout"]

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .core import Layout, Workspace  # noqa: E402


def render_layout(
    layout: Layout,
    path: str | os.PathLike,
    workspace: Workspace = Workspace(),
    title: str | None = None,
) -> None:
    """Draw a layout as an SVG file.

    Each object is a rectangle labelled with its index; the fill darkens
    with the object's area. Slot 0 is drawn at the top of the picture.

    Parameters
    ----------
    layout : `Layout`
        Objects and poses to draw.
    path : `str` or `os.PathLike`
        Output file; the format is SVG.
    workspace : `Workspace`, optional
        Drawing extent.
    title : `str`, optional
        Figure title.
    """
    largest = max((spec.area for spec in layout.objects), default=1.0)
    colormap = matplotlib.colormaps["Blues"]

    figure, axes = plt.subplots(figsize=(5, 5))
    try:
        for index, (spec, pose) in enumerate(layout.items):
            # Rectangle rotates about its anchor corner.
            cos_yaw, sin_yaw = math.cos(pose.yaw), math.sin(pose.yaw)
            anchor = (
                pose.x - (spec.width / 2) * cos_yaw + (spec.length / 2) * sin_yaw,
                pose.y - (spec.width / 2) * sin_yaw - (spec.length / 2) * cos_yaw,
            )
            axes.add_patch(
                Rectangle(
                    anchor,
                    spec.width,
                    spec.length,
                    angle=math.degrees(pose.yaw),
                    facecolor=colormap(0.2 + 0.7 * spec.area / largest),
                    edgecolor="black",
                    linewidth=0.8,
                )
            )
            axes.annotate(
                str(index), (pose.x, pose.y), ha="center", va="center", fontsize=8
            )
        axes.set_xlim(0.0, workspace.width)
        axes.set_ylim(0.0, workspace.height)
        axes.invert_yaxis()
        axes.set_aspect("equal")
        axes.set_xlabel("x (m)")
        axes.set_ylabel("y (m)")
        if title:
            axes.set_title(title)
        figure.savefig(path, format="svg", bbox_inches="tight")
    finally:
        plt.close(figure)
