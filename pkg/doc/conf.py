"""Sphinx configuration for the ts_knolling documentation.
This configuration only affects single-package Sphinx documentation builds.
"""

from documenteer.conf.guide import *  # type: ignore # noqa
