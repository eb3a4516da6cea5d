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

__all__ = ["run_command", "main"]

import argparse
import asyncio
import logging
import sys
import typing

import yaml

from .base_script import BaseScript, ExpectedError
from .laygen import DatasetFormatError, OrderingRule
from .net import MODEL_KINDS, ModelFormatError
from .scripts import EvaluateModel, GenerateDataset, KnollScene, RenderLayout, TrainModel

# Subcommand -> (script class, [(flag, config key, argparse keywords)]).
COMMANDS: dict[str, tuple[type[BaseScript], list[tuple[str, str, dict[str, typing.Any]]]]] = {
    "gen": (
        GenerateDataset,
        [
            ("--out", "output", dict(help="dataset file to write")),
            ("--count", "count", dict(type=int)),
            ("--n-min", "n_min", dict(type=int)),
            ("--n-max", "n_max", dict(type=int)),
            ("--stream", "stream", dict(type=int)),
            ("--gap", "gap", dict(type=float)),
            ("--iters", "iterations", dict(type=int, help="annealing iterations")),
        ],
    ),
    "train": (
        TrainModel,
        [
            ("--data", "dataset", dict(help="dataset file")),
            ("--out", "output", dict(help="model file to write")),
            ("--log-file", "log_file", dict(help="CSV training log")),
            ("--kind", "kind", dict(choices=sorted(MODEL_KINDS))),
            ("--curriculum", "curriculum", dict(choices=["pretrain", "direct"])),
            ("--lr", "learning_rate", dict(type=float)),
            ("--batch-size", "batch_size", dict(type=int)),
            ("--epochs", "max_epochs", dict(type=int)),
            ("--patience", "early_stop_patience", dict(type=int)),
        ],
    ),
    "eval": (
        EvaluateModel,
        [
            (
                "--experiment",
                "experiment",
                dict(choices=["suite", "baselines", "dataset_size", "pretraining"]),
            ),
            ("--model", "model", dict(help="model file (suite)")),
            ("--data", "dataset", dict(help="training dataset (ablations)")),
            ("--test-data", "test_dataset", dict(help="test dataset")),
            ("--counts", "test_counts", dict(type=int, nargs="+")),
            ("--test-size", "test_size", dict(type=int)),
            ("--temperature", "temperature", dict(type=float)),
            ("--out", "output", dict(help="report CSV to write")),
            ("--errors", "errors_file", dict(help="per-scenario error CSV")),
        ],
    ),
    "knoll": (
        KnollScene,
        [
            ("--scene", "scene", dict(help="scene file")),
            ("--model", "model", dict(help="model file")),
            ("--out", "output_dir", dict(help="output directory")),
            (
                "--order",
                "order",
                dict(help=f"one of {', '.join(rule.value for rule in OrderingRule)}"),
            ),
            ("--temperature", "temperature", dict(type=float)),
            ("--gap", "fallback_gap", dict(type=float)),
        ],
    ),
    "render": (
        RenderLayout,
        [
            ("--in", "input", dict(help="dataset or scene file")),
            ("--out", "output", dict(help="SVG file to write")),
            ("--format", "format", dict(choices=["dataset", "scene"])),
            ("--line", "line", dict(type=int)),
            ("--title", "title", dict()),
        ],
    ),
}

# Exceptions reported as user errors (exit status 2).
USER_ERRORS = (ExpectedError, DatasetFormatError, ModelFormatError, FileNotFoundError)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knoll", description="Generate, train, evaluate and apply knolling models."
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (script_class, flags) in COMMANDS.items():
        subparser = subparsers.add_parser(
            name, help=(script_class.__doc__ or "").strip().splitlines()[0]
        )
        subparser.add_argument("--config", help="YAML configuration; flags take precedence")
        subparser.add_argument("--seed", type=int)
        subparser.add_argument("--workers", type=int)
        for flag, key, kwargs in flags:
            subparser.add_argument(flag, dest=key, default=None, **kwargs)
    return parser


def build_config(args: argparse.Namespace) -> dict[str, typing.Any]:
    """Merge the ``--config`` file with the explicit flags.

    Raises
    ------
    ExpectedError
        If the configuration file is not a YAML mapping.
    """
    config: dict[str, typing.Any] = {}
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as stream:
                loaded = yaml.safe_load(stream)
        except (OSError, yaml.YAMLError) as e:
            raise ExpectedError(f"Cannot read configuration {args.config}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ExpectedError(f"Configuration {args.config} is not a mapping.")
        config.update(loaded or {})

    keys = ["seed", "workers"] + [key for _, key, _ in COMMANDS[args.command][1]]
    config.update({key: getattr(args, key) for key in keys if getattr(args, key) is not None})
    return config


async def run_script(script: BaseScript, config: dict[str, typing.Any]) -> None:
    try:
        await script.do_configure(config)
        await script.do_run()
    finally:
        await script.close()


def run_command(argv: typing.Sequence[str]) -> int:
    """Run one subcommand.

    Returns
    -------
    status : `int`
        0 on success, 2 on invalid usage, configuration or input, 1 on any
        other error.
    """
    try:
        args = make_parser().parse_args(list(argv))
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    log = logging.getLogger("knoll")

    script_class, _ = COMMANDS[args.command]
    try:
        config = build_config(args)
        asyncio.run(run_script(script_class(), config))
    except USER_ERRORS as e:
        log.error(str(e))
        return 2
    except Exception:
        log.exception(f"{args.command} failed.")
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
