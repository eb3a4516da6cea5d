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

__all__ = ["ExpectedError", "ScriptState", "DefaultingValidator", "BaseScript"]

import abc
import copy
import enum
import logging
import types
import typing

import jsonschema
import yaml


class ExpectedError(Exception):
    """Report a failure caused by the user (bad configuration or input)
    rather than by a bug.
    """


class ScriptState(enum.Enum):
    UNCONFIGURED = "unconfigured"
    CONFIGURED = "configured"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


def _extend_with_default(
    validator_class: type[jsonschema.protocols.Validator],
) -> type[jsonschema.protocols.Validator]:
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(
        validator: jsonschema.protocols.Validator,
        properties: dict,
        instance: typing.Any,
        schema: dict,
    ) -> typing.Iterator[jsonschema.ValidationError]:
        if validator.is_type(instance, "object"):
            for name, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(name, copy.deepcopy(subschema["default"]))
        yield from validate_properties(validator, properties, instance, schema)

    return jsonschema.validators.extend(validator_class, {"properties": set_defaults})


class DefaultingValidator:
    """JSON schema validator that fills in missing defaults.

    Parameters
    ----------
    schema : `dict`
        Draft-07 JSON schema.
    """

    def __init__(self, schema: dict) -> None:
        jsonschema.Draft7Validator.check_schema(schema)
        self.defaults_validator = _extend_with_default(jsonschema.Draft7Validator)(schema)

    def validate(self, data: dict | None) -> dict:
        """Validate a copy of ``data`` and return it with defaults set.

        Raises
        ------
        jsonschema.ValidationError
            If the data does not match the schema.
        """
        result = copy.deepcopy(data) if data is not None else {}
        self.defaults_validator.validate(result)
        return result


class BaseScript(abc.ABC):
    """Base class of the knolling pipeline scripts.

    A script is configured from a dictionary validated against its schema,
    then run once::

        script = SomeScript(index=1)
        await script.do_configure(dict(...))
        await script.do_run()

    Parameters
    ----------
    index : `int`
        Index of the script; only used in log names.
    descr : `str`
        Short description.
    """

    def __init__(self, index: int = 0, descr: str = "") -> None:
        self.index = index
        self.descr = descr
        self.log = logging.getLogger(type(self).__name__)
        self.config: types.SimpleNamespace | None = None
        self.metadata = types.SimpleNamespace(duration=0.0)
        self.checkpoints: list[str] = []
        self.state = ScriptState.UNCONFIGURED

    @classmethod
    def get_schema(cls) -> dict:
        schema_yaml = """
        $schema: http://json-schema.org/draft-07/schema#
        $id: https://github.com/lsst-ts/ts_knolling/base_script.py
        title: BaseScript v1
        description: Configuration shared by all knolling scripts.
        type: object
        properties:
            seed:
                description: Seed of every random draw made by the script.
                type: integer
                default: 0
            workers:
                description: >-
                    Number of parallel workers. If omitted, the KNOLL_THREADS
                    environment variable is used (default 1).
                anyOf:
                  - type: integer
                    minimum: 1
                  - type: "null"
                default: null
        additionalProperties: false
        """
        return yaml.safe_load(schema_yaml)

    @abc.abstractmethod
    async def configure(self, config: types.SimpleNamespace) -> None:
        """Configure the script from validated configuration."""
        raise NotImplementedError()

    def set_metadata(self, metadata: types.SimpleNamespace) -> None:
        """Fill in metadata; ``metadata.duration`` is the estimated run time
        in seconds.
        """
        pass

    @abc.abstractmethod
    async def run(self) -> None:
        raise NotImplementedError()

    async def cleanup(self) -> None:
        """Release resources after `run`, whether it succeeded or not."""
        pass

    async def checkpoint(self, name: str) -> None:
        self.checkpoints.append(name)
        self.log.info(f"Checkpoint: {name}")

    async def do_configure(self, config: dict | str | None = None) -> types.SimpleNamespace:
        """Validate and apply a configuration.

        Parameters
        ----------
        config : `dict` or `str`, optional
            Configuration as a dictionary or YAML text.

        Raises
        ------
        ExpectedError
            If the configuration fails validation or is rejected by
            `configure`.
        """
        if isinstance(config, str):
            config = yaml.safe_load(config) or {}
        try:
            config_dict = DefaultingValidator(self.get_schema()).validate(config)
        except jsonschema.ValidationError as e:
            raise ExpectedError(f"Failed validating configuration: {e.message}") from e

        namespace = types.SimpleNamespace(**config_dict)
        try:
            await self.configure(namespace)
        except (ValueError, OSError) as e:
            raise ExpectedError(f"Failed validating configuration: {e}") from e
        self.config = namespace
        self.set_metadata(self.metadata)
        self.state = ScriptState.CONFIGURED
        return namespace

    async def do_run(self) -> None:
        """Run the configured script, then clean up.

        Cleanup errors are logged and do not mask the run outcome.
        """
        if self.state is not ScriptState.CONFIGURED:
            raise RuntimeError(f"Script must be configured to run; state={self.state.value}.")
        self.state = ScriptState.RUNNING
        try:
            await self.run()
            self.state = ScriptState.DONE
        except Exception:
            self.state = ScriptState.FAILED
            raise
        finally:
            try:
                await self.cleanup()
            except Exception:
                self.log.exception("Error in cleanup.")

    async def close(self) -> None:
        pass
