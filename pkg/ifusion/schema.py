from __future__ import annotations

import json
from importlib import resources
from typing import Any, Dict, Type, cast

import jsonschema

from .exceptions import ConfigError, IFusionOperationalError

CONFIG_SCHEMA = "ifusion.run.config.v0.1.json"
MANIFEST_SCHEMA = "ifusion.archive.manifest.v0.1.json"
PLAN_SCHEMA = "ifusion.plan.v0.1.json"

_SCHEMAS: Dict[str, Dict[str, Any]] = {}

# jsonschema validator keyword -> error_code
_CODES = {
    "additionalProperties": "UNKNOWN_KEY",
    "minimum": "OUT_OF_RANGE",
    "maximum": "OUT_OF_RANGE",
    "exclusiveMinimum": "OUT_OF_RANGE",
    "exclusiveMaximum": "OUT_OF_RANGE",
    "enum": "OUT_OF_RANGE",
}


def load_schema(name: str) -> Dict[str, Any]:
    """Load a schema from package data with caching."""
    if name not in _SCHEMAS:
        with resources.files("ifusion").joinpath(f"schemas/{name}").open(
            "r", encoding="utf-8"
        ) as f:
            _SCHEMAS[name] = cast(Dict[str, Any], json.load(f))
    return _SCHEMAS[name]


def validate(
    instance: Any,
    schema_name: str,
    *,
    error_cls: Type[IFusionOperationalError] = ConfigError,
) -> None:
    """
    Validate a document against a packaged schema.

    Raises:
        error_cls: with error_code UNKNOWN_KEY, OUT_OF_RANGE or CONFIG_INVALID and
            details naming the JSON path of the first failure.
    """
    schema = load_schema(schema_name)
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(
        validator.iter_errors(instance), key=lambda e: [str(p) for p in e.absolute_path]
    )
    if not errors:
        return
    err = errors[0]
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    raise error_cls(
        f"{schema_name}: {path}: {err.message}",
        error_code=_CODES.get(str(err.validator), "CONFIG_INVALID"),
        details={"path": path, "validator": str(err.validator), "schema": schema_name},
    )
