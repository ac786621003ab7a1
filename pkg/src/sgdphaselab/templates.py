"""Files shipped in ``sgdphaselab/templates``: the example experiment and the manifest schema."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any, Dict

DEFAULT_CONFIG = "default_config.yml"
MANIFEST_SCHEMA = "manifest_schema.json"
SHIPPED = (DEFAULT_CONFIG, MANIFEST_SCHEMA)


def shipped_text(name: str) -> str:
    if name not in SHIPPED:
        raise KeyError(f"no shipped template named {name!r}; have {', '.join(SHIPPED)}")
    return (resources.files(__package__) / "templates" / name).read_text(encoding="utf-8")


def default_config_text() -> str:
    """Body written by ``sgdphaselab init``."""
    return shipped_text(DEFAULT_CONFIG)


@lru_cache(maxsize=None)
def manifest_schema() -> Dict[str, Any]:
    # parsed once per process; report validates every manifest against it
    return json.loads(shipped_text(MANIFEST_SCHEMA))
