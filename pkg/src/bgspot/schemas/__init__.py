"""JSON Schemas (draft 2020-12) for the toolkit's JSON outputs."""

import json
from importlib import resources


def load_schema(name: str) -> dict:
    """Schema document for ``name`` (e.g. ``"detections"``)."""
    return json.loads(resources.files(__name__).joinpath(name + ".schema.json").read_text())
