#!/usr/bin/env python3
"""Validate every workload manifest against docs/manifest.schema.json."""
import json
import pathlib
import sys

import jsonschema
import yaml

root = pathlib.Path(__file__).resolve().parent.parent
schema = json.loads((root / "docs" / "manifest.schema.json").read_text())
bad = 0
paths = sorted((root / "workloads").rglob("*.yaml"))
for p in paths:
    try:
        jsonschema.validate(yaml.safe_load(p.read_text()), schema)
    except jsonschema.ValidationError as e:
        bad += 1
        print(f"{p.relative_to(root)}: {e.message}")
print(f"{len(paths) - bad}/{len(paths)} manifests valid")
sys.exit(1 if bad else 0)
