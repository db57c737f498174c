"""Checkpoints, flat ``key=value`` config files and JSON/CSV reports.

Checkpoint format (version 1): a NumPy ``.npz`` archive. Every parameter is
stored under its name (e.g. ``layer3.W2``) as a 2-D float64 array, i.e. shape
plus row-major values. The reserved entry ``__meta__`` holds a JSON string
with ``format_version``, ``model_kind`` and the model configuration.

Report format: a JSON object with ``schema_version``, ``command``, ``seed``
and ``results``; ``created_at`` is added unless the report is deterministic.
Keys are sorted so equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from .exceptions import ConfigError, InputError

CHECKPOINT_FORMAT_VERSION = 1
REPORT_SCHEMA_VERSION = "1.0"

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "deepgat report",
    "type": "object",
    "required": ["schema_version", "command", "seed", "results"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "command": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
        "created_at": {"type": "string"},
        "config": {"type": "object"},
        "results": {"type": "object"},
    },
    "additionalProperties": False,
}

_META_KEY = "__meta__"


def save_checkpoint(path, params: Mapping[str, np.ndarray], model_kind: str, model_config: Mapping) -> Path:
    path = Path(path)
    arrays = {}
    for name, value in params.items():
        if name == _META_KEY:
            raise ConfigError(f"parameter name {_META_KEY!r} is reserved")
        arrays[name] = np.ascontiguousarray(np.asarray(getattr(value, "value", value), dtype=np.float64))
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": CHECKPOINT_FORMAT_VERSION, "model_kind": model_kind, "model_config": dict(model_config)}
    arrays[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Return ``(params, meta)``; rejects unknown format versions."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if _META_KEY not in data.files:
            raise InputError(f"{path} is not a deepgat checkpoint (no metadata)")
        meta = json.loads(str(data[_META_KEY]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InputError(f"unsupported checkpoint version {meta.get('format_version')}")
        params = {k: data[k].astype(np.float64) for k in data.files if k != _META_KEY}
    return params, meta


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def parse_config(text: str) -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = _coerce(value)
    return out


def load_config(path) -> Dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def to_jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if np.isfinite(value) else None
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    return obj


def build_report(command: str, results: Mapping, seed: Optional[int], config: Optional[Mapping] = None, deterministic: bool = False) -> dict:
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "results": to_jsonable(results),
    }
    if config is not None:
        report["config"] = to_jsonable(config)
    if not deterministic:
        report["created_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    validate_report(report)
    return report


def validate_report(report: Mapping):
    jsonschema.validate(instance=report, schema=REPORT_SCHEMA)


def dumps_report(report: Mapping) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def write_report(path, report: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report), encoding="utf-8")
    return path


def write_csv(path, rows: Sequence[Mapping], columns: Optional[Iterable[str]] = None) -> Path:
    path = Path(path)
    rows = list(rows)
    columns = list(columns) if columns is not None else (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: to_jsonable(row.get(k)) for k in columns})
    return path
