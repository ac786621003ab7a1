from __future__ import annotations

import csv
import hashlib
import json
import math
import pathlib
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np


def encode_floats(data: Any) -> Any:
    """Replace NaN and infinities by strings so the JSON stays standard."""
    if isinstance(data, dict):
        return {str(k): encode_floats(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [encode_floats(v) for v in data]
    if isinstance(data, np.ndarray):
        return encode_floats(data.tolist())
    if isinstance(data, (np.integer,)):
        return int(data)
    if isinstance(data, (float, np.floating)):
        x = float(data)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(data, "value") and isinstance(getattr(data, "value"), str):
        return data.value
    return data


def read_json(path: str | pathlib.Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json(path: str | pathlib.Path, data: Dict[str, Any]) -> pathlib.Path:
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        json.dump(encode_floats(data), f, indent=2, ensure_ascii=False, allow_nan=False)
        f.write("\n")
    return p


def format_cell(value: Any) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return str(value)


def write_csv(path: str | pathlib.Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> pathlib.Path:
    p = pathlib.Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(x) for x in row])
    return p


def read_csv(path: str | pathlib.Path) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def sha256_file(path: str | pathlib.Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class Artifacts:
    """Tracks files written by one run so they can be listed or rolled back."""

    def __init__(self, out_dir: str | pathlib.Path):
        self.out_dir = pathlib.Path(out_dir)
        self.paths: List[pathlib.Path] = []

    def path(self, name: str) -> pathlib.Path:
        return self.out_dir / name

    def _track(self, p: pathlib.Path) -> pathlib.Path:
        if p not in self.paths:
            self.paths.append(p)
        return p

    # tracked before writing so a failed write is still rolled back
    def json(self, name: str, data: Dict[str, Any]) -> pathlib.Path:
        return write_json(self._track(self.path(name)), data)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> pathlib.Path:
        return write_csv(self._track(self.path(name)), header, rows)

    def add(self, p: str | pathlib.Path) -> pathlib.Path:
        return self._track(pathlib.Path(p))

    def rollback(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)
        self.paths.clear()
