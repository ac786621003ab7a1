from __future__ import annotations

import pathlib
from typing import Any, Dict, List, Optional

import jsonschema
from pydantic import BaseModel, Field

from . import __version__
from .templates import manifest_schema
from .util import Artifacts, encode_floats, read_json, sha256_file, write_json

MANIFEST_NAME = "manifest.json"


class FileEntry(BaseModel):
    path: str
    sha256: str
    bytes: int = Field(..., ge=0)


class RunManifest(BaseModel):
    tool: str = "sgdphaselab"
    version: str = __version__
    command: str
    seed: int
    started_at: str
    wall_time_s: float = Field(..., ge=0)
    config: Dict[str, Any]
    files: List[FileEntry] = []


def build_manifest(artifacts: Artifacts, command: str, config: Dict[str, Any], seed: int,
                   started_at: str, wall_time_s: float) -> RunManifest:
    files = [
        FileEntry(path=p.relative_to(artifacts.out_dir).as_posix(), sha256=sha256_file(p), bytes=p.stat().st_size)
        for p in artifacts.paths
    ]
    return RunManifest(command=command, seed=seed, started_at=started_at,
                       wall_time_s=wall_time_s, config=config, files=files)


def write_manifest(artifacts: Artifacts, manifest: RunManifest) -> pathlib.Path:
    data = encode_floats(manifest.model_dump(mode="json"))
    jsonschema.validate(data, manifest_schema())
    return write_json(artifacts.add(artifacts.path(MANIFEST_NAME)), data)


def load_manifest(path: str | pathlib.Path) -> RunManifest:
    data = read_json(path)
    jsonschema.validate(data, manifest_schema())
    return RunManifest.model_validate(data)


def verify_manifest(path: str | pathlib.Path) -> List[str]:
    """Problems found when re-hashing the files a manifest lists; empty when all verify."""
    root = pathlib.Path(path).parent
    manifest = load_manifest(path)
    problems: List[str] = []
    for entry in manifest.files:
        p = root / entry.path
        if not p.exists():
            problems.append(f"{entry.path}: missing")
        elif sha256_file(p) != entry.sha256:
            problems.append(f"{entry.path}: checksum mismatch")
    return problems


def render_markdown(manifest: RunManifest, problems: Optional[List[str]] = None,
                    reports: Optional[Dict[str, Dict[str, Any]]] = None) -> str:
    problems = problems or []
    status = "✅ VERIFIED" if not problems else "❌ CHECKSUM FAILURES"
    lines: List[str] = [
        f"### {manifest.command} {status}",
        "",
        f"- tool: {manifest.tool} {manifest.version}",
        f"- seed: {manifest.seed}",
        f"- started: {manifest.started_at} ({manifest.wall_time_s:.2f}s)",
        "",
        f"**Files ({len(manifest.files)})**",
        "| File | Bytes | SHA-256 |",
        "| --- | --- | --- |",
    ]
    for entry in manifest.files:
        lines.append(f"| {entry.path} | {entry.bytes} | `{entry.sha256[:12]}` |")
    if problems:
        lines += ["", "**Problems**"]
        lines += [f"- {p}" for p in problems]

    # scalar fields of JSON reports, one table each
    for name, report in (reports or {}).items():
        rows = [(k, v) for k, v in report.items() if isinstance(v, (int, float, str, bool)) or v is None]
        if not rows:
            continue
        lines += ["", f"**{name}**", "| Field | Value |", "| --- | --- |"]
        for key, value in rows:
            shown = f"{value:.6g}" if isinstance(value, float) else str(value)
            lines.append(f"| {key} | {shown} |")
    return "\n".join(lines)
