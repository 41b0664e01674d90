"""Atomic file writes and the per-directory run manifest."""

from __future__ import annotations

import csv
import fcntl
import hashlib
import io
import json
import os
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

from .errors import FormatError, IoError

_thread_lock = threading.Lock()

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Path) -> str:
    """Return the SHA-256 hex digest for *path*."""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(131072), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write *payload* next to *path* and move it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_file = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp_file.write_bytes(payload)
        os.replace(tmp_file, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, data: Any) -> None:
    text = json.dumps(data, indent=2, sort_keys=False) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing input: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))


def update_manifest(
    output_dir: Path, new_data: Dict[str, Any], json_filename: str = MANIFEST_NAME
) -> None:
    """Thread-safe and process-safe manifest merge using a lock file and atomic replace."""
    json_file = Path(output_dir) / json_filename
    lock_file = json_file.with_suffix(json_file.suffix + ".lock")
    tmp_file = json_file.with_suffix(json_file.suffix + ".tmp")

    json_file.parent.mkdir(parents=True, exist_ok=True)

    with _thread_lock:  # synchronizes across threads
        with open(lock_file, "w", encoding="utf-8") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)  # synchronizes across processes

            try:
                data: Dict[str, Any] = {}
                if json_file.exists():
                    try:
                        with open(json_file, "r", encoding="utf-8") as f:
                            data = json.load(f)
                    except json.JSONDecodeError:
                        data = {}

                data.update(new_data)

                with open(tmp_file, "w", encoding="utf-8") as f:
                    json.dump(data, f, indent=2, sort_keys=True)
                    f.write("\n")

                os.replace(tmp_file, json_file)
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)


def digest_outputs(paths: Iterable[Path], root: Path) -> Dict[str, str]:
    """Map each output's path relative to *root* onto its SHA-256 digest."""
    return {
        Path(p).relative_to(root).as_posix(): sha256_file(Path(p))
        for p in sorted(Path(p) for p in paths)
    }
