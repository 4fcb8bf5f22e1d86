"""Utility helpers for answer-recommender."""

import hashlib
import json
import os
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

import rerun as rr


def get_recording_stream(
    recording_stream: rr.RecordingStream | None = None,
    save_path: Path | str | None = None,
    application_id: str | None = None,
) -> rr.RecordingStream:
    """Tries to get or create the appropriate Rerun recording stream.

    If save_path is provided, a new recording stream is created and saved to that path.

    :param recording_stream: An optional existing recording stream to use.
    :param save_path: An optional path to save the recording stream.
    :param application_id: The application ID to use when creating a new recording stream.
    """
    recording_stream = rr.get_data_recording(recording_stream)
    if save_path is not None:
        if application_id is None:
            application_id = "answer_recommender"
        recording_stream = rr.RecordingStream(application_id=application_id)
        Path(save_path).parent.mkdir(parents=True, exist_ok=True)
        recording_stream.save(path=save_path)

    if recording_stream is None:
        # recording stream or save path must be provided if the global one is not set
        raise ValueError(
            "No Rerun recording stream is set. Please provide either a recording stream, "
            "a save path, or start a global recording stream (e.g., via `rerun.init()`)."
        )

    return recording_stream


def atomic_write_bytes(path: Path | str, data: bytes) -> Path:
    """Write ``data`` to ``path`` through a temporary sibling file and a rename.

    Readers never observe a half-written artifact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(temp_path, path)
    return path


def atomic_write_text(path: Path | str, text: str) -> Path:
    """Text variant of :func:`atomic_write_bytes` (UTF-8)."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_record(record: dict[str, Any]) -> str:
    """Canonical single-line JSON used by every JSONL artifact and the serve protocol."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Path | str, records: Iterable[dict[str, Any]]) -> Path:
    """Atomically write one JSON record per line."""
    lines = [dumps_record(record) + "\n" for record in records]
    return atomic_write_text(path, "".join(lines))


def read_jsonl(path: Path | str) -> Iterator[dict[str, Any]]:
    """Yield the records of a JSONL file, skipping blank lines."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def sha256_file(path: Path | str) -> str:
    """Hex sha256 of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: Path | str, record: Any) -> Path:
    """Atomically write an indented JSON document (reports, manifests, splits)."""
    return atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: Path | str) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
