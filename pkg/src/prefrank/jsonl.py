"""Canonical JSON-lines reading and writing.

Records are serialized with a fixed, compact separator convention and
insertion-ordered keys so that writing the same records always produces
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable


def dumps_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    """Write records one per line; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> list[dict]:
    """Read all records, skipping blank lines."""
    records: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ValueError(f"{path}:{n}: expected a JSON object per line")
            records.append(record)
    return records
