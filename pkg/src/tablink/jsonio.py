"""Tiny JSONL helpers with file/line error context."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def read_jsonl(path: Path, error_cls: type[Exception]) -> Iterator[tuple[int, Any]]:
    """Yield (line_number, parsed_object); raise ``error_cls`` on bad lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise error_cls(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def write_jsonl(path: Path, rows: Iterable[Any]) -> None:
    """Write one compact, key-sorted JSON object per line (UTF-8)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
