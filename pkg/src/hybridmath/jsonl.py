"""Line-oriented JSON helpers.

Everything the harness persists (problems, traces, fixtures, curated data)
is JSONL with sorted keys so that identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from typing import Any, Iterable, Iterator

from .errors import ParseError


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def read_jsonl(path: str) -> Iterator[tuple[int, Any]]:
    """Yield (1-based line number, parsed object); blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: not valid JSON: {exc}") from exc


def write_jsonl(path: str, objs: Iterable[Any]) -> int:
    """Write objects one per line; returns the number of lines written."""
    n = 0
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(dumps(obj) + "\n")
            n += 1
    return n


def append_jsonl(path: str, obj: Any) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dumps(obj) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
