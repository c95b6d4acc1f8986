"""Line-oriented key-value file format used by every stage.

One JSON object per line, UTF-8. Writers sort keys so that identical data
always produces identical bytes.
"""

import json
import os
from typing import Iterable

from .errors import ParseError


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def parse_line(line: str, lineno: int = 0) -> dict:
    try:
        obj = json.loads(line)
    except ValueError as exc:
        raise ParseError(f"line {lineno}: not a valid key-value object: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"line {lineno}: expected a key-value object, got {type(obj).__name__}")
    return obj


def read_objects(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            out.append(parse_line(line, lineno))
    return out


def write_objects(path, objs: Iterable[dict]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(dumps(obj))
            fh.write("\n")
