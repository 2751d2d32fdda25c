"""Incremental reader for top-level JSON arrays.

Annotation files are a single JSON array of scene objects and can run to
hundreds of thousands of QA pairs, so the file is never materialized at
once: elements are decoded one at a time with ``json.JSONDecoder.
raw_decode`` over a sliding buffer. Peak memory is bounded by the largest
single element plus one read chunk.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator

_WHITESPACE = " \t\n\r"


class StreamSyntaxError(ValueError):
    """Malformed JSON at a known byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (near offset {offset})")
        self.offset = offset


class _Cursor:
    def __init__(self, fp: IO[str], chunk_size: int):
        self.fp = fp
        self.chunk_size = chunk_size
        self.buf = ""
        self.pos = 0        # index into buf
        self.consumed = 0   # chars dropped from the front of buf so far
        self.eof = False

    @property
    def offset(self) -> int:
        return self.consumed + self.pos

    def fill(self) -> bool:
        """Read one more chunk; returns False at EOF."""
        if self.eof:
            return False
        chunk = self.fp.read(self.chunk_size)
        if not chunk:
            self.eof = True
            return False
        self.buf += chunk
        return True

    def compact(self):
        if self.pos > self.chunk_size:
            self.buf = self.buf[self.pos:]
            self.consumed += self.pos
            self.pos = 0

    def skip_ws(self) -> bool:
        """Advance past whitespace; returns False if EOF reached first."""
        while True:
            while self.pos < len(self.buf) and self.buf[self.pos] in _WHITESPACE:
                self.pos += 1
            if self.pos < len(self.buf):
                return True
            if not self.fill():
                return False

    def peek(self) -> str:
        return self.buf[self.pos]


def iter_json_array(source: str | Path | IO[str],
                    chunk_size: int = 1 << 20) -> Iterator[object]:
    """Yield the elements of a top-level JSON array one by one."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            yield from _iter(fp, chunk_size)
    else:
        yield from _iter(source, chunk_size)


def _iter(fp: IO[str], chunk_size: int) -> Iterator[object]:
    decoder = json.JSONDecoder()
    cur = _Cursor(fp, chunk_size)

    if not cur.skip_ws():
        raise StreamSyntaxError("empty input, expected a JSON array", cur.offset)
    if cur.peek() != "[":
        raise StreamSyntaxError(f"expected '[', found {cur.peek()!r}", cur.offset)
    cur.pos += 1

    first = True
    while True:
        if not cur.skip_ws():
            raise StreamSyntaxError("unterminated array", cur.offset)
        ch = cur.peek()
        if ch == "]":
            cur.pos += 1
            break
        if not first:
            if ch != ",":
                raise StreamSyntaxError(f"expected ',' or ']', found {ch!r}", cur.offset)
            cur.pos += 1
            if not cur.skip_ws():
                raise StreamSyntaxError("unterminated array", cur.offset)
        first = False
        yield _decode_element(decoder, cur)
        cur.compact()

    if cur.skip_ws():
        raise StreamSyntaxError(f"trailing data {cur.peek()!r} after array", cur.offset)


_NUMBER_CONTINUATION = set("0123456789.eE+-")


def _decode_element(decoder: json.JSONDecoder, cur: _Cursor) -> object:
    while True:
        try:
            obj, end = decoder.raw_decode(cur.buf, cur.pos)
        except json.JSONDecodeError as e:
            # Could be a truncated element; retry with more data.
            if cur.fill():
                continue
            raise StreamSyntaxError(f"malformed element: {e.msg}",
                                    cur.consumed + e.pos) from None
        # A number cut by the chunk boundary can parse as a shorter prefix
        # ("9.25" out of "9.25e2", or "9" out of "9.25"); re-decode until
        # the next char can no longer extend it.
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            if ((end == len(cur.buf) or cur.buf[end] in _NUMBER_CONTINUATION)
                    and cur.fill()):
                continue
        cur.pos = end
        return obj
