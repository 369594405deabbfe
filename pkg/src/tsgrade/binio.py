"""Small helpers shared by the binary file formats."""

from __future__ import annotations

import os
import struct


class FormatError(ValueError):
    """Malformed binary file; the message carries the failing byte offset."""


class Reader:
    """Sequential reader that reports the offset of any truncation."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.label = label
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.label}: truncated file, needed {n} bytes for {what} at "
                f"offset {self.pos} but only {len(self.blob) - self.pos} remain"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def expect_end(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(
                f"{self.label}: {len(self.blob) - self.pos} unexpected trailing bytes "
                f"at offset {self.pos}"
            )


def atomic_write(path, blob: bytes) -> None:
    """Write to a sibling temp file, then promote with an atomic rename."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
