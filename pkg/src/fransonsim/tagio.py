"""FTAG1 binary time-tag format.

Layout: a 16-byte header (8-byte magic ``FTAG1\\0\\0\\0`` followed by an
unsigned 64-bit little-endian record count), then fixed 16-byte records:
1 byte channel, 7 bytes padding, unsigned 64-bit little-endian time in
picoseconds. Records must be non-decreasing in time; the fixed stride
makes the format trivially memory-mappable.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import TagFormatError
from .optics import TAG_DTYPE

MAGIC = b"FTAG1\x00\x00\x00"
HEADER_SIZE = 16
RECORD_SIZE = 16

_FILE_DTYPE = np.dtype({
    "names": ["channel", "time"],
    "formats": ["u1", "<u8"],
    "offsets": [0, 8],
    "itemsize": RECORD_SIZE,
})


def write_time_tags(path, tags: np.ndarray) -> None:
    """Write a sorted tag stream; the file appears atomically (tmp + rename)."""
    times = np.asarray(tags["time"], dtype=np.int64)
    if times.size and np.any(np.diff(times) < 0):
        first = int(np.nonzero(np.diff(times) < 0)[0][0]) + 1
        raise TagFormatError("refusing to write unsorted stream",
                             HEADER_SIZE + first * RECORD_SIZE)
    if times.size and times.min() < 0:
        raise TagFormatError("negative timestamp", HEADER_SIZE)

    records = np.zeros(tags.size, dtype=_FILE_DTYPE)
    records["channel"] = tags["channel"]
    records["time"] = times.astype(np.uint64)

    path = Path(path)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(np.uint64(tags.size).tobytes())
            records.tofile(fh)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def read_time_tags(path) -> np.ndarray:
    """Read an FTAG1 file back into a tag array (channel u1, time int64).

    Raises TagFormatError with the byte offset of the problem for a bad
    magic, a truncated body, a header/body record-count mismatch, or an
    unsorted stream.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE or raw[:8] != MAGIC:
        raise TagFormatError("bad magic", 0)
    count = int(np.frombuffer(raw, dtype="<u8", count=1, offset=8)[0])
    body = len(raw) - HEADER_SIZE
    if body % RECORD_SIZE != 0:
        raise TagFormatError("truncated record", HEADER_SIZE + body - body % RECORD_SIZE)
    n_records = body // RECORD_SIZE
    if n_records != count:
        raise TagFormatError(
            f"header promises {count} records but body holds {n_records}",
            HEADER_SIZE + min(count, n_records) * RECORD_SIZE)

    records = np.frombuffer(raw, dtype=_FILE_DTYPE, count=n_records, offset=HEADER_SIZE)
    times = records["time"]
    if times.size and times.max() > np.iinfo(np.int64).max:
        bad = int(np.argmax(times))
        raise TagFormatError("timestamp overflows signed 64-bit range",
                             HEADER_SIZE + bad * RECORD_SIZE)
    diffs = np.diff(times.astype(np.int64))
    if diffs.size and np.any(diffs < 0):
        bad = int(np.nonzero(diffs < 0)[0][0]) + 1
        raise TagFormatError("unsorted stream", HEADER_SIZE + bad * RECORD_SIZE)

    tags = np.empty(n_records, dtype=TAG_DTYPE)
    tags["channel"] = records["channel"]
    tags["time"] = times.astype(np.int64)
    return tags
