"""Binary tag files and the dataset directory layout.

A dataset directory holds one ``ch<N>.qtag`` file per channel plus a
``dataset.json`` sidecar with the channel map, dwell annotations and run
metadata.  QTAG files are little-endian: a 32-byte header (magic ``QTAG``,
u16 version, u16 header length, u64 t_start, u64 t_end, u64 reserved)
followed by 16-byte records (u64 timestamp, u16 channel, u16 flags,
u32 reserved = 0).
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from ..detector import TagStream
from ..errors import InvalidArgument
from .scenario import DwellAnnotation, TagDataset

MAGIC = b"QTAG"
VERSION = 1
HEADER = np.dtype([("magic", "S4"), ("version", "<u2"), ("header_len", "<u2"),
                   ("t_start", "<u8"), ("t_end", "<u8"), ("reserved", "<u8")])
RECORD = np.dtype([("timestamp", "<u8"), ("channel", "<u2"), ("flags", "<u2"), ("reserved", "<u4")])
SIDECAR = "dataset.json"
assert HEADER.itemsize == 32 and RECORD.itemsize == 16


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_qtag(stream: TagStream, t_start: int, t_end: int, blind: bool = False) -> bytes:
    ts = stream.timestamps
    if ts.size and ts[0] < 0:
        raise InvalidArgument("QTAG timestamps must be non-negative")
    header = np.zeros(1, HEADER)
    header[0] = (MAGIC, VERSION, HEADER.itemsize, max(int(t_start), 0), max(int(t_end), 0), 0)
    rec = np.zeros(ts.size, RECORD)
    rec["timestamp"] = ts
    rec["channel"] = stream.channel
    if not blind:
        rec["flags"] = stream.flags
    return header.tobytes() + rec.tobytes()


def decode_qtag(data: bytes) -> tuple[TagStream, int, int]:
    """Parse one QTAG file; returns (stream, t_start, t_end)."""
    if len(data) < HEADER.itemsize:
        raise InvalidArgument("truncated QTAG header")
    h = np.frombuffer(data, HEADER, count=1)[0]
    if bytes(h["magic"]) != MAGIC:
        raise InvalidArgument("not a QTAG file (bad magic)")
    if int(h["version"]) != VERSION:
        raise InvalidArgument(f"unsupported QTAG version {int(h['version'])}")
    hl = int(h["header_len"])
    if hl < HEADER.itemsize or (len(data) - hl) % RECORD.itemsize:
        raise InvalidArgument("QTAG body is not a whole number of records")
    rec = np.frombuffer(data, RECORD, offset=hl)
    channels = np.unique(rec["channel"])
    if channels.size > 1:
        raise InvalidArgument(f"QTAG file mixes channels {channels.tolist()}")
    ch = int(channels[0]) if channels.size else -1
    ts = rec["timestamp"].astype(np.int64)
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        raise InvalidArgument("QTAG timestamps are not sorted")
    return TagStream(ch, ts, rec["flags"].astype(np.uint16)), int(h["t_start"]), int(h["t_end"])


def write_qtag(path, stream: TagStream, t_start: int, t_end: int, blind: bool = False) -> None:
    atomic_write_bytes(Path(path), encode_qtag(stream, t_start, t_end, blind))


def read_qtag(path) -> tuple[TagStream, int, int]:
    return decode_qtag(Path(path).read_bytes())


def sidecar_document(dataset: TagDataset) -> dict:
    return {
        "format": "qtag-dataset",
        "version": VERSION,
        "channel_map": dataset.channel_map,
        "files": {str(ch): f"ch{ch}.qtag" for ch in sorted(dataset.streams)},
        "dwells": [d.to_json() for d in dataset.dwells],
        "metadata": dataset.metadata,
    }


def write_dataset(dataset: TagDataset, out_dir, blind: bool = False) -> list[Path]:
    """Write all channel files and the sidecar; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ch in sorted(dataset.streams):
        p = out / f"ch{ch}.qtag"
        write_qtag(p, dataset.streams[ch], dataset.t_start, dataset.t_end, blind)
        paths.append(p)
    p = out / SIDECAR
    atomic_write_text(p, json.dumps(sidecar_document(dataset), indent=1, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def read_dataset(data_dir) -> TagDataset:
    d = Path(data_dir)
    side = d / SIDECAR
    if not side.exists():
        raise FileNotFoundError(f"{side} not found")
    doc = json.loads(side.read_text())
    streams = {}
    for ch_s, name in doc["files"].items():
        ch = int(ch_s)
        stream, _, _ = read_qtag(d / name)
        streams[ch] = stream if stream.channel == ch else TagStream(ch, stream.timestamps, stream.flags)
    dwells = [DwellAnnotation.from_json(x) for x in doc["dwells"]]
    return TagDataset(streams, {k: int(v) for k, v in doc["channel_map"].items()}, dwells, doc["metadata"])
