from __future__ import annotations

import os

import numpy as np
import pytest

from helpers import synthetic_dataset
from swapsim.detector import TagStream
from swapsim.engine.tagio import (
    HEADER,
    RECORD,
    decode_qtag,
    encode_qtag,
    read_dataset,
    read_qtag,
    write_dataset,
    write_qtag,
)
from swapsim.errors import InvalidArgument


def _stream():
    return TagStream(3, np.array([5, 17, 17, 900], np.int64), np.array([0, 1, 0, 1], np.uint16))


def test_record_layout():
    assert HEADER.itemsize == 32 and RECORD.itemsize == 16
    data = encode_qtag(_stream(), 0, 1000)
    assert data[:4] == b"QTAG" and len(data) == 32 + 4 * 16


def test_roundtrip(tmp_path):
    p = tmp_path / "ch3.qtag"
    write_qtag(p, _stream(), 1, 1000)
    s, t0, t1 = read_qtag(p)
    assert s == _stream() and (t0, t1) == (1, 1000)
    mode = os.stat(p).st_mode & 0o777
    umask = os.umask(0)
    os.umask(umask)
    assert mode == 0o666 & ~umask


def test_blind_clears_flags():
    s, _, _ = decode_qtag(encode_qtag(_stream(), 0, 1000, blind=True))
    assert not s.flags.any() and np.array_equal(s.timestamps, _stream().timestamps)


def test_corrupt_files_rejected():
    good = encode_qtag(_stream(), 0, 1000)
    with pytest.raises(InvalidArgument, match="magic"):
        decode_qtag(b"XTAG" + good[4:])
    with pytest.raises(InvalidArgument):
        decode_qtag(good[:-3])
    with pytest.raises(InvalidArgument):
        decode_qtag(good[:10])
    swapped = bytearray(good)
    swapped[32:48], swapped[80:96] = good[80:96], good[32:48]
    with pytest.raises(InvalidArgument, match="sorted"):
        decode_qtag(bytes(swapped))
    with pytest.raises(InvalidArgument):
        encode_qtag(TagStream(1, np.array([-5], np.int64), np.zeros(1, np.uint16)), 0, 1)


def test_dataset_roundtrip(tmp_path):
    ds = synthetic_dataset(np.random.default_rng(0), n_max=500, span=10**6)
    paths = write_dataset(ds, tmp_path)
    assert {p.name for p in paths} >= {"dataset.json", "ch1.qtag", "ch6.qtag"}
    back = read_dataset(tmp_path)
    assert back == ds
    assert back.metadata == ds.metadata
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "missing")
