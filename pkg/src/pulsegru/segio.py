"""Segment file formats: binary ``.pwseg`` and CSV with a JSON sidecar.

``.pwseg`` layout (little-endian)::

    magic    4 bytes  b"PWSG"
    version  u16      1
    label    u8       0=NSR 1=AF 2=PAC/PVC
    id_len   u8       followed by id_len UTF-8 bytes of subject id
    fs       u16      50
    length   u32      1500
    ppg, acc_x, acc_y, acc_z   each `length` f32
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .signals import Segment

MAGIC = b"PWSG"
VERSION = 1


class SegmentFormatError(ValueError):
    pass


def encode_pwseg(seg: Segment) -> bytes:
    sid = seg.subject_id.encode("utf-8")
    if len(sid) > 255:
        raise SegmentFormatError("subject id longer than 255 bytes")
    n = seg.ppg.size
    head = MAGIC + struct.pack("<HBB", VERSION, int(seg.label), len(sid)) + sid
    head += struct.pack("<HI", seg.fs, n)
    body = np.concatenate([seg.ppg[None, :], seg.acc]).astype("<f4").tobytes()
    return head + body


def decode_pwseg(buf: bytes, segment_id: str = "") -> Segment:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise SegmentFormatError("bad magic")
    version, label, id_len = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION:
        raise SegmentFormatError(f"unsupported version {version}")
    off = 8
    sid = buf[off:off + id_len]
    if len(sid) != id_len:
        raise SegmentFormatError("truncated subject id")
    off += id_len
    if len(buf) < off + 6:
        raise SegmentFormatError("truncated header")
    fs, n = struct.unpack_from("<HI", buf, off)
    off += 6
    if len(buf) != off + 16 * n:
        raise SegmentFormatError(f"payload size {len(buf) - off} != {16 * n}")
    arr = np.frombuffer(buf, dtype="<f4", offset=off).reshape(4, n)
    try:
        return Segment(subject_id=sid.decode("utf-8"), label=label, ppg=arr[0],
                       acc=arr[1:], fs=fs, segment_id=segment_id)
    except ValueError as e:
        raise SegmentFormatError(str(e)) from e


def write_pwseg(seg: Segment, path: str | Path) -> None:
    Path(path).write_bytes(encode_pwseg(seg))


def read_pwseg(path: str | Path) -> Segment:
    path = Path(path)
    return decode_pwseg(path.read_bytes(), segment_id=path.stem)


def _f32_text(v) -> str:
    # shortest decimal that round-trips the f32 value
    return repr(float(np.float32(v)))


def write_csv(seg: Segment, path: str | Path) -> None:
    """CSV ``t,ppg,acc_x,acc_y,acc_z`` plus ``<stem>.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ppg", "acc_x", "acc_y", "acc_z"])
        for i in range(seg.ppg.size):
            w.writerow([repr(i / seg.fs), _f32_text(seg.ppg[i]),
                        *(_f32_text(seg.acc[k, i]) for k in range(3))])
    path.with_suffix(".json").write_text(
        json.dumps({"subject_id": seg.subject_id, "label": int(seg.label)}))


def read_csv(path: str | Path) -> Segment:
    path = Path(path)
    side = path.with_suffix(".json")
    try:
        meta = json.loads(side.read_text())
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as e:
        raise SegmentFormatError(f"{path}: {e}") from e
    if not rows or rows[0] != ["t", "ppg", "acc_x", "acc_y", "acc_z"]:
        raise SegmentFormatError(f"{path}: unexpected header")
    try:
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
        t = np.array([float(r[0]) for r in rows[1:]])
    except (ValueError, IndexError) as e:
        raise SegmentFormatError(f"{path}: {e}") from e
    if data.ndim != 2 or data.shape[1] != 4:
        raise SegmentFormatError(f"{path}: expected 4 signal columns")
    fs = int(round(1.0 / (t[1] - t[0]))) if t.size > 1 else 50
    data = data.astype(np.float32).astype(np.float64)
    try:
        return Segment(subject_id=str(meta["subject_id"]), label=int(meta["label"]),
                       ppg=data[:, 0], acc=data[:, 1:].T, fs=fs, segment_id=path.stem)
    except (KeyError, ValueError) as e:
        raise SegmentFormatError(f"{path}: {e}") from e


def read_segment(path: str | Path) -> Segment:
    path = Path(path)
    if path.suffix == ".pwseg":
        return read_pwseg(path)
    if path.suffix == ".csv":
        return read_csv(path)
    raise SegmentFormatError(f"unknown segment format: {path.suffix}")


def list_segment_files(root: str | Path) -> list[Path]:
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*") if p.suffix in (".pwseg", ".csv"))
