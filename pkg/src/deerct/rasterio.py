"""Raster and checkpoint file formats.

Raster: ``DEERRAS1\\n``, one JSON header line (dtype, shape, free-form
metadata), then the float32 little-endian payload.

Checkpoint: ``DEERCKP1\\n``, one JSON header line describing every stored
array (name, shape, dtype, byte offset) plus training metadata, then the
concatenated raw arrays.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

RASTER_MAGIC = b"DEERRAS1\n"
CKPT_MAGIC = b"DEERCKP1\n"


class CorruptFileError(ValueError):
    pass


def save_raster(path, data: np.ndarray, **meta) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    header = {"dtype": "<f4", "shape": list(arr.shape), "meta": meta}
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(arr.tobytes())


def _read_header(blob: bytes, magic: bytes, path) -> tuple[dict, int]:
    if not blob.startswith(magic):
        raise CorruptFileError(f"{path}: bad magic {blob[:len(magic)]!r}, expected {magic!r}")
    end = blob.find(b"\n", len(magic))
    if end < 0:
        raise CorruptFileError(f"{path}: unterminated header")
    try:
        header = json.loads(blob[len(magic):end])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: unreadable header ({exc})") from None
    return header, end + 1


def load_raster(path) -> tuple[np.ndarray, dict]:
    blob = Path(path).read_bytes()
    header, start = _read_header(blob, RASTER_MAGIC, path)
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * 4
    if len(blob) - start != expected:
        raise CorruptFileError(f"{path}: payload is {len(blob) - start} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=start).reshape(shape).astype(np.float32)
    return data, header.get("meta", {})


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt.str, "offset": offset,
                        "nbytes": len(raw)})
        offset += len(raw)
        blobs.append(raw)
    header = dict(meta, tensors=entries, payload_bytes=offset)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(header).encode() + b"\n")
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    header, start = _read_header(blob, CKPT_MAGIC, path)
    if len(blob) - start != header.get("payload_bytes", -1):
        raise CorruptFileError(f"{path}: payload is {len(blob) - start} bytes, "
                               f"header implies {header.get('payload_bytes')}")
    arrays = {}
    for e in header.pop("tensors"):
        a = np.frombuffer(blob, dtype=e["dtype"], count=int(np.prod(e["shape"])),
                          offset=start + e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    return arrays, header


def save_png(path, img: np.ndarray, window: tuple[float, float] = (0.0, 1.0)) -> None:
    from PIL import Image as PILImage

    lo, hi = window
    if hi <= lo:
        raise ValueError(f"display window must be increasing, got {window}")
    scaled = np.clip((np.asarray(img, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    PILImage.fromarray((scaled * 255 + 0.5).astype(np.uint8)).save(path)
