"""On-disk formats.

* Tensors: ``<name>.bin`` holds raw little-endian float64 values in C order,
  ``<name>.json`` holds ``{"shape": [...], "dtype": "<f8"}``.
* Parameter files: a single binary file starting with an 8-byte
  little-endian header length, a UTF-8 JSON header (network descriptor,
  seed, parameter count) and then the flat float64 parameter vector.
* Every file is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .toy import NetSpec, ToyNet

DTYPE = "<f8"


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _tensor_paths(path):
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save_tensor(path, array):
    """Write ``array`` as ``<path>.bin`` plus ``<path>.json``; returns the two paths."""
    arr = np.ascontiguousarray(array, dtype=DTYPE)
    bin_path, meta_path = _tensor_paths(path)
    atomic_write_bytes(bin_path, arr.tobytes())
    write_json(meta_path, {"shape": list(arr.shape), "dtype": DTYPE})
    return bin_path, meta_path


def load_tensor(path) -> np.ndarray:
    bin_path, meta_path = _tensor_paths(path)
    meta = read_json(meta_path)
    arr = np.frombuffer(bin_path.read_bytes(), dtype=meta["dtype"])
    return arr.reshape(meta["shape"]).astype(np.float64)


def save_params(path, net: ToyNet, seed=None, extra=None):
    header = {"spec": net.spec.to_dict(), "seed": seed, "n_params": int(net.params.size), "dtype": DTYPE}
    if extra:
        header.update(extra)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<Q", len(hbytes)) + hbytes + np.ascontiguousarray(net.params, dtype=DTYPE).tobytes()
    atomic_write_bytes(path, payload)


def load_params(path):
    """Returns ``(ToyNet, header)``."""
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    params = np.frombuffer(raw[8 + n:], dtype=header["dtype"]).astype(np.float64)
    if params.size != header["n_params"]:
        raise DimensionError(f"parameter file {path} holds {params.size} values, header says {header['n_params']}")
    spec = header["spec"]
    spec["hidden"] = tuple(spec["hidden"])
    return ToyNet(NetSpec(**spec), params=params), header
