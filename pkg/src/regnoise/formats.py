"""CSV and binary column files, config loading, checksums."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import yaml

MAGIC = b"RGNCOL\x00\x01"
V_PATH, V_TENSOR, V_JET = 1, 2, 3


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\r\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) if isinstance(v, (float, np.floating, int, np.integer)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        data = np.array([[float(v) for v in row] for row in rd])
    return header, data


def write_path_csv(path, sp):
    header = ["t"] + [f"w_{i + 1}" for i in range(sp.d)]
    write_csv(path, header, np.column_stack([sp.times, sp.values]))


def read_path_csv(path):
    from .gaussmodels import SamplePath

    header, data = read_csv(path)
    if header[0] != "t":
        raise ValueError("path CSV must start with a 't' column")
    return SamplePath(data[:, 0], data[:, 1:])


def _header(version, d, n):
    return MAGIC + struct.pack("<BII", version, d, n)


def _read_header(buf):
    if buf[:8] != MAGIC:
        raise ValueError("not a column file (bad magic)")
    version, d, n = struct.unpack_from("<BII", buf, 8)
    return version, d, n, 8 + struct.calcsize("<BII")


def write_path_bin(path, sp):
    cols = np.column_stack([sp.times, sp.values]).T.astype("<f8")
    with open(path, "wb") as f:
        f.write(_header(V_PATH, sp.d, sp.n))
        f.write(cols.tobytes())


def read_path_bin(path):
    from .gaussmodels import SamplePath

    buf = Path(path).read_bytes()
    version, d, n, off = _read_header(buf)
    if version != V_PATH:
        raise ValueError(f"expected a path file, found version {version}")
    cols = np.frombuffer(buf, dtype="<f8", offset=off).reshape(d + 1, n + 1)
    return SamplePath(cols[0].copy(), cols[1:].T.copy())


def write_tensor_bin(path, arr, d=1):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_header(V_TENSOR, d, arr.shape[0] - 1 if arr.ndim else 0))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes())


def read_tensor_bin(path):
    buf = Path(path).read_bytes()
    version, d, n, off = _read_header(buf)
    if version != V_TENSOR:
        raise ValueError(f"expected a tensor file, found version {version}")
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).copy()


def write_jet_bin(path, jet):
    """Columns t, then z^0 .. z^k flattened per level (d^{l+1} columns each)."""
    d = jet.levels[0].shape[1]
    n = len(jet.times) - 1
    cols = [jet.times[None, :]] + [lv.reshape(n + 1, -1).T for lv in jet.levels]
    data = np.concatenate(cols).astype("<f8")
    with open(path, "wb") as f:
        f.write(_header(V_JET, d, n))
        f.write(struct.pack("<I", jet.order))
        f.write(data.tobytes())


def read_jet_bin(path):
    buf = Path(path).read_bytes()
    version, d, n, off = _read_header(buf)
    if version != V_JET:
        raise ValueError(f"expected a jet file, found version {version}")
    (k,) = struct.unpack_from("<I", buf, off)
    off += 4
    ncol = 1 + sum(d ** (l + 1) for l in range(k + 1))
    data = np.frombuffer(buf, dtype="<f8", offset=off).reshape(ncol, n + 1)
    times = data[0].copy()
    levels, c = [], 1
    for l in range(k + 1):
        w = d ** (l + 1)
        levels.append(data[c:c + w].T.reshape((n + 1, d) + (d,) * l).copy())
        c += w
    return times, levels


def load_config(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text) or {}


def set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ValueError(f"cannot set '{dotted}': '{k}' is not a mapping")
    cur[keys[-1]] = value
