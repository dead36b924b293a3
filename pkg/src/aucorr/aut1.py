"""AUT1 tensor files and checkpoint bundles.

Layout of one tensor: magic ``AUT1``, u8 rank, rank x u32 little-endian
dims, then prod(dims) little-endian f64 values in row-major order.

A bundle is a directory holding one ``<name>.aut`` per tensor plus a
``manifest.json`` listing names, shapes and free-form metadata.
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AUT1"


class FormatError(ValueError):
    pass


def dumps(array):
    a = np.asarray(array, dtype="<f8")  # tobytes() below is row-major for any layout
    if a.ndim > 255:
        raise FormatError(f"rank {a.ndim} does not fit in a u8")
    head = MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def loads(buf):
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}")
    rank = buf[4]
    dims = struct.unpack_from(f"<{rank}I", buf, 5)
    offset = 5 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != offset + 8 * count:
        raise FormatError(f"payload holds {len(buf) - offset} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(dims)


def save(path, array):
    Path(path).write_bytes(dumps(array))


def load(path):
    return loads(Path(path).read_bytes())


def _fname(name):
    return name.replace("/", "_") + ".aut"


def save_bundle(directory, tensors, meta=None):
    """Write ``tensors`` (name -> array) and ``meta`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        save(directory / _fname(name), arr)
        entries.append({"name": name, "file": _fname(name), "shape": list(arr.shape)})
    manifest = {"format": "AUT1", "tensors": entries, "meta": meta or {}}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_bundle(directory):
    """Return ``(tensors, meta)`` from a bundle directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    tensors = {}
    for entry in manifest["tensors"]:
        arr = load(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{entry['name']}: shape {arr.shape} != manifest {entry['shape']}")
        tensors[entry["name"]] = arr
    return tensors, manifest.get("meta", {})
