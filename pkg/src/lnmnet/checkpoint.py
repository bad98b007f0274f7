"""Binary array container and model checkpoints.

Layout: magic "LNM1", u32 little-endian version, u64 little-endian manifest
length, UTF-8 JSON manifest, then each array's raw little-endian float64
payload in manifest order (names sorted).  The manifest records array shapes
plus a free-form JSON meta object, so the same container doubles as the
pre-framed event dataset format.  Writes are atomic (temp file + rename) and
round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import sys
import tempfile
from array import array

from lnmnet.errors import DataError
from lnmnet.tensor import Tensor

MAGIC = b"LNM1"
VERSION = 1

__all__ = [
    "MAGIC",
    "VERSION",
    "write_container",
    "read_container",
    "save_checkpoint",
    "load_checkpoint",
]


def _to_le_bytes(data: array) -> bytes:
    if sys.byteorder == "big":
        data = array("d", data)
        data.byteswap()
    return data.tobytes()


def _from_le_bytes(buf: bytes) -> array:
    data = array("d")
    data.frombytes(buf)
    if sys.byteorder == "big":
        data.byteswap()
    return data


def write_container(path, arrays: dict, meta: dict) -> None:
    """Atomically write named float64 arrays plus a JSON meta object."""
    names = sorted(arrays)
    manifest = {
        "arrays": {name: list(arrays[name].shape) for name in names},
        "meta": meta,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-container-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(manifest_bytes)))
            fh.write(manifest_bytes)
            for name in names:
                fh.write(_to_le_bytes(arrays[name].data))
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp_path, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _read_exact(fh, count, offset, what, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(f"{path}: truncated container while reading {what}", offset=offset)
    return buf


def read_container(path):
    """Read a container; returns ({name: Tensor}, meta)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, 0, "magic", path)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        (version,) = struct.unpack("<I", _read_exact(fh, 4, 4, "version", path))
        if version != VERSION:
            raise DataError(
                f"{path}: unsupported container version {version}", offset=4
            )
        (manifest_len,) = struct.unpack(
            "<Q", _read_exact(fh, 8, 8, "manifest length", path)
        )
        offset = 16
        manifest_bytes = _read_exact(fh, manifest_len, offset, "manifest", path)
        offset += manifest_len
        try:
            manifest = json.loads(manifest_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise DataError(f"{path}: corrupt manifest: {err}", offset=16) from err
        if (
            not isinstance(manifest, dict)
            or "arrays" not in manifest
            or "meta" not in manifest
        ):
            raise DataError(f"{path}: manifest missing 'arrays' or 'meta'", offset=16)
        arrays = {}
        for name in sorted(manifest["arrays"]):
            shape = tuple(manifest["arrays"][name])
            count = 1
            for dim in shape:
                count *= dim
            buf = _read_exact(fh, count * 8, offset, f"array {name!r}", path)
            offset += count * 8
            arrays[name] = Tensor(shape, _from_le_bytes(buf))
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after arrays", offset=offset)
    return arrays, manifest["meta"]


def save_checkpoint(path, net, epoch: int, rng_state: int, extra: dict | None = None) -> None:
    """Write every named network parameter plus training position."""
    arrays = {name: p for name, p in net.named_parameters()}
    meta = {"format": "checkpoint", "epoch": epoch, "rng_state": rng_state}
    if extra:
        meta.update(extra)
    write_container(path, arrays, meta)


def load_checkpoint(path, net):
    """Copy checkpoint arrays into net's parameters; returns the meta dict."""
    arrays, meta = read_container(path)
    expected = {name: p for name, p in net.named_parameters()}
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        surplus = sorted(set(arrays) - set(expected))
        raise DataError(
            f"{path}: parameter names do not match network"
            f" (missing {missing}, unexpected {surplus})"
        )
    for name, param in expected.items():
        if arrays[name].shape != param.shape:
            raise DataError(
                f"{path}: shape {arrays[name].shape} for {name!r}, "
                f"network expects {param.shape}"
            )
        param.data[:] = arrays[name].data
    return meta
