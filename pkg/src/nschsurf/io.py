"""Raw field snapshots: 32-byte header then a row-major float64 payload.

Header layout, little-endian: magic "NSCH", u32 version (currently 1),
u32 nx, u32 ny, f64 lx, f64 ly.  One field per file; nx/ny are the
dimensions of the stored array, so staggered-face arrays carry their own
(nx+1, ny)-style shapes rather than the cell grid's.
"""

import struct

import numpy as np

__all__ = ["write_snapshot", "read_snapshot", "SNAPSHOT_MAGIC",
           "SNAPSHOT_VERSION", "SnapshotError"]

SNAPSHOT_MAGIC = b"NSCH"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


class SnapshotError(ValueError):
    """Unreadable or inconsistent snapshot file."""


def write_snapshot(path, array, lx, ly):
    arr = np.ascontiguousarray(array, dtype="<f8")
    if arr.ndim != 2:
        raise SnapshotError(f"snapshot stores one 2-d field, got shape "
                            f"{arr.shape}")
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
                          arr.shape[0], arr.shape[1], float(lx), float(ly))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_snapshot(path):
    """-> (array, lx, ly); raises SnapshotError on any malformation."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SnapshotError(f"{path}: truncated header")
        magic, version, nx, ny, lx, ly = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"{path}: bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"{path}: unsupported version {version}")
        payload = fh.read(8 * nx * ny + 1)
    if len(payload) != 8 * nx * ny:
        raise SnapshotError(f"{path}: payload size mismatch for "
                            f"{nx}x{ny} field")
    arr = np.frombuffer(payload, dtype="<f8").reshape(nx, ny).copy()
    return arr, lx, ly
