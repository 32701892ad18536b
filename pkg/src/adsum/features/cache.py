"""On-disk feature cache, one file per (video_id, backend_id, stride, hws).

File layout: 8-byte magic ``ADSUMFM1``, little-endian uint32 header length,
a UTF-8 JSON header (shape, dtype, backend_id, stream, clips, flags), then
the matrix as row-major little-endian float32.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote

import numpy as np

from . import FeatureMap

log = logging.getLogger(__name__)

MAGIC = b"ADSUMFM1"


@dataclass(frozen=True)
class CacheKey:
    video_id: str
    backend_id: str
    stride: int
    hws: int

    def filename(self) -> str:
        # percent-encoding every part keeps the "+" separator unambiguous
        parts = [quote(self.video_id, safe=""), quote(self.backend_id, safe=""),
                 f"s{self.stride}", f"h{self.hws}"]
        return "+".join(parts) + ".fmap"


def encode(fm: FeatureMap, key: CacheKey) -> bytes:
    values = np.ascontiguousarray(fm.values, dtype="<f4")
    header = {
        "backend_id": fm.backend_id,
        "clips": fm.clips,
        "dtype": "float32",
        "flags": fm.flags,
        "key": [key.video_id, key.backend_id, key.stride, key.hws],
        "shape": list(values.shape),
        "stream": fm.stream,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(hdr)) + hdr + values.tobytes()


def decode(blob: bytes) -> tuple[FeatureMap, dict]:
    if blob[:8] != MAGIC:
        raise ValueError("bad magic")
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + n].decode())
    rows, cols = header["shape"]
    data = blob[12 + n:]
    if len(data) != rows * cols * 4:
        raise ValueError(f"payload has {len(data)} bytes, expected {rows * cols * 4}")
    values = np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float32)
    fm = FeatureMap(header["stream"], values, header["backend_id"],
                    clips=[list(c) for c in header.get("clips", [])], flags=header.get("flags", {}))
    return fm, header


@dataclass
class FeatureCache:
    root: Path
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)

    def path(self, key: CacheKey) -> Path:
        return self.root / key.filename()

    def put(self, key: CacheKey, fm: FeatureMap) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        target = self.path(key)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".fmap")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(encode(fm, key))
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    def get(self, key: CacheKey) -> FeatureMap | None:
        """Cached map or None; a corrupt entry counts as a miss and is logged."""
        target = self.path(key)
        if not target.exists():
            return None
        try:
            fm, header = decode(target.read_bytes())
            if header["key"] != [key.video_id, key.backend_id, key.stride, key.hws]:
                raise ValueError(f"entry is for key {header['key']}")
        except (ValueError, KeyError, struct.error, UnicodeDecodeError) as exc:
            msg = f"corrupt cache entry {target.name}: {exc}"
            log.warning(msg)
            self.warnings.append(msg)
            return None
        return fm
