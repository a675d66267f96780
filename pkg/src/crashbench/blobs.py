"""Content-addressed blob storage for reproducers, configs and patch bodies.

Blobs live under ``<root>/blobs/<sha256 hex>``; records keep the digest
string (``sha256:<hex>``) instead of the body, which keeps record files
small and diffable.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

PREFIX = "sha256:"


def digest_of(data: bytes) -> str:
    return PREFIX + hashlib.sha256(data).hexdigest()


def is_ref(value: str) -> bool:
    return isinstance(value, str) and value.startswith(PREFIX)


class BlobStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    def _path(self, ref: str) -> Path:
        if not is_ref(ref):
            raise ValueError(f"not a blob reference: {ref!r}")
        return self.root / ref[len(PREFIX):]

    def put(self, data: bytes | str) -> str:
        if isinstance(data, str):
            data = data.encode("utf-8")
        ref = digest_of(data)
        path = self._path(ref)
        if not path.exists():
            self.root.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return ref

    def get(self, ref: str) -> bytes:
        path = self._path(ref)
        if not path.exists():
            raise KeyError(f"blob not found: {ref}")
        data = path.read_bytes()
        if digest_of(data) != ref:
            raise ValueError(f"blob corrupted on disk: {ref}")
        return data

    def get_text(self, ref: str) -> str:
        return self.get(ref).decode("utf-8")

    def has(self, ref: str) -> bool:
        return self._path(ref).exists()
