"""Shared object store: immutable-by-convention binary blobs under string keys.

Two observationally equivalent backends: an in-memory map and an on-disk
directory with one percent-encoded file per key. Operations are atomic per
key; cross-key ordering is unspecified.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
import urllib.parse
from pathlib import Path

from .errors import InvalidKeyError, NotFoundError, StoreIOError
from .protocol import valid_store_key


def _check_key(key: str) -> str:
    if not valid_store_key(key):
        raise InvalidKeyError(f"invalid store key {key!r}")
    return key


class _KeyLocks:
    """Per-key mutex registry. The registry lock is held only to look up
    or create a key's lock, never across an operation."""

    def __init__(self):
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock


class ObjectStore:
    """Interface shared by both backends."""

    def put(self, key: str, payload: bytes) -> None:
        raise NotImplementedError

    def get(self, key: str) -> bytes:
        raise NotImplementedError

    def delete(self, key: str) -> None:
        raise NotImplementedError

    def exists(self, key: str) -> bool:
        raise NotImplementedError

    def size_of(self, key: str) -> int:
        raise NotImplementedError

    def keys(self) -> list[str]:
        raise NotImplementedError


class MemoryStore(ObjectStore):
    def __init__(self):
        self._objects: dict[str, bytes] = {}
        self._locks = _KeyLocks()

    def put(self, key: str, payload: bytes) -> None:
        _check_key(key)
        data = bytes(payload)
        with self._locks.get(key):
            self._objects[key] = data

    def get(self, key: str) -> bytes:
        _check_key(key)
        with self._locks.get(key):
            try:
                return self._objects[key]
            except KeyError:
                raise NotFoundError(f"no object under key {key!r}") from None

    def delete(self, key: str) -> None:
        _check_key(key)
        with self._locks.get(key):
            self._objects.pop(key, None)

    def exists(self, key: str) -> bool:
        _check_key(key)
        with self._locks.get(key):
            return key in self._objects

    def size_of(self, key: str) -> int:
        return len(self.get(key))

    def keys(self) -> list[str]:
        return sorted(self._objects)


# Longest encoded filename written as-is; encoding can triple a key's
# length and filesystems commonly cap names at 255 bytes.
_MAX_NAME = 240


class DirStore(ObjectStore):
    """One file per key under ``root``; the key is percent-encoded into the
    filename (including ``/``), so the layout is flat. Puts write to a temp
    file and rename so readers never observe torn payloads.

    Keys whose encoded form exceeds the filesystem name limit spill into a
    ``~<sha256>`` file plus a ``.key`` sidecar naming the original key;
    percent-encoding never produces ``~``, so the prefix cannot collide.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks = _KeyLocks()

    def _path(self, key: str) -> Path:
        name = urllib.parse.quote(key, safe="")
        if len(name) <= _MAX_NAME:
            return self.root / name
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        return self.root / f"~{digest}"

    def _write_atomic(self, target: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(prefix=".put-", dir=self.root)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def put(self, key: str, payload: bytes) -> None:
        _check_key(key)
        data = bytes(payload)
        path = self._path(key)
        with self._locks.get(key):
            try:
                if path.name.startswith("~"):
                    # Sidecar first, so any listed payload has its key.
                    self._write_atomic(path.with_name(path.name + ".key"),
                                       key.encode("utf-8"))
                self._write_atomic(path, data)
            except OSError as exc:
                raise StoreIOError(f"put {key!r} failed: {exc}") from exc

    def get(self, key: str) -> bytes:
        _check_key(key)
        with self._locks.get(key):
            try:
                return self._path(key).read_bytes()
            except FileNotFoundError:
                raise NotFoundError(f"no object under key {key!r}") from None
            except OSError as exc:
                raise StoreIOError(f"get {key!r} failed: {exc}") from exc

    def delete(self, key: str) -> None:
        _check_key(key)
        path = self._path(key)
        with self._locks.get(key):
            try:
                os.unlink(path)
                if path.name.startswith("~"):
                    os.unlink(path.with_name(path.name + ".key"))
            except FileNotFoundError:
                pass
            except OSError as exc:
                raise StoreIOError(f"delete {key!r} failed: {exc}") from exc

    def exists(self, key: str) -> bool:
        _check_key(key)
        with self._locks.get(key):
            return self._path(key).exists()

    def size_of(self, key: str) -> int:
        _check_key(key)
        with self._locks.get(key):
            try:
                return self._path(key).stat().st_size
            except FileNotFoundError:
                raise NotFoundError(f"no object under key {key!r}") from None

    def keys(self) -> list[str]:
        out = []
        for name in os.listdir(self.root):
            if name.startswith(".put-") or name.endswith(".key"):
                continue
            if name.startswith("~"):
                sidecar = self.root / (name + ".key")
                out.append(sidecar.read_bytes().decode("utf-8"))
            else:
                out.append(urllib.parse.unquote(name))
        return sorted(out)


def open_store(spec: str) -> ObjectStore:
    """Build a store from a CLI spec: ``mem`` or ``dir:<path>``."""
    if spec == "mem":
        return MemoryStore()
    if spec.startswith("dir:"):
        path = spec[len("dir:"):]
        if not path:
            raise ValueError("dir store spec needs a path: dir:<path>")
        return DirStore(path)
    raise ValueError(f"unknown store spec {spec!r} (expected mem or dir:<path>)")
