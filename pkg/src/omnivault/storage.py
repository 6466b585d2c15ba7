"""Untrusted cloud storage abstraction.

A :class:`StorageChannel` is an object store plus a rendezvous mechanism
for protocol messages (one object per message under ``messages/``) and
capability-style public links. It offers no confidentiality or integrity:
an :class:`Interceptor` can observe, rewrite, drop or inject every object.

Two backends: :class:`MemoryStorage` for simulation and tests, and
:class:`LocalDirStorage`, which mirrors object keys as files under a root
directory and is what the CLI uses.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import tempfile
import threading
import time
import uuid as uuidlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Union

from . import crypto_core
from .errors import InvalidKey, InvalidLink, MalformedMessage, NotFound, TimedOut

MESSAGES_PREFIX = "messages/"
PEERS_PREFIX = "peers/"
RESERVED_TOP = ("messages", "peers", ".omnivault")
POLL_INTERVAL = 0.05
LINK_TOKEN_SIZE = 16

_INTERNAL_DIR = ".omnivault"

FieldValue = Union[int, bytes, str]

# Payload encodings by field name. Big integers travel as lowercase hex,
# a few fields are plain text, everything else is base64 bytes.
INT_FIELDS = frozenset({"alpha", "beta"})
TEXT_FIELDS = frozenset({"kind", "link"})


def normalize_key(key: str) -> str:
    if not isinstance(key, str) or not key:
        raise InvalidKey("object key must be a non-empty string")
    if "\\" in key or "\x00" in key:
        raise InvalidKey(f"illegal character in key {key!r}")
    parts = [p for p in key.strip("/").split("/")]
    if not parts or any(p in ("", ".", "..") for p in parts):
        raise InvalidKey(f"key {key!r} is not normalized")
    if parts[0] == _INTERNAL_DIR:
        raise InvalidKey(f"key {key!r} is in the backend's private area")
    return "/".join(parts)


def new_uuid() -> str:
    return str(uuidlib.UUID(bytes=crypto_core.random_bytes(16), version=4))


def _encode_field(name: str, value: FieldValue):
    if name in INT_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise MalformedMessage(f"field {name} must be a non-negative integer")
        return format(value, "x")
    if name in TEXT_FIELDS:
        if not isinstance(value, str):
            raise MalformedMessage(f"field {name} must be text")
        return value
    if not isinstance(value, (bytes, bytearray)):
        raise MalformedMessage(f"field {name} must be bytes")
    return base64.b64encode(bytes(value)).decode("ascii")


def _decode_field(name: str, value) -> FieldValue:
    if not isinstance(value, str):
        raise MalformedMessage(f"field {name} is not a string")
    if name in INT_FIELDS:
        if not value or value != value.lower() or value.startswith(("-", "+")):
            raise MalformedMessage(f"field {name} is not lowercase hex")
        try:
            return int(value, 16)
        except ValueError:
            raise MalformedMessage(f"field {name} is not hex") from None
    if name in TEXT_FIELDS:
        return value
    try:
        return base64.b64decode(value.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError):
        raise MalformedMessage(f"field {name} is not base64") from None


def encode_payload(payload: Mapping[str, FieldValue]) -> dict:
    return {name: _encode_field(name, value) for name, value in payload.items()}


def decode_payload(obj) -> dict[str, FieldValue]:
    if not isinstance(obj, dict):
        raise MalformedMessage("payload must be an object")
    return {name: _decode_field(name, value) for name, value in obj.items()}


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class ProtocolMessage:
    msg_type: str
    payload: Mapping[str, FieldValue] = field(default_factory=dict)
    uuid: str = field(default_factory=new_uuid)
    reply_uuid: str | None = None
    target_device_id: bytes | None = None

    @property
    def object_key(self) -> str:
        # Initial messages are addressed: the directory names the device that should answer.
        if self.target_device_id is not None:
            return f"{MESSAGES_PREFIX}{self.target_device_id.hex()}/{self.uuid}"
        return MESSAGES_PREFIX + self.uuid

    def field(self, name: str, kind: type):
        try:
            value = self.payload[name]
        except KeyError:
            raise MalformedMessage(f"{self.msg_type} message lacks field {name}") from None
        if not isinstance(value, kind):
            raise MalformedMessage(f"field {name} has the wrong type")
        return value

    def to_bytes(self) -> bytes:
        return canonical_json(
            {
                "uuid": self.uuid,
                "type": self.msg_type,
                "reply": self.reply_uuid,
                "target": self.target_device_id.hex() if self.target_device_id is not None else None,
                "payload": encode_payload(self.payload),
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProtocolMessage":
        try:
            obj = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedMessage(f"message is not JSON: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != {"uuid", "type", "reply", "target", "payload"}:
            raise MalformedMessage("message has the wrong set of fields")
        try:
            msg_uuid = str(uuidlib.UUID(obj["uuid"]))
            reply = None if obj["reply"] is None else str(uuidlib.UUID(obj["reply"]))
            target = None if obj["target"] is None else bytes.fromhex(obj["target"])
        except (TypeError, ValueError, AttributeError) as exc:
            raise MalformedMessage(f"bad message header: {exc}") from None
        if not isinstance(obj["type"], str):
            raise MalformedMessage("message type must be a string")
        return cls(
            msg_type=obj["type"],
            payload=decode_payload(obj["payload"]),
            uuid=msg_uuid,
            reply_uuid=reply,
            target_device_id=target,
        )


@dataclass(frozen=True)
class PublicLink:
    token: bytes
    location: str = ""

    def to_text(self) -> str:
        text = "olink:" + base64.urlsafe_b64encode(self.token).decode("ascii").rstrip("=")
        return f"{text}|{self.location}" if self.location else text

    @classmethod
    def from_text(cls, text: str) -> "PublicLink":
        head, _, location = text.partition("|")
        if not head.startswith("olink:"):
            raise InvalidLink("not a public link")
        raw = head[len("olink:"):]
        try:
            token = base64.urlsafe_b64decode(raw + "=" * (-len(raw) % 4))
        except (binascii.Error, ValueError):
            raise InvalidLink("link token is not base64") from None
        if len(token) != LINK_TOKEN_SIZE:
            raise InvalidLink("link token has the wrong length")
        return cls(token, location)


class Interceptor:
    """Interposition hook on a channel. The default passes everything through.

    ``on_put`` returns the bytes to actually store, or ``None`` to drop the
    write. Injection goes through :meth:`StorageChannel.raw_put`, which
    bypasses the hook.
    """

    def on_put(self, channel: "StorageChannel", key: str, data: bytes) -> bytes | None:
        return data

    def on_get(self, channel: "StorageChannel", key: str, data: bytes) -> bytes:
        return data

    def on_delete(self, channel: "StorageChannel", key: str) -> bool:
        return True


class StorageChannel:
    """Backend-independent operations. Subclasses implement the ``_`` primitives."""

    location = ""

    def __init__(self, *, latency: float = 0.0, interceptor: Interceptor | None = None):
        self.latency = latency
        self.interceptor = interceptor or Interceptor()

    # backend primitives
    def _read(self, key: str) -> bytes:
        raise NotImplementedError

    def _write(self, key: str, data: bytes) -> None:
        raise NotImplementedError

    def _remove(self, key: str) -> None:
        raise NotImplementedError

    def _keys(self) -> Iterable[str]:
        raise NotImplementedError

    def _link_target(self, token: bytes) -> str | None:
        raise NotImplementedError

    def _store_link(self, token: bytes, key: str) -> None:
        raise NotImplementedError

    def _wait(self, timeout: float) -> None:
        time.sleep(min(timeout, POLL_INTERVAL))

    def _delay(self) -> None:
        if self.latency:
            time.sleep(self.latency)

    # raw access, bypassing the interceptor
    def raw_put(self, key: str, data: bytes) -> None:
        self._write(normalize_key(key), bytes(data))

    def raw_get(self, key: str) -> bytes:
        return self._read(normalize_key(key))

    # object operations
    def put(self, key: str, data: bytes) -> None:
        key = normalize_key(key)
        self._delay()
        stored = self.interceptor.on_put(self, key, bytes(data))
        if stored is not None:
            self._write(key, stored)

    def get(self, key: str) -> bytes:
        key = normalize_key(key)
        self._delay()
        return self.interceptor.on_get(self, key, self._read(key))

    def exists(self, key: str) -> bool:
        key = normalize_key(key)
        self._delay()
        try:
            self._read(key)
        except NotFound:
            return False
        return True

    def delete(self, key: str) -> None:
        key = normalize_key(key)
        self._delay()
        self._read(key)
        if self.interceptor.on_delete(self, key):
            self._remove(key)

    def list(self, prefix: str = "") -> list[str]:
        self._delay()
        if prefix:
            prefix = normalize_key(prefix) + "/"
        return sorted(k for k in self._keys() if k.startswith(prefix))

    # protocol messages
    def send_message(self, msg: ProtocolMessage) -> None:
        self.put(msg.object_key, msg.to_bytes())

    def _take(self, key: str) -> ProtocolMessage:
        msg = ProtocolMessage.from_bytes(self.get(key))
        try:
            self.delete(key)
        except NotFound:
            pass
        return msg

    def await_message(self, uuid: str, timeout: float) -> ProtocolMessage:
        key = normalize_key(MESSAGES_PREFIX + uuid)
        deadline = time.monotonic() + timeout
        while True:
            if self.exists(key):
                return self._take(key)
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimedOut(f"no message {uuid} within {timeout:g}s")
            self._wait(remaining)

    def await_addressed(self, device_id: bytes, timeout: float) -> ProtocolMessage:
        """Take the oldest initial message addressed to ``device_id``."""
        prefix = f"{MESSAGES_PREFIX}{device_id.hex()}/"
        deadline = time.monotonic() + timeout
        while True:
            pending = self.list(prefix)
            if pending:
                return self._take(pending[0])
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimedOut(f"no message for device {device_id.hex()} within {timeout:g}s")
            self._wait(remaining)

    # public links
    def make_link(self, key: str) -> PublicLink:
        key = normalize_key(key)
        if not self.exists(key):
            raise NotFound(key)
        token = crypto_core.random_bytes(LINK_TOKEN_SIZE)
        self._store_link(token, key)
        return PublicLink(token, self.location)

    def fetch_link(self, link: PublicLink) -> bytes:
        target = self._link_target(link.token)
        if target is None:
            raise InvalidLink("unknown link")
        return self.get(target)


class MemoryStorage(StorageChannel):
    location = "memory"

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self._objects: dict[str, bytes] = {}
        self._links: dict[bytes, str] = {}
        self._cond = threading.Condition()

    def _read(self, key):
        with self._cond:
            try:
                return self._objects[key]
            except KeyError:
                raise NotFound(key) from None

    def _write(self, key, data):
        with self._cond:
            self._objects[key] = data
            self._cond.notify_all()

    def _remove(self, key):
        with self._cond:
            if self._objects.pop(key, None) is None:
                raise NotFound(key)

    def _keys(self):
        with self._cond:
            return list(self._objects)

    def _link_target(self, token):
        with self._cond:
            return self._links.get(bytes(token))

    def _store_link(self, token, key):
        with self._cond:
            self._links[token] = key

    def _wait(self, timeout):
        with self._cond:
            self._cond.wait(min(timeout, POLL_INTERVAL))

    def snapshot(self) -> dict[str, bytes]:
        with self._cond:
            return dict(self._objects)


class LocalDirStorage(StorageChannel):
    """Objects as files under ``root``; writes are atomic renames."""

    def __init__(self, root: str | os.PathLike, **kwargs):
        super().__init__(**kwargs)
        self.root = Path(root).resolve()
        self.location = str(self.root)
        self._internal = self.root / _INTERNAL_DIR
        (self._internal / "tmp").mkdir(parents=True, exist_ok=True)
        (self._internal / "links").mkdir(exist_ok=True)
        self._lock = threading.RLock()

    def _path(self, key: str) -> Path:
        return self.root.joinpath(*key.split("/"))

    def _read(self, key):
        try:
            return self._path(key).read_bytes()
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
            raise NotFound(key) from None

    def _write(self, key, data):
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self._internal / "tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def _remove(self, key):
        path = self._path(key)
        with self._lock:
            try:
                path.unlink()
            except FileNotFoundError:
                raise NotFound(key) from None
            parent = path.parent
            while parent != self.root:
                try:
                    parent.rmdir()
                except OSError:
                    break
                parent = parent.parent

    def _keys(self):
        out = []
        for dirpath, dirnames, filenames in os.walk(self.root):
            rel = Path(dirpath).relative_to(self.root)
            if rel.parts[:1] == (_INTERNAL_DIR,):
                dirnames.clear()
                continue
            if rel == Path("."):
                dirnames[:] = [d for d in dirnames if d != _INTERNAL_DIR]
            for name in filenames:
                out.append("/".join(rel.parts + (name,)))
        return out

    def _link_target(self, token):
        try:
            return (self._internal / "links" / bytes(token).hex()).read_text("utf-8")
        except (FileNotFoundError, ValueError):
            return None

    def _store_link(self, token, key):
        (self._internal / "links" / token.hex()).write_text(key, "utf-8")
