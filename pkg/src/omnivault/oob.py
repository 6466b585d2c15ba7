"""Out-of-band channels as trusted byte pipes.

QR codes and ultrasound are both modeled as one 48-byte-class pipe,
passcode entry as a six-digit pipe, and peering as an unbounded
bidirectional pipe. The adversary's storage hook never sees pipe traffic.
"""

from __future__ import annotations

import base64
import binascii
import enum
import re
import threading
from dataclasses import dataclass, field
from typing import Callable

from . import crypto_core as cc
from .errors import BadLength, CapacityExceeded, PipeFailure

SINGLE_PAYLOAD_SIZE = cc.DIGEST_SIZE + cc.KEY_SIZE
_PASSCODE_RE = re.compile(r"^[0-9]{6}$")


@dataclass(frozen=True)
class OobPayloadSingle:
    pk_digest: bytes
    session_auth_key: bytes

    def __post_init__(self):
        if len(self.pk_digest) != cc.DIGEST_SIZE or len(self.session_auth_key) != cc.KEY_SIZE:
            raise BadLength("OOB payload needs a 32-byte digest and a 16-byte key")

    def encode(self) -> bytes:
        return self.pk_digest + self.session_auth_key

    @classmethod
    def decode(cls, data: bytes) -> "OobPayloadSingle":
        if len(data) != SINGLE_PAYLOAD_SIZE:
            raise BadLength(f"OOB payload must be {SINGLE_PAYLOAD_SIZE} bytes, got {len(data)}")
        return cls(data[: cc.DIGEST_SIZE], data[cc.DIGEST_SIZE :])


def encode_single_payload(p: OobPayloadSingle) -> bytes:
    return p.encode()


def decode_single_payload(data: bytes) -> OobPayloadSingle:
    return OobPayloadSingle.decode(data)


def to_base32(data: bytes) -> str:
    return base64.b32encode(data).decode("ascii").rstrip("=")


def from_base32(text: str) -> bytes:
    cleaned = "".join(text.split()).upper()
    try:
        return base64.b32decode(cleaned + "=" * (-len(cleaned) % 8))
    except (binascii.Error, ValueError):
        raise BadLength("not a base32 OOB string") from None


class Direction(enum.Enum):
    A_TO_B = "a->b"
    BIDIRECTIONAL = "both"


class Capacity(enum.Enum):
    QR_48B = "qr"
    PASSCODE_6D = "passcode"
    PEERING_UNBOUNDED = "peering"


def check_capacity(capacity: Capacity, data: bytes) -> None:
    if capacity is Capacity.QR_48B and len(data) > SINGLE_PAYLOAD_SIZE:
        raise CapacityExceeded(f"{len(data)} bytes exceed the 48-byte channel")
    if capacity is Capacity.PASSCODE_6D and not _PASSCODE_RE.match(data.decode("latin-1")):
        raise CapacityExceeded("passcode channel carries exactly six decimal digits")


@dataclass
class OobPipe:
    """A two-endpoint pipe. ``send`` queues, ``receive`` blocks for the other end."""

    direction: Direction
    capacity: Capacity
    observers: list[Callable[[str, bytes], None]] = field(default_factory=list)
    _queues: dict[str, list[bytes]] = field(default_factory=lambda: {"a": [], "b": []}, repr=False)
    _cond: threading.Condition = field(default_factory=threading.Condition, repr=False)

    def transfer(self, data: bytes, sender: str = "a") -> bytes:
        """Deliver ``data`` from ``sender`` and return what the far end receives."""
        self.send(data, sender)
        return self.receive("b" if sender == "a" else "a", timeout=0)

    def send(self, data: bytes, sender: str = "a") -> None:
        if sender not in ("a", "b"):
            raise PipeFailure(f"unknown endpoint {sender!r}")
        if sender == "b" and self.direction is Direction.A_TO_B:
            raise PipeFailure("this channel only carries data from A to B")
        data = bytes(data)
        check_capacity(self.capacity, data)
        for observe in self.observers:
            observe(sender, data)
        with self._cond:
            self._queues["b" if sender == "a" else "a"].append(data)
            self._cond.notify_all()

    def receive(self, endpoint: str, timeout: float | None = None) -> bytes:
        with self._cond:
            if not self._cond.wait_for(lambda: self._queues[endpoint], timeout):
                raise PipeFailure(f"nothing arrived at endpoint {endpoint!r}")
            return self._queues[endpoint].pop(0)


def qr_pipe() -> OobPipe:
    return OobPipe(Direction.A_TO_B, Capacity.QR_48B)


def passcode_pipe() -> OobPipe:
    return OobPipe(Direction.A_TO_B, Capacity.PASSCODE_6D)


def peering_pipe() -> OobPipe:
    return OobPipe(Direction.BIDIRECTIONAL, Capacity.PEERING_UNBOUNDED)
