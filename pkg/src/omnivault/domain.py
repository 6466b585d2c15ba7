"""Domain descriptor (lock-box) management.

The descriptor lives in cleartext at ``omnishare.domain`` in the storage
root. It lists every authorized device with the root key wrapped to that
device's public key, and an HMAC over the record under the device's
local authentication key. Nothing in it is secret; each device can only
detect tampering with its own record.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable

from . import crypto_core as cc
from .crypto_core import DeviceKeypair
from .errors import (
    DomainExists,
    DuplicateDeviceId,
    MacMismatch,
    MalformedDescriptor,
    NoDomain,
    NoViableChannel,
    NotFound,
    RecordNotFound,
)
from .key_hierarchy import DESCRIPTOR_NAME
from .storage import StorageChannel

DEVICE_ID_SIZE = 16
DOMAIN_ID_SIZE = 16
_MAGIC = b"OMNIDOM\x01"


class Capability(str, enum.Enum):
    DISPLAY = "DISPLAY"
    CAMERA = "CAMERA"
    KEYBOARD = "KEYBOARD"
    SPEAKER = "SPEAKER"
    MICROPHONE = "MICROPHONE"
    NFC = "NFC"

    @classmethod
    def parse_set(cls, names: Iterable[str] | str) -> frozenset["Capability"]:
        if isinstance(names, str):
            names = [n for n in names.replace(" ", "").split(",") if n]
        try:
            return frozenset(cls(n.upper()) for n in names)
        except ValueError as exc:
            raise ValueError(f"unknown capability: {exc}") from None


class ProtocolKind(str, enum.Enum):
    SINGLE_ROUND_TRIP = "single"
    MULTI_ROUND_TRIP = "multi"


class OobKind(str, enum.Enum):
    QR = "qr"
    ULTRASOUND = "ultrasound"
    PASSCODE = "passcode"


@dataclass(frozen=True)
class ProtocolChoice:
    kind: ProtocolKind
    oob: OobKind


def select_protocol(caps_new: Iterable[Capability], caps_auth: Iterable[Capability]) -> ProtocolChoice:
    """Pick the OOB channel from new device A to authorizer B. QR > ultrasound > passcode."""
    new, auth = frozenset(caps_new), frozenset(caps_auth)
    if Capability.DISPLAY in new and Capability.CAMERA in auth:
        return ProtocolChoice(ProtocolKind.SINGLE_ROUND_TRIP, OobKind.QR)
    if Capability.SPEAKER in new and Capability.MICROPHONE in auth:
        return ProtocolChoice(ProtocolKind.SINGLE_ROUND_TRIP, OobKind.ULTRASOUND)
    if Capability.DISPLAY in new and Capability.KEYBOARD in auth:
        return ProtocolChoice(ProtocolKind.MULTI_ROUND_TRIP, OobKind.PASSCODE)
    raise NoViableChannel(
        f"no OOB channel from {sorted(c.value for c in new)} to {sorted(c.value for c in auth)}"
    )


# -- canonical encoding -----------------------------------------------------

def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedDescriptor("descriptor is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def lp(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)

    def done(self) -> bool:
        return self.pos == len(self.data)


def _caps_bytes(caps: Iterable[Capability]) -> bytes:
    return ",".join(sorted(c.value for c in caps)).encode("ascii")


@dataclass(frozen=True)
class DeviceMeta:
    name: str
    device_id: bytes
    capabilities: frozenset[Capability] = field(default_factory=frozenset)

    @classmethod
    def new(cls, name: str, capabilities: Iterable[Capability | str] = ()) -> "DeviceMeta":
        caps = Capability.parse_set([c.value if isinstance(c, Capability) else c for c in capabilities])
        return cls(name, cc.random_bytes(DEVICE_ID_SIZE), caps)


@dataclass(frozen=True)
class DeviceRecord:
    name: str
    device_id: bytes
    capabilities: frozenset[Capability]
    public_key: bytes
    wrapped_rk: bytes
    record_mac: bytes = b""

    def signed_content(self) -> bytes:
        return b"".join(
            _lp(x)
            for x in (
                self.name.encode("utf-8"),
                self.device_id,
                _caps_bytes(self.capabilities),
                self.public_key,
                self.wrapped_rk,
            )
        )

    def to_bytes(self) -> bytes:
        return self.signed_content() + _lp(self.record_mac)

    @classmethod
    def read(cls, r: _Reader) -> "DeviceRecord":
        try:
            name = r.lp().decode("utf-8")
            device_id = r.lp()
            caps_raw = r.lp().decode("ascii")
        except UnicodeDecodeError:
            raise MalformedDescriptor("bad text field in record") from None
        try:
            caps = Capability.parse_set(caps_raw)
        except ValueError as exc:
            raise MalformedDescriptor(str(exc)) from None
        if _caps_bytes(caps).decode() != caps_raw:
            raise MalformedDescriptor("capabilities are not in canonical order")
        if len(device_id) != DEVICE_ID_SIZE:
            raise MalformedDescriptor("device id must be 16 bytes")
        return cls(name, device_id, caps, r.lp(), r.lp(), r.lp())

    def sign(self, auth_key: bytes) -> "DeviceRecord":
        return replace(self, record_mac=cc.hmac_tag(auth_key, self.signed_content()))

    def verify(self, auth_key: bytes) -> bool:
        return cc.hmac_verify(auth_key, self.signed_content(), self.record_mac)

    @property
    def meta(self) -> DeviceMeta:
        return DeviceMeta(self.name, self.device_id, self.capabilities)


@dataclass(frozen=True)
class DomainDescriptor:
    domain_id: bytes
    records: tuple[DeviceRecord, ...] = ()

    def to_bytes(self) -> bytes:
        return (
            _MAGIC
            + self.domain_id
            + struct.pack(">I", len(self.records))
            + b"".join(r.to_bytes() for r in self.records)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "DomainDescriptor":
        r = _Reader(data)
        if r.take(len(_MAGIC)) != _MAGIC:
            raise MalformedDescriptor("not a domain descriptor")
        domain_id = r.take(DOMAIN_ID_SIZE)
        (count,) = struct.unpack(">I", r.take(4))
        records = tuple(DeviceRecord.read(r) for _ in range(count))
        if not r.done():
            raise MalformedDescriptor("trailing bytes after descriptor")
        return cls(domain_id, records)

    def find(self, device_id: bytes) -> DeviceRecord:
        for rec in self.records:
            if rec.device_id == device_id:
                return rec
        raise RecordNotFound(f"no record for device {device_id.hex()}")

    def find_by_name(self, name: str) -> DeviceRecord:
        matches = [r for r in self.records if r.name == name]
        if len(matches) != 1:
            raise RecordNotFound(f"{len(matches)} devices named {name!r}")
        return matches[0]


def load_descriptor(store: StorageChannel) -> DomainDescriptor:
    try:
        return DomainDescriptor.from_bytes(store.get(DESCRIPTOR_NAME))
    except NotFound:
        raise NoDomain("no domain descriptor in this storage") from None


def save_descriptor(store: StorageChannel, descriptor: DomainDescriptor) -> None:
    store.put(DESCRIPTOR_NAME, descriptor.to_bytes())


def make_record(meta: DeviceMeta, rk: bytes, keypair: DeviceKeypair, auth_key: bytes) -> DeviceRecord:
    record = DeviceRecord(
        name=meta.name,
        device_id=meta.device_id,
        capabilities=frozenset(meta.capabilities),
        public_key=keypair.public,
        wrapped_rk=cc.asym_wrap(keypair.public, rk),
    )
    return record.sign(auth_key)


def init_domain(
    meta: DeviceMeta,
    store: StorageChannel,
    keypair: DeviceKeypair | None = None,
) -> tuple[DomainDescriptor, bytes, bytes, DeviceKeypair]:
    if store.exists(DESCRIPTOR_NAME):
        raise DomainExists("storage already holds a domain descriptor")
    keypair = keypair or cc.asym_keygen()
    rk = cc.generate_key()
    auth_key = cc.generate_key()
    descriptor = DomainDescriptor(
        domain_id=cc.random_bytes(DOMAIN_ID_SIZE),
        records=(make_record(meta, rk, keypair, auth_key),),
    )
    save_descriptor(store, descriptor)
    return descriptor, rk, auth_key, keypair


def register_self(
    descriptor: DomainDescriptor,
    rk: bytes,
    meta: DeviceMeta,
    keypair: DeviceKeypair,
    auth_key: bytes,
) -> DomainDescriptor:
    if any(r.device_id == meta.device_id for r in descriptor.records):
        raise DuplicateDeviceId(f"device {meta.device_id.hex()} is already registered")
    return replace(descriptor, records=descriptor.records + (make_record(meta, rk, keypair, auth_key),))


def load_root_key(
    descriptor: DomainDescriptor,
    device_id: bytes,
    private_key: DeviceKeypair,
    auth_key: bytes,
) -> bytes:
    record = descriptor.find(device_id)
    if not record.verify(auth_key):
        raise MacMismatch("this device's descriptor record was modified")
    return cc.asym_unwrap(private_key, record.wrapped_rk)
