"""Read-only file sharing between two users' domains.

Peering runs an ephemeral ECDH (P-256) exchange over a bidirectional OOB
pipe; each side then creates ``peers/<peer_id>/control`` in its own
storage and hands the other a public link to it. Sharing copies the
encrypted file verbatim into the peer directory and appends a SHARE record
holding the file key sealed under the peer key. The receiver opens the
body with that file key and appends an ACK record to its own control
file. Without the directory key the receiver cannot re-seal the header,
so any modified copy fails the sharer's own integrity check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

from . import crypto_core as cc
from .errors import (
    AuthFailure,
    BodyMismatch,
    InvalidLink,
    MalformedMessage,
    NotFound,
    PipeFailure,
    UnknownShare,
)
from .key_hierarchy import EncryptedFileBlob, Hierarchy, decrypt_body
from .oob import OobPipe
from .storage import (
    PEERS_PREFIX,
    PublicLink,
    StorageChannel,
    canonical_json,
    decode_payload,
    encode_payload,
)

PEER_KEY_SIZE = 32
PEER_ID_SIZE = 16
SHARE_ID_SIZE = 16
CONTROL_NAME = "control"


def peer_dir(peer_id: bytes) -> str:
    return f"{PEERS_PREFIX}{peer_id.hex()}"


def control_key(peer_id: bytes) -> str:
    return f"{peer_dir(peer_id)}/{CONTROL_NAME}"


# -- control file -----------------------------------------------------------

@dataclass(frozen=True)
class ShareRecord:
    share_id: bytes
    wrapped_key: bytes
    link: PublicLink

    def associated_data(self) -> bytes:
        # Binds the sealed key to this record; it cannot be moved to another share.
        return self.share_id + self.link.token

    def to_payload(self) -> dict:
        return {"kind": "SHARE", "share_id": self.share_id, "wrapped_key": self.wrapped_key, "link": self.link.to_text()}


@dataclass(frozen=True)
class AckRecord:
    share_id: bytes

    def to_payload(self) -> dict:
        return {"kind": "ACK", "share_id": self.share_id}


ControlRecord = ShareRecord | AckRecord


def encode_control(records: list[ControlRecord]) -> bytes:
    return b"".join(canonical_json(encode_payload(r.to_payload())) + b"\n" for r in records)


def decode_control(data: bytes) -> list[ControlRecord]:
    records: list[ControlRecord] = []
    for line in data.splitlines():
        if not line.strip():
            continue
        try:
            fields = decode_payload(json.loads(line))
            kind = fields["kind"]
            share_id = fields["share_id"]
            if kind == "SHARE":
                records.append(ShareRecord(share_id, fields["wrapped_key"], PublicLink.from_text(fields["link"])))
            elif kind == "ACK":
                records.append(AckRecord(share_id))
            else:
                raise MalformedMessage(f"unknown control record {kind!r}")
        except (KeyError, ValueError, UnicodeDecodeError, InvalidLink) as exc:
            raise MalformedMessage(f"bad control record: {exc}") from None
    return records


def append_control(store: StorageChannel, key: str, record: ControlRecord) -> None:
    """Append-only by contract: the owner is the single writer."""
    try:
        existing = store.get(key)
    except NotFound:
        existing = b""
    decode_control(existing)
    store.put(key, existing + encode_control([record]))


# -- peering ----------------------------------------------------------------

@dataclass(frozen=True)
class PeerContext:
    peer_key: bytes
    own_id: bytes
    peer_id: bytes
    own_control_link: PublicLink
    peer_control_link: PublicLink

    @property
    def peer_dir(self) -> str:
        return peer_dir(self.peer_id)

    @property
    def control_key(self) -> str:
        return control_key(self.peer_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "peer_key": self.peer_key.hex(),
                "own_id": self.own_id.hex(),
                "peer_id": self.peer_id.hex(),
                "own_control_link": self.own_control_link.to_text(),
                "peer_control_link": self.peer_control_link.to_text(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PeerContext":
        obj = json.loads(text)
        return cls(
            bytes.fromhex(obj["peer_key"]),
            bytes.fromhex(obj["own_id"]),
            bytes.fromhex(obj["peer_id"]),
            PublicLink.from_text(obj["own_control_link"]),
            PublicLink.from_text(obj["peer_control_link"]),
        )


class PeeringSession:
    """One side of a peering. Messages: hello, then link."""

    def __init__(self, store: StorageChannel, own_id: bytes, private_pem: bytes | None = None):
        self.store = store
        self.own_id = own_id
        if private_pem is None:
            self._private = ec.generate_private_key(ec.SECP256R1())
        else:
            self._private = serialization.load_pem_private_key(private_pem, password=None)
        self.peer_key: bytes | None = None
        self.peer_id: bytes | None = None
        self.own_link: PublicLink | None = None

    def _public(self) -> bytes:
        return self._private.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
        )

    def private_pem(self) -> bytes:
        """Ephemeral key, for resuming a peering across separate CLI invocations."""
        return self._private.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
        )

    def hello(self) -> bytes:
        return canonical_json({"id": self.own_id.hex(), "pub": self._public().hex()})

    def receive_hello(self, data: bytes) -> None:
        try:
            obj = json.loads(data)
            peer_id = bytes.fromhex(obj["id"])
            peer_pub = bytes.fromhex(obj["pub"])
            point = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), peer_pub)
        except (ValueError, KeyError, TypeError) as exc:
            raise PipeFailure(f"bad peering hello: {exc}") from None
        if len(peer_id) != PEER_ID_SIZE or peer_id == self.own_id:
            raise PipeFailure("peer id must be 16 bytes and differ from our own")
        shared = self._private.exchange(ec.ECDH(), point)
        low, high = sorted([self._public(), peer_pub])
        self.peer_key = cc.digest(shared + low + high)
        self.peer_id = peer_id
        if not self.store.exists(control_key(peer_id)):
            self.store.put(control_key(peer_id), b"")
        self.own_link = self.store.make_link(control_key(peer_id))

    def link_message(self) -> bytes:
        if self.own_link is None:
            raise PipeFailure("hello not yet received")
        return self.own_link.to_text().encode("utf-8")

    def receive_link(self, data: bytes) -> PeerContext:
        if self.peer_key is None:
            raise PipeFailure("hello not yet received")
        try:
            link = PublicLink.from_text(data.decode("utf-8"))
        except (UnicodeDecodeError, InvalidLink) as exc:
            raise PipeFailure(f"bad control link: {exc}") from None
        return PeerContext(self.peer_key, self.own_id, self.peer_id, self.own_link, link)


def peer_establish(
    pipe: OobPipe, endpoint: str, store: StorageChannel, own_id: bytes, timeout: float = 30.0
) -> PeerContext:
    """Run one side of peering over ``pipe``. Both sides may run sequentially or on threads."""
    session = PeeringSession(store, own_id)
    pipe.send(session.hello(), endpoint)
    session.receive_hello(pipe.receive(endpoint, timeout))
    pipe.send(session.link_message(), endpoint)
    return session.receive_link(pipe.receive(endpoint, timeout))


# -- sharing and receiving --------------------------------------------------

def share_file(ctx: PeerContext, path: str, hierarchy: Hierarchy) -> bytes:
    store = hierarchy.store
    blob = hierarchy.read_blob(path)
    file_key = hierarchy.file_key(path)
    share_id = cc.random_bytes(SHARE_ID_SIZE)
    copy_key = f"{ctx.peer_dir}/{share_id.hex()}"
    store.put(copy_key, blob)
    link = store.make_link(copy_key)
    record = ShareRecord(share_id, b"", link)
    wrapped = cc.aead_seal(ctx.peer_key, file_key, record.associated_data()).to_bytes()
    append_control(store, ctx.control_key, ShareRecord(share_id, wrapped, link))
    return share_id


def list_shares(ctx: PeerContext, peer_store: StorageChannel) -> list[ShareRecord]:
    return [r for r in decode_control(peer_store.fetch_link(ctx.peer_control_link)) if isinstance(r, ShareRecord)]


def acknowledged(store: StorageChannel, key: str) -> set[bytes]:
    try:
        data = store.get(key)
    except NotFound:
        return set()
    return {r.share_id for r in decode_control(data) if isinstance(r, AckRecord)}


def open_share(ctx: PeerContext, record: ShareRecord, peer_store: StorageChannel) -> tuple[bytes, bytes]:
    """Return (file key, plaintext) for one SHARE record."""
    file_key = cc.aead_open(ctx.peer_key, record.wrapped_key, record.associated_data())
    blob = EncryptedFileBlob.from_bytes(peer_store.fetch_link(record.link))
    try:
        return file_key, decrypt_body(file_key, blob)
    except AuthFailure:
        raise BodyMismatch("shared file was modified after it was shared") from None


def scan_and_receive(
    ctx: PeerContext, own_store: StorageChannel, peer_store: StorageChannel
) -> list[tuple[bytes, bytes]]:
    """Receive every unacknowledged share, acknowledging each in our control file."""
    done = acknowledged(own_store, ctx.control_key)
    received = []
    for record in list_shares(ctx, peer_store):
        if record.share_id in done:
            continue
        _, plaintext = open_share(ctx, record, peer_store)
        append_control(own_store, ctx.control_key, AckRecord(record.share_id))
        done.add(record.share_id)
        received.append((record.share_id, plaintext))
    return received


def store_received(hierarchy: Hierarchy, dest_path: str, plaintext: bytes) -> None:
    """Import a received file into our own hierarchy under a fresh file key."""
    hierarchy.write_file(dest_path, plaintext)


def find_share(ctx: PeerContext, share_id: bytes, peer_store: StorageChannel) -> ShareRecord:
    for record in list_shares(ctx, peer_store):
        if record.share_id == share_id:
            return record
    raise UnknownShare(f"no share {share_id.hex()}")
