"""Single round-trip device authorization.

New device A shows (hash of its public key, fresh session authentication
key) over a 48-byte OOB channel and uploads its public key. Authorizer B
checks the uploaded key against the hash, wraps the root key to it, and
returns the wrapped key with an HMAC under the session authentication key.
A checks the HMAC before unwrapping.
"""

from __future__ import annotations

import enum
from typing import Callable

from . import crypto_core as cc
from .crypto_core import DeviceKeypair
from .errors import DigestMismatch, MacMismatch, MalformedMessage
from .oob import OobPayloadSingle
from .statemachine import DEFAULT_TIMEOUT, ProtocolMachine, expect, step
from .storage import ProtocolMessage, StorageChannel, new_uuid

MSG_PK = "auth1.pk"
MSG_RESP = "auth1.resp"


class NewDevicePhase(enum.Enum):
    INIT = "init"
    SENT_PK = "sent_pk"
    DONE = "done"
    FAILED = "failed"


class AuthorizerPhase(enum.Enum):
    AWAIT_OOB = "await_oob"
    AWAIT_PK = "await_pk"
    RESPONDED = "responded"
    FAILED = "failed"


class SingleNewDevice(ProtocolMachine):
    Phase = NewDevicePhase
    FAILED = NewDevicePhase.FAILED

    def __init__(self, keypair: DeviceKeypair, authorizer_id: bytes):
        super().__init__(NewDevicePhase.INIT)
        self.keypair = keypair
        self.authorizer_id = authorizer_id
        self.k_sauth: bytes | None = None
        self.reply_uuid: str | None = None
        self.root_key: bytes | None = None

    @step("INIT")
    def start(self) -> tuple[OobPayloadSingle, ProtocolMessage]:
        self.k_sauth = cc.generate_key()
        self.reply_uuid = new_uuid()
        pk = self.keypair.public
        self.view["PK_A"] = pk
        msg = ProtocolMessage(
            MSG_PK, {"PK_A": pk}, reply_uuid=self.reply_uuid, target_device_id=self.authorizer_id
        )
        self.phase = NewDevicePhase.SENT_PK
        return OobPayloadSingle(cc.digest(pk), self.k_sauth), msg

    def _check_mac(self, m1: bytes, m2: bytes) -> None:
        if not cc.hmac_verify(self.k_sauth, m1, m2):
            raise MacMismatch("M2 does not authenticate M1; response was forged or altered")

    @step("SENT_PK")
    def finish(self, resp: ProtocolMessage) -> bytes:
        expect(resp, MSG_RESP, self.reply_uuid)
        m1, m2 = resp.field("M1", bytes), resp.field("M2", bytes)
        self._check_mac(m1, m2)
        rk = cc.asym_unwrap(self.keypair, m1)
        self.view.update(M1=m1, M2=m2)
        self.root_key = rk
        self.phase = NewDevicePhase.DONE
        self._forget()
        return rk

    def _forget(self) -> None:
        # A retry must start a new machine with a new session key.
        self.k_sauth = None


class SingleAuthorizer(ProtocolMachine):
    Phase = AuthorizerPhase
    FAILED = AuthorizerPhase.FAILED

    def __init__(self, root_key: bytes):
        super().__init__(AuthorizerPhase.AWAIT_OOB)
        self.root_key = root_key
        self.expected_digest: bytes | None = None
        self.k_sauth: bytes | None = None

    @step("AWAIT_OOB")
    def accept_oob(self, payload: OobPayloadSingle | bytes) -> None:
        if not isinstance(payload, OobPayloadSingle):
            payload = OobPayloadSingle.decode(payload)
        self.expected_digest = payload.pk_digest
        self.k_sauth = payload.session_auth_key
        self.phase = AuthorizerPhase.AWAIT_PK

    def _check_digest(self, pk: bytes) -> None:
        if cc.digest(pk) != self.expected_digest:
            raise DigestMismatch("uploaded public key does not match the OOB digest")

    @step("AWAIT_PK")
    def respond(self, pk_msg: ProtocolMessage) -> ProtocolMessage:
        expect(pk_msg, MSG_PK)
        pk = pk_msg.field("PK_A", bytes)
        if pk_msg.reply_uuid is None:
            raise MalformedMessage("public key message names no reply file")
        self._check_digest(pk)
        m1 = cc.asym_wrap(pk, self.root_key)
        m2 = cc.hmac_tag(self.k_sauth, m1)
        self.view.update(PK_A=pk, M1=m1, M2=m2)
        self.phase = AuthorizerPhase.RESPONDED
        self._forget()
        return ProtocolMessage(MSG_RESP, {"M1": m1, "M2": m2}, uuid=pk_msg.reply_uuid)

    def _forget(self) -> None:
        self.k_sauth = None


# -- drivers over a live channel ------------------------------------------

def run_new_device(
    store: StorageChannel,
    keypair: DeviceKeypair,
    authorizer_id: bytes,
    show_oob: Callable[[OobPayloadSingle], None],
    timeout: float = DEFAULT_TIMEOUT,
) -> bytes:
    machine = SingleNewDevice(keypair, authorizer_id)
    payload, msg = machine.start()
    store.send_message(msg)
    show_oob(payload)
    return machine.finish(store.await_message(machine.reply_uuid, timeout))


def run_authorizer(
    store: StorageChannel,
    root_key: bytes,
    own_id: bytes,
    read_oob: Callable[[], OobPayloadSingle | bytes],
    timeout: float = DEFAULT_TIMEOUT,
    first: ProtocolMessage | None = None,
) -> SingleAuthorizer:
    machine = SingleAuthorizer(root_key)
    machine.accept_oob(read_oob())
    pk_msg = first or store.await_addressed(own_id, timeout)
    store.send_message(machine.respond(pk_msg))
    return machine
