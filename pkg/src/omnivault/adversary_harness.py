"""Protocol runs under a programmable network adversary.

The adversary sits on the storage channel's interposition hook and can
read, rewrite, drop and inject every object. It never touches the OOB
pipes. Everything it sees or makes goes into a :class:`KnowledgeSet`
whose symbolic closure (open with known keys, unwrap with its own private
keys, hash, split known record formats) is then checked for secrets.

Runs are driven by a deterministic lockstep scheduler: each session is a
list of role steps, and step ``i`` of every live session runs before step
``i + 1`` of any. Awaits use a zero timeout, so a dropped message surfaces
as ``TimedOut`` at once. A threaded driver is kept for PASSIVE runs.
"""

from __future__ import annotations

import enum
import random
import threading
from dataclasses import dataclass, field
from typing import Iterable

from . import auth_pake as srp
from . import auth_single as s1
from . import crypto_core as cc
from . import domain as dm
from . import key_hierarchy as kh
from . import oob
from . import sharing as sh
from .crypto_core import DeviceKeypair
from .errors import MalformedBlob, MalformedDescriptor, MalformedMessage, OmniError
from .storage import Interceptor, MemoryStorage, ProtocolMessage, StorageChannel


class Protocol(str, enum.Enum):
    SINGLE = "single"
    PAKE = "pake"


class Strategy(str, enum.Enum):
    PASSIVE = "passive"
    PK_SUBSTITUTE = "pk_substitute"
    RK_INJECT = "rk_inject"
    REPLAY = "replay"
    TAMPER_RANDOM = "tamper_random"
    CROSS_SESSION_SPLICE = "cross_session_splice"
    PASSCODE_GUESS = "passcode_guess"


MESSAGE_TYPES = {
    Protocol.SINGLE: (s1.MSG_PK, s1.MSG_RESP),
    Protocol.PAKE: (srp.MSG_ALPHA, srp.MSG_BETA, srp.MSG_M1, srp.MSG_M2),
}
RK_CARRIERS = frozenset({s1.MSG_RESP, srp.MSG_M2})
SUCCESS_PHASES = frozenset({"DONE", "RESPONDED"})


# -- knowledge --------------------------------------------------------------

def _int_bytes(n: int) -> bytes:
    return n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big")


class KnowledgeSet:
    """Symbolic adversary knowledge. Monotone: nothing is ever removed."""

    def __init__(self):
        self.atoms: set[bytes] = set()
        self._hashed: set[bytes] = set()
        self._sealed: dict[bytes, set[bytes]] = {}
        self._opened: set[bytes] = set()
        self._tried: set[tuple[bytes, bytes]] = set()
        self.private_keys: list[DeviceKeypair] = []

    def __contains__(self, secret: bytes) -> bool:
        return any(secret in atom for atom in self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    def learn(self, value: bytes | int | str, *, derived: bool = False) -> None:
        if isinstance(value, int):
            value = _int_bytes(value)
        elif isinstance(value, str):
            value = value.encode("utf-8")
        if not value or value in self.atoms:
            return
        self.atoms.add(value)
        if derived:
            self._hashed.add(value)

    def learn_sealed(self, blob: bytes, ads: Iterable[bytes] = (b"",)) -> None:
        self.learn(blob)
        if len(blob) >= cc.AEAD_OVERHEAD:
            self._sealed.setdefault(blob, {b""}).update(ads)

    def learn_private_key(self, keypair: DeviceKeypair) -> None:
        self.private_keys.append(keypair)
        self.learn(keypair.private_pem())

    def learn_message(self, msg: ProtocolMessage) -> None:
        fields = [v for v in msg.payload.values()]
        byte_fields = [v for v in fields if isinstance(v, bytes)]
        for value in fields:
            if isinstance(value, bytes):
                self.learn_sealed(value, [f for f in byte_fields if f is not value])
            else:
                self.learn(value)

    def learn_object(self, key: str, data: bytes) -> None:
        if key.startswith("messages/"):
            try:
                self.learn_message(ProtocolMessage.from_bytes(data))
                return
            except MalformedMessage:
                pass
        elif key == kh.DESCRIPTOR_NAME:
            try:
                for rec in dm.DomainDescriptor.from_bytes(data).records:
                    for value in (rec.name.encode(), rec.device_id, rec.public_key, rec.wrapped_rk, rec.record_mac):
                        self.learn(value)
                return
            except MalformedDescriptor:
                pass
        elif key.endswith("/" + sh.CONTROL_NAME):
            try:
                for rec in sh.decode_control(data):
                    self.learn(rec.share_id)
                    if isinstance(rec, sh.ShareRecord):
                        self.learn(rec.link.token)
                        self.learn_sealed(rec.wrapped_key, [rec.associated_data()])
                return
            except MalformedMessage:
                pass
        self.learn(data)
        try:
            blob = kh.EncryptedFileBlob.from_bytes(data)
        except MalformedBlob:
            self.learn_sealed(data)
            return
        self.learn_sealed(blob.key_header.to_bytes())
        self.learn_sealed(blob.body.to_bytes())

    def _decompose(self, plaintext: bytes) -> None:
        self.learn(plaintext, derived=True)
        if len(plaintext) == kh.KEY_RECORD_SIZE and plaintext[0] in (kh.KeyTag.DIRKEY, kh.KeyTag.FILEKEY):
            self.learn(plaintext[1 : 1 + cc.DIGEST_SIZE], derived=True)
            self.learn(plaintext[1 + cc.DIGEST_SIZE :], derived=True)
        elif len(plaintext) == oob.SINGLE_PAYLOAD_SIZE:
            self.learn(plaintext[: cc.DIGEST_SIZE], derived=True)
            self.learn(plaintext[cc.DIGEST_SIZE :], derived=True)

    def close(self) -> "KnowledgeSet":
        """Apply the derivation rules until nothing new appears."""
        while True:
            before = len(self.atoms)
            for atom in list(self.atoms - self._hashed):
                self._hashed.add(atom)
                self.learn(cc.digest(atom), derived=True)
            keys = [a for a in self.atoms if len(a) in (cc.KEY_SIZE, 32)]
            for blob, ads in list(self._sealed.items()):
                if blob in self._opened:
                    continue
                for key in keys:
                    if (blob, key) in self._tried:
                        continue
                    self._tried.add((blob, key))
                    for ad in ads:
                        try:
                            plaintext = cc.aead_open(key, blob, ad)
                        except OmniError:
                            continue
                        self._opened.add(blob)
                        self._decompose(plaintext)
                        break
            for atom in list(self.atoms):
                if len(atom) != cc.RSA_BITS // 8:
                    continue
                for kp in self.private_keys:
                    if (atom, kp.public) in self._tried:
                        continue
                    self._tried.add((atom, kp.public))
                    try:
                        self._decompose(cc.asym_unwrap(kp, atom))
                    except OmniError:
                        pass
            if len(self.atoms) == before:
                return self


# -- test keypairs ------------------------------------------------------------

_POOL_SIZE = 6
_pool: list[DeviceKeypair] = []
_pool_lock = threading.Lock()


def keypair_pool() -> list[DeviceKeypair]:
    """RSA keygen dominates run time, so runs draw distinct keys from a shared pool."""
    with _pool_lock:
        while len(_pool) < _POOL_SIZE:
            _pool.append(cc.asym_keygen())
        return _pool


# -- broken variants used as canaries -----------------------------------------

class NoDigestCheckAuthorizer(s1.SingleAuthorizer):
    def _check_digest(self, pk: bytes) -> None:
        pass


class NoMacCheckNewDevice(s1.SingleNewDevice):
    def _check_mac(self, m1: bytes, m2: bytes) -> None:
        pass


class NoAlphaGuardAuthorizer(srp.SrpAuthorizer):
    def _check_alpha(self, alpha: int) -> None:
        pass


VARIANTS = ("no_digest_check", "no_mac_check", "no_alpha_guard")


# -- adversary ----------------------------------------------------------------

@dataclass
class _Device:
    meta: dm.DeviceMeta
    keypair: DeviceKeypair
    auth_key: bytes


class Adversary(Interceptor):
    def __init__(self, strategy: Strategy, protocol: Protocol, rng: random.Random, own_keypair: DeviceKeypair):
        self.strategy = strategy
        self.protocol = protocol
        self.rng = rng
        self.knowledge = KnowledgeSet()
        self.keypair = own_keypair
        self.knowledge.learn_private_key(own_keypair)
        self.transcript: list[tuple[str, bytes]] = []
        self.recording: dict[str, ProtocolMessage] = {}
        self.armed = strategy is not Strategy.REPLAY
        self.target_type = rng.choice(MESSAGE_TYPES[protocol])
        self._held: tuple[str, ProtocolMessage] | None = None
        self._seen_pk: bytes | None = None
        self._srp: dict = {}
        self.guess: str | None = None
        self.injected_rk: bytes | None = None

    # bookkeeping
    def on_put(self, channel: StorageChannel, key: str, data: bytes) -> bytes | None:
        self.knowledge.learn_object(key, data)
        out = data
        if key.startswith("messages/"):
            try:
                msg = ProtocolMessage.from_bytes(data)
            except MalformedMessage:
                msg = None
            if msg is not None:
                if not self.armed:
                    self.recording.setdefault(msg.msg_type, msg)
                else:
                    replaced = self._act(channel, key, msg)
                    out = None if replaced is None else replaced.to_bytes()
        if out is not None:
            if out is not data:
                self.knowledge.learn_object(key, out)
            self.transcript.append((key, out))
        return out

    def flush(self, channel: StorageChannel) -> None:
        """Release a message held for splicing whose partner never came."""
        if self._held is not None:
            key, msg = self._held
            self._held = None
            channel.raw_put(key, msg.to_bytes())
            self.transcript.append((key, msg.to_bytes()))

    def _own(self, value) -> None:
        self.knowledge.learn(value)

    def _with(self, msg: ProtocolMessage, **changes) -> ProtocolMessage:
        return ProtocolMessage(msg.msg_type, {**msg.payload, **changes}, msg.uuid, msg.reply_uuid, msg.target_device_id)

    # strategies
    def _act(self, channel: StorageChannel, key: str, msg: ProtocolMessage) -> ProtocolMessage | None:
        handler = getattr(self, f"_{self.strategy.value}")
        return handler(channel, key, msg)

    def _passive(self, channel, key, msg):
        return msg

    def _pk_substitute(self, channel, key, msg):
        if msg.msg_type == s1.MSG_PK:
            return self._with(msg, PK_A=self.keypair.public)
        if self.protocol is Protocol.PAKE:
            return self._srp_mitm(msg, zero_alpha=self._srp.setdefault("zero", self.rng.random() < 0.5))
        return msg

    def _srp_mitm(self, msg: ProtocolMessage, zero_alpha: bool, guess: str | None = None):
        """Swap A's alpha for our own, then answer B's challenge in A's place."""
        group = srp.RFC5054_2048
        st = self._srp
        if msg.msg_type == srp.MSG_ALPHA:
            if zero_alpha:
                st["e"] = None
                st["alpha"] = self.rng.choice([0, group.N, 2 * group.N])
            else:
                st["e"] = 1 + self.rng.getrandbits(srp.EXPONENT_BITS)
                st["alpha"] = srp.powmod(group.g, st["e"], group.N)
                self._own(st["e"])
            self._own(st["alpha"])
            return self._with(msg, alpha=st["alpha"])
        if msg.msg_type == srp.MSG_BETA and "alpha" in st:
            beta, salt = msg.payload["beta"] % group.N, msg.payload["s"]
            alpha = st["alpha"] % group.N
            u = group.u(alpha, beta)
            if st["e"] is None:
                sigma = 0
            else:
                passcode = guess if guess is not None else f"{self.rng.randrange(10**6):06d}"
                x = group.x(salt, passcode)
                sigma = srp.client_premaster(group, st["e"], x, u, beta, group.k())
            k_guess = group.session_key(sigma)
            self._own(k_guess)
            st["m1"] = group.client_proof(alpha, beta, k_guess)
            return msg
        if msg.msg_type == srp.MSG_M1 and "m1" in st:
            return self._with(msg, M1=st["m1"])
        return msg

    def _rk_inject(self, channel, key, msg):
        evil = self.injected_rk or cc.generate_key()
        self.injected_rk = evil
        self._own(evil)
        if msg.msg_type == s1.MSG_PK:
            self._seen_pk = msg.payload["PK_A"]
        elif msg.msg_type == s1.MSG_RESP and self._seen_pk is not None:
            return self._with(msg, M1=cc.asym_wrap(self._seen_pk, evil))
        elif msg.msg_type == srp.MSG_M2:
            fake_key = cc.generate_key()
            self._own(fake_key)
            return self._with(msg, C=cc.aead_seal(fake_key, evil, msg.payload["M2"]).to_bytes())
        return msg

    def _replay(self, channel, key, msg):
        old = self.recording.get(msg.msg_type)
        if msg.msg_type == self.target_type and old is not None:
            return self._with(msg, **old.payload)
        return msg

    def _tamper_random(self, channel, key, msg):
        if msg.msg_type != self.target_type or not msg.payload:
            return msg
        name = self.rng.choice(sorted(msg.payload))
        value = msg.payload[name]
        if isinstance(value, int):
            bit = self.rng.randrange(max(value.bit_length(), 1))
            return self._with(msg, **{name: value ^ (1 << bit)})
        flipped = bytearray(value)
        bit = self.rng.randrange(len(flipped) * 8)
        flipped[bit // 8] ^= 1 << (bit % 8)
        return self._with(msg, **{name: bytes(flipped)})

    def _cross_session_splice(self, channel, key, msg):
        if msg.msg_type != self.target_type:
            return msg
        if self._held is None:
            self._held = (key, msg)
            return None
        held_key, held = self._held
        self._held = None
        swapped_first = ProtocolMessage(held.msg_type, msg.payload, held.uuid, held.reply_uuid, held.target_device_id)
        channel.raw_put(held_key, swapped_first.to_bytes())
        self.transcript.append((held_key, swapped_first.to_bytes()))
        return ProtocolMessage(msg.msg_type, held.payload, msg.uuid, msg.reply_uuid, msg.target_device_id)

    def _passcode_guess(self, channel, key, msg):
        if self.protocol is Protocol.PAKE:
            if self.guess is None:
                self.guess = f"{self.rng.randrange(10**6):06d}"
            return self._srp_mitm(msg, zero_alpha=False, guess=self.guess)
        if msg.msg_type == s1.MSG_PK:
            self._seen_pk = msg.payload["PK_A"]
        elif msg.msg_type == s1.MSG_RESP and self._seen_pk is not None:
            guessed_key = bytes(self.rng.getrandbits(8) for _ in range(cc.KEY_SIZE))
            evil = cc.generate_key()
            self.injected_rk = evil
            for v in (guessed_key, evil):
                self._own(v)
            m1 = cc.asym_wrap(self._seen_pk, evil)
            return self._with(msg, M1=m1, M2=cc.hmac_tag(guessed_key, m1))
        return msg


# -- sessions -------------------------------------------------------------------

class _Session:
    def __init__(self, run: "_Run", label: str, authorizer: _Device, newcomer: _Device, variant: str | None):
        self.run = run
        self.label = label
        self.authorizer = authorizer
        self.newcomer = newcomer
        self.error: OmniError | None = None
        self.failed_role: str | None = None
        self.secrets: dict[str, bytes] = {}
        self.oob_transfers: list[bytes] = []
        self.registered = False
        rk = run.rk
        b_id = authorizer.meta.device_id
        if run.protocol is Protocol.SINGLE:
            a_cls = NoMacCheckNewDevice if variant == "no_mac_check" else s1.SingleNewDevice
            b_cls = NoDigestCheckAuthorizer if variant == "no_digest_check" else s1.SingleAuthorizer
            self.a = a_cls(newcomer.keypair, b_id)
            self.b = b_cls(rk)
            self.steps = [self._s1_start, self._s1_respond, self._s1_finish, self._register]
        else:
            b_cls = NoAlphaGuardAuthorizer if variant == "no_alpha_guard" else srp.SrpAuthorizer
            self.a = srp.SrpNewDevice(b_id)
            self.b = b_cls(rk)
            self.steps = [self._p_round1, self._p_b_round1, self._p_round2, self._p_b_round2, self._p_finish, self._register]
        self._pipe = oob.qr_pipe() if run.protocol is Protocol.SINGLE else oob.passcode_pipe()
        self._pipe.observers.append(lambda _sender, data: self.oob_transfers.append(data))
        self._first: ProtocolMessage | None = None

    @property
    def done(self) -> bool:
        return self.error is not None or not self.steps

    def advance(self) -> None:
        step = self.steps.pop(0)
        try:
            step()
        except OmniError as exc:
            self.error = exc
            self.failed_role = "A" if step.__name__ in _A_STEPS else "B"
            self.steps.clear()

    # single round trip
    def _s1_start(self):
        payload, msg = self.a.start()
        self.secrets["K_SAuth"] = payload.session_auth_key
        self.run.store.send_message(msg)
        self._oob = payload.encode()

    def _s1_respond(self):
        self.b.accept_oob(self._pipe.transfer(self._oob))
        msg = self.run.store.await_addressed(self.authorizer.meta.device_id, 0)
        self.run.store.send_message(self.b.respond(msg))

    def _s1_finish(self):
        self.a.finish(self.run.store.await_message(self.a.reply_uuid, 0))

    # passcode protocol
    def _p_round1(self):
        msg, passcode = self.a.round1()
        self.secrets["P"] = passcode.encode("ascii")
        self.run.store.send_message(msg)

    def _p_b_round1(self):
        msg = self.run.store.await_addressed(self.authorizer.meta.device_id, 0)
        entered = self._pipe.transfer(self.secrets["P"]).decode("ascii")
        self.run.store.send_message(self.b.round1(msg, entered))

    def _p_round2(self):
        msg = self.a.round2(self.run.store.await_message(self.a.reply_uuid, 0))
        self.secrets["K_ses_A"] = self.a.session_key
        self.run.store.send_message(msg)

    def _p_b_round2(self):
        if self.b.session_key is not None:
            self.secrets["K_ses_B"] = self.b.session_key
        msg = self.run.store.await_message(self.b.reply_uuid, 0)
        self.run.store.send_message(self.b.round2(msg))

    def _p_finish(self):
        self.a.finish(self.run.store.await_message(self.a.reply_uuid, 0))

    def _register(self):
        store = self.run.store
        rk = self.a.root_key
        desc = dm.register_self(dm.load_descriptor(store), rk, self.newcomer.meta, self.newcomer.keypair, self.newcomer.auth_key)
        dm.save_descriptor(store, desc)
        got = dm.load_root_key(
            dm.load_descriptor(store), self.newcomer.meta.device_id, self.newcomer.keypair, self.newcomer.auth_key
        )
        self.registered = got == rk


_A_STEPS = {"_s1_start", "_s1_finish", "_p_round1", "_p_round2", "_p_finish", "_register"}


@dataclass
class SessionOutcome:
    label: str
    phases: dict[str, str]
    error: str | None
    failed_role: str | None
    root_key_a: bytes | None
    views: dict[str, dict]
    registered: bool

    @property
    def a_success(self) -> bool:
        return self.phases["A"] == "DONE"

    @property
    def b_success(self) -> bool:
        return self.phases["B"] == "RESPONDED"


@dataclass
class RunOutcome:
    protocol: Protocol
    strategy: Strategy
    seed: int
    variant: str | None
    domain_rk: bytes
    sessions: list[SessionOutcome]
    transcript: list[tuple[str, bytes]]
    knowledge: KnowledgeSet
    secrets: dict[str, bytes]
    oob_transfers: list[bytes] = field(default_factory=list)
    guess: str | None = None

    @property
    def main(self) -> SessionOutcome:
        return self.sessions[-1] if self.sessions[0].label == "prior" else self.sessions[0]

    @property
    def attacked(self) -> list[SessionOutcome]:
        return [s for s in self.sessions if s.label != "prior"]

    @property
    def phases(self) -> dict[str, str]:
        return self.main.phases

    @property
    def errors(self) -> dict[str, str | None]:
        return {role: (self.main.error if self.main.failed_role == role else None) for role in ("A", "B")}

    def rk_material_sent(self) -> bool:
        """Did an attacked session write a message that carries the root key?"""
        count = sum(1 for key, data in self.transcript if _msg_type(key, data) in RK_CARRIERS)
        return count > sum(1 for s in self.sessions if s.label == "prior")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.value,
            "strategy": self.strategy.value,
            "seed": self.seed,
            "variant": self.variant,
            "phases": {s.label: s.phases for s in self.sessions},
            "errors": {s.label: s.error for s in self.sessions},
            "success": all(s.a_success for s in self.attacked),
            "secrecy": assert_secrecy(self),
            "agreement": assert_agreement(self),
        }


def _msg_type(key: str, data: bytes) -> str | None:
    if not key.startswith("messages/"):
        return None
    try:
        return ProtocolMessage.from_bytes(data).msg_type
    except MalformedMessage:
        return None


# -- runs -------------------------------------------------------------------------

class _Run:
    def __init__(self, protocol: Protocol, strategy: Strategy, seed: int):
        self.protocol = protocol
        self.strategy = strategy
        pool = keypair_pool()
        keys = [pool[(seed + i) % len(pool)] for i in range(len(pool))]
        self.rng = random.Random(f"adversary:{protocol.value}:{strategy.value}:{seed}")
        self.adversary = Adversary(strategy, protocol, self.rng, keys[0])
        self.store = MemoryStorage(interceptor=self.adversary)
        meta_b = dm.DeviceMeta.new("authorizer", ["CAMERA", "KEYBOARD", "MICROPHONE"])
        _, self.rk, ak_b, _ = dm.init_domain(meta_b, self.store, keys[1])
        self.b1 = _Device(meta_b, keys[1], ak_b)
        self._spare = keys[2:]

    def device(self, name: str, caps: Iterable[str] = ("DISPLAY", "SPEAKER")) -> _Device:
        return _Device(dm.DeviceMeta.new(name, caps), self._spare.pop(0), cc.generate_key())

    def second_authorizer(self) -> _Device:
        dev = self.device("authorizer-2", ("CAMERA", "KEYBOARD"))
        desc = dm.register_self(dm.load_descriptor(self.store), self.rk, dev.meta, dev.keypair, dev.auth_key)
        dm.save_descriptor(self.store, desc)
        return dev


def _lockstep(sessions: list[_Session], adversary: Adversary, store: StorageChannel) -> None:
    while not all(s.done for s in sessions):
        for s in sessions:
            if not s.done:
                s.advance()
        adversary.flush(store)


def _outcome_of(s: _Session) -> SessionOutcome:
    return SessionOutcome(
        label=s.label,
        phases={"A": s.a.phase.name, "B": s.b.phase.name},
        error=type(s.error).__name__ if s.error else None,
        failed_role=s.failed_role,
        root_key_a=s.a.root_key,
        views={"A": dict(s.a.view), "B": dict(s.b.view)},
        registered=s.registered,
    )


def run_authorization(
    protocol: Protocol | str,
    strategy: Strategy | str,
    seed: int,
    *,
    variant: str | None = None,
) -> RunOutcome:
    protocol, strategy = Protocol(protocol), Strategy(strategy)
    if variant is not None and variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    with cc.seeded_randomness(seed):
        run = _Run(protocol, strategy, seed)
        adv = run.adversary
        sessions: list[_Session] = []
        if strategy is Strategy.REPLAY:
            prior = _Session(run, "prior", run.b1, run.device("old-device"), None)
            _lockstep([prior], adv, run.store)
            sessions.append(prior)
            adv.armed = True
        main = _Session(run, "main", run.b1, run.device("new-device"), variant)
        attacked = [main]
        if strategy is Strategy.CROSS_SESSION_SPLICE:
            attacked.append(_Session(run, "parallel", run.second_authorizer(), run.device("new-device-2"), variant))
        _lockstep(attacked, adv, run.store)
        sessions += attacked

    secrets = {"RK": run.rk}
    oob_transfers = []
    for s in sessions:
        for name, value in s.secrets.items():
            secrets[f"{s.label}.{name}"] = value
        oob_transfers += s.oob_transfers
    return RunOutcome(
        protocol=protocol,
        strategy=strategy,
        seed=seed,
        variant=variant,
        domain_rk=run.rk,
        sessions=[_outcome_of(s) for s in sessions],
        transcript=list(adv.transcript),
        knowledge=adv.knowledge,
        secrets=secrets,
        oob_transfers=oob_transfers,
        guess=adv.guess,
    )


def run_threaded(protocol: Protocol | str, seed: int, timeout: float = 10.0) -> RunOutcome:
    """PASSIVE run with each role on its own thread, using the live drivers."""
    protocol = Protocol(protocol)
    with cc.seeded_randomness(seed):
        run = _Run(protocol, Strategy.PASSIVE, seed)
        newcomer = run.device("new-device")
    store, b_id = run.store, run.b1.meta.device_id
    slot: list = []
    ready = threading.Event()
    result: dict = {}

    def show(value):
        slot.append(value)
        ready.set()

    def read():
        if not ready.wait(timeout):
            raise oob.PipeFailure("no OOB input")
        return slot[0]

    def authorizer():
        try:
            if protocol is Protocol.SINGLE:
                result["b"] = s1.run_authorizer(store, run.rk, b_id, read, timeout)
            else:
                result["b"] = srp.run_authorizer(store, run.rk, b_id, read, timeout)
        except OmniError as exc:
            result["b_error"] = exc

    t = threading.Thread(target=authorizer)
    t.start()
    try:
        if protocol is Protocol.SINGLE:
            rk_a = s1.run_new_device(store, newcomer.keypair, b_id, show, timeout)
            secrets = {"K_SAuth": slot[0].session_auth_key}
        else:
            rk_a = srp.run_new_device(store, b_id, show, timeout)
            secrets = {"P": slot[0].encode("ascii")}
        error = None
    except OmniError as exc:
        rk_a, secrets, error = None, {}, exc
    t.join()
    b = result.get("b")
    if b is not None and getattr(b, "session_key", None):
        secrets["K_ses_B"] = b.session_key
    session = SessionOutcome(
        label="main",
        phases={"A": "DONE" if rk_a is not None else "FAILED", "B": b.phase.name if b else "FAILED"},
        error=type(error).__name__ if error else None,
        failed_role="A" if error else None,
        root_key_a=rk_a,
        views={"A": {}, "B": {}},
        registered=False,
    )
    return RunOutcome(
        protocol, Strategy.PASSIVE, seed, None, run.rk, [session], list(run.adversary.transcript),
        run.adversary.knowledge, {"RK": run.rk, **{f"main.{k}": v for k, v in secrets.items()}},
    )


# -- claims -------------------------------------------------------------------------

def assert_secrecy(outcome: RunOutcome, secrets: Iterable[bytes] | None = None) -> bool:
    values = list(outcome.secrets.values()) if secrets is None else list(secrets)
    outcome.knowledge.close()
    return not any(v in outcome.knowledge for v in values)


def leaked(outcome: RunOutcome) -> list[str]:
    outcome.knowledge.close()
    return [name for name, v in outcome.secrets.items() if v in outcome.knowledge]


def assert_agreement(outcome: RunOutcome) -> bool:
    for s in outcome.sessions:
        if s.a_success and s.root_key_a != outcome.domain_rk:
            return False
        if s.a_success and s.b_success and s.views["A"] and s.views["A"] != s.views["B"]:
            return False
    return True


def assert_reachable(protocol: Protocol | str, seed: int = 0) -> bool:
    outcome = run_authorization(protocol, Strategy.PASSIVE, seed)
    return all(s.a_success and s.b_success and s.registered for s in outcome.sessions)


# -- sharing exposure ---------------------------------------------------------------

@dataclass
class SharingExposure:
    knowledge: KnowledgeSet
    shared_file_key: bytes
    dir_key: bytes
    root_key: bytes
    sibling_file_key: bytes
    peer_key: bytes


def run_sharing_exposure(seed: int, colluding_receiver: bool = True) -> SharingExposure:
    """Share one file and compute what the receiver (or a pure storage adversary) can derive."""
    with cc.seeded_randomness(seed):
        sharer_store, receiver_store = MemoryStorage(), MemoryStorage()
        rk = cc.generate_key()
        tree = kh.Hierarchy(sharer_store, rk)
        tree.write_file("projects/plan.txt", b"shared content", create_dirs=True)
        tree.write_file("projects/private.txt", b"sibling content")
        tree.write_file("top.txt", b"root content")
        sharer_id, receiver_id = cc.random_bytes(16), cc.random_bytes(16)
    pipe = oob.peering_pipe()
    x, y = sh.PeeringSession(sharer_store, sharer_id), sh.PeeringSession(receiver_store, receiver_id)
    pipe.send(x.hello(), "a")
    pipe.send(y.hello(), "b")
    x.receive_hello(pipe.receive("a", 1))
    y.receive_hello(pipe.receive("b", 1))
    pipe.send(x.link_message(), "a")
    pipe.send(y.link_message(), "b")
    ctx_x, ctx_y = x.receive_link(pipe.receive("a", 1)), y.receive_link(pipe.receive("b", 1))
    sh.share_file(ctx_x, "projects/plan.txt", tree)
    received = sh.scan_and_receive(ctx_y, receiver_store, sharer_store)

    knowledge = KnowledgeSet()
    for store in (sharer_store, receiver_store):
        for key, data in store.snapshot().items():
            knowledge.learn_object(key, data)
    if colluding_receiver:
        knowledge.learn(ctx_y.peer_key)
        for _, plaintext in received:
            knowledge.learn(plaintext)
    knowledge.close()
    return SharingExposure(
        knowledge=knowledge,
        shared_file_key=tree.file_key("projects/plan.txt"),
        dir_key=tree.dir_key("projects"),
        root_key=rk,
        sibling_file_key=tree.file_key("projects/private.txt"),
        peer_key=ctx_x.peer_key,
    )
