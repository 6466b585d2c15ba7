"""Passcode-based device authorization over SRP-6a.

The new device A (client) displays a one-time six-digit passcode that the
user types into the authorizer B (server). Both derive a 128-bit session
key from the SRP shared value; B releases the root key, sealed under that
key, only after A proves knowledge of it.

Message flow (each message names the file of the expected reply)::

    A -> B  srp.alpha   {alpha}
    B -> A  srp.beta_s  {beta, s}
    A -> B  srp.m1      {M1}
    B -> A  srp.m2_rk   {M2, C}        C = seal(K_ses, RK, ad=M2)

Integers are hashed as big-endian bytes left-padded to the width of N.
"""

from __future__ import annotations

import enum
import hmac
from dataclasses import dataclass
from typing import Callable

from . import crypto_core as cc
from .errors import (
    DegenerateAlpha,
    DegenerateBeta,
    M1Mismatch,
    M2Mismatch,
    MalformedMessage,
)
from .statemachine import DEFAULT_TIMEOUT, ProtocolMachine, expect, step
from .storage import ProtocolMessage, StorageChannel, new_uuid

try:
    from gmpy2 import mpz, powmod as _powmod

    def powmod(base: int, exp: int, mod: int) -> int:
        return int(_powmod(mpz(base), mpz(exp), mpz(mod)))

except ImportError:  # pragma: no cover
    def powmod(base: int, exp: int, mod: int) -> int:
        return pow(base, exp, mod)


MSG_ALPHA = "srp.alpha"
MSG_BETA = "srp.beta_s"
MSG_M1 = "srp.m1"
MSG_M2 = "srp.m2_rk"

SALT_SIZE = 16
EXPONENT_BITS = 256


def _h_int(data: bytes) -> int:
    return int.from_bytes(cc.digest(data), "big")


@dataclass(frozen=True)
class SrpGroup:
    N: int
    g: int
    test_only: bool = False

    @property
    def width(self) -> int:
        return (self.N.bit_length() + 7) // 8

    def pad(self, n: int) -> bytes:
        return n.to_bytes(self.width, "big")

    # Hash-derived integers. Tests subclass to pin these.
    def k(self) -> int:
        return _h_int(self.pad(self.N) + self.pad(self.g))

    def x(self, salt: bytes, passcode: str) -> int:
        return _h_int(salt + passcode.encode("ascii"))

    def u(self, alpha: int, beta: int) -> int:
        return _h_int(self.pad(alpha) + self.pad(beta))

    def random_exponent(self) -> int:
        if self.test_only:
            return 1 + cc.random_below(self.N - 2)
        return 1 + cc.random_below((1 << EXPONENT_BITS) - 1)

    def session_key(self, sigma: int) -> bytes:
        return cc.digest(self.pad(sigma))[: cc.KEY_SIZE]

    def client_proof(self, alpha: int, beta: int, k_ses: bytes) -> bytes:
        return cc.digest(self.pad(alpha) + self.pad(beta) + k_ses)

    def server_proof(self, alpha: int, m1: bytes, k_ses: bytes) -> bytes:
        return cc.digest(self.pad(alpha) + m1 + k_ses)


RFC5054_2048 = SrpGroup(
    N=int(
        "AC6BDB41324A9A9BF166DE5E1389582FAF72B6651987EE07FC3192943DB56050A37329CBB4A099ED8193E0757767A13D"
        "D52312AB4B03310DCD7F48A9DA04FD50E8083969EDB767B0CF6095179A163AB3661A05FBD5FAAAE82918A9962F0B93B8"
        "55F97993EC975EEAA80D740ADBF4FF747359D041D5C33EA71D281E446B14773BCA97B43A23FB801676BD207A436C6481"
        "F1D2B9078717461A5B9D32E688F87748544523B524B0D57D5EA77A2775D2ECFA032CFBDBF52FB3786160279004E57AE6"
        "AF874E7303CE53299CCC041C7BC308D82A5698F3A8D0C38271AE35F8E9DBFBB694B5C803D89F7AE435DE236D525F5475"
        "9B65E372FCD68EF20FA7111F9E4AFF73",
        16,
    ),
    g=2,
)
TOY_23 = SrpGroup(23, 5, test_only=True)
TOY_47 = SrpGroup(47, 5, test_only=True)


# -- algebra ----------------------------------------------------------------

def verifier(group: SrpGroup, x: int) -> int:
    return powmod(group.g, x, group.N)


def server_public(group: SrpGroup, b: int, v: int, k: int) -> int:
    return (k * v + powmod(group.g, b, group.N)) % group.N


def client_premaster(group: SrpGroup, a: int, x: int, u: int, beta: int, k: int) -> int:
    base = (beta - k * powmod(group.g, x, group.N)) % group.N
    return powmod(base, a + u * x, group.N)


def server_premaster(group: SrpGroup, b: int, v: int, u: int, alpha: int) -> int:
    return powmod(alpha * powmod(v, u, group.N) % group.N, b, group.N)


def _check_group(group: SrpGroup, test_mode: bool) -> None:
    if group.test_only and not test_mode:
        raise ValueError("toy SRP groups are for tests only")


def _check_passcode(passcode: str) -> str:
    if len(passcode) != cc.PASSCODE_DIGITS or not passcode.isascii() or not passcode.isdigit():
        raise ValueError("passcode must be six decimal digits")
    return passcode


# -- state machines ---------------------------------------------------------

class ClientPhase(enum.Enum):
    INIT = "init"
    SENT_ALPHA = "sent_alpha"
    SENT_M1 = "sent_m1"
    DONE = "done"
    FAILED = "failed"


class ServerPhase(enum.Enum):
    AWAIT_ALPHA = "await_alpha"
    AWAIT_M1 = "await_m1"
    RESPONDED = "responded"
    FAILED = "failed"


class SrpNewDevice(ProtocolMachine):
    """Device A: shows the passcode, receives the root key."""

    Phase = ClientPhase
    FAILED = ClientPhase.FAILED

    def __init__(
        self,
        authorizer_id: bytes,
        group: SrpGroup = RFC5054_2048,
        *,
        test_mode: bool = False,
        _a: int | None = None,
    ):
        _check_group(group, test_mode)
        super().__init__(ClientPhase.INIT)
        self.group = group
        self.authorizer_id = authorizer_id
        self._a = _a
        self.alpha: int | None = None
        self.passcode: str | None = None
        self.session_key: bytes | None = None
        self.root_key: bytes | None = None
        self._m1: bytes | None = None
        self._reply: str | None = None

    @step("INIT")
    def round1(self) -> tuple[ProtocolMessage, str]:
        n = self.group.N
        while True:
            a = self._a if self._a is not None else self.group.random_exponent()
            alpha = powmod(self.group.g, a, n)
            if alpha not in (0, 1, n - 1) or self._a is not None:
                break
        self._a, self.alpha = a, alpha
        self.passcode = cc.random_passcode()
        self._reply = new_uuid()
        self.view["alpha"] = alpha
        self.phase = ClientPhase.SENT_ALPHA
        msg = ProtocolMessage(
            MSG_ALPHA, {"alpha": alpha}, reply_uuid=self._reply, target_device_id=self.authorizer_id
        )
        return msg, self.passcode

    @step("SENT_ALPHA")
    def round2(self, beta_msg: ProtocolMessage) -> ProtocolMessage:
        expect(beta_msg, MSG_BETA, self._reply)
        beta, salt = beta_msg.field("beta", int), beta_msg.field("s", bytes)
        if beta_msg.reply_uuid is None:
            raise MalformedMessage("srp.beta_s names no reply file")
        g = self.group
        if beta % g.N == 0:
            raise DegenerateBeta("beta is congruent to zero")
        beta %= g.N
        x = g.x(salt, self.passcode)
        u = g.u(self.alpha, beta)
        sigma = client_premaster(g, self._a, x, u, beta, g.k())
        self.session_key = g.session_key(sigma)
        self._m1 = g.client_proof(self.alpha, beta, self.session_key)
        self.view.update(beta=beta, s=salt, M1=self._m1)
        self._reply = new_uuid()
        self.phase = ClientPhase.SENT_M1
        return ProtocolMessage(MSG_M1, {"M1": self._m1}, uuid=beta_msg.reply_uuid, reply_uuid=self._reply)

    @step("SENT_M1")
    def finish(self, msg: ProtocolMessage) -> bytes:
        expect(msg, MSG_M2, self._reply)
        m2, sealed = msg.field("M2", bytes), msg.field("C", bytes)
        if not hmac.compare_digest(m2, self.group.server_proof(self.alpha, self._m1, self.session_key)):
            raise M2Mismatch("server proof does not match this session")
        rk = cc.aead_open(self.session_key, sealed, m2)
        self.view["M2"] = m2
        self.root_key = rk
        self.phase = ClientPhase.DONE
        self._forget()
        return rk

    @property
    def reply_uuid(self) -> str | None:
        return self._reply

    def _forget(self) -> None:
        # The passcode is one-shot: success or failure both retire it.
        self.passcode = None
        self._a = None


class SrpAuthorizer(ProtocolMachine):
    """Device B: verifies the passcode proof and releases the root key."""

    Phase = ServerPhase
    FAILED = ServerPhase.FAILED

    def __init__(
        self,
        root_key: bytes,
        group: SrpGroup = RFC5054_2048,
        *,
        test_mode: bool = False,
        _b: int | None = None,
        _salt: bytes | None = None,
    ):
        _check_group(group, test_mode)
        super().__init__(ServerPhase.AWAIT_ALPHA)
        self.group = group
        self.root_key = root_key
        self._b = _b
        self._salt = _salt
        self.alpha: int | None = None
        self.beta: int | None = None
        self.session_key: bytes | None = None
        self._expected_m1: bytes | None = None
        self._reply: str | None = None

    @step("AWAIT_ALPHA")
    def round1(self, alpha_msg: ProtocolMessage, entered_passcode: str) -> ProtocolMessage:
        expect(alpha_msg, MSG_ALPHA)
        alpha = alpha_msg.field("alpha", int)
        if alpha_msg.reply_uuid is None:
            raise MalformedMessage("srp.alpha names no reply file")
        g = self.group
        self._check_alpha(alpha)
        alpha %= g.N
        passcode = _check_passcode(entered_passcode)
        salt = self._salt if self._salt is not None else cc.random_bytes(SALT_SIZE)
        k = g.k()
        v = verifier(g, g.x(salt, passcode))
        while True:
            b = self._b if self._b is not None else g.random_exponent()
            beta = server_public(g, b, v, k)
            if beta != 0 or self._b is not None:
                break
        u = g.u(alpha, beta)
        self.session_key = g.session_key(server_premaster(g, b, v, u, alpha))
        self._expected_m1 = g.client_proof(alpha, beta, self.session_key)
        self.alpha, self.beta = alpha, beta
        self.view.update(alpha=alpha, beta=beta, s=salt)
        self._b = None
        self._reply = new_uuid()
        self.phase = ServerPhase.AWAIT_M1
        return ProtocolMessage(
            MSG_BETA, {"beta": beta, "s": salt}, uuid=alpha_msg.reply_uuid, reply_uuid=self._reply
        )

    def _check_alpha(self, alpha: int) -> None:
        if alpha % self.group.N == 0:
            raise DegenerateAlpha("alpha is congruent to zero")

    def _check_m1(self, m1: bytes) -> None:
        if not hmac.compare_digest(m1, self._expected_m1):
            raise M1Mismatch("client proof rejected: wrong passcode or altered exchange")

    @step("AWAIT_M1")
    def round2(self, m1_msg: ProtocolMessage) -> ProtocolMessage:
        expect(m1_msg, MSG_M1, self._reply)
        m1 = m1_msg.field("M1", bytes)
        self._check_m1(m1)
        m2 = self.group.server_proof(self.alpha, m1, self.session_key)
        sealed = cc.aead_seal(self.session_key, self.root_key, m2).to_bytes()
        self.view.update(M1=m1, M2=m2)
        self.phase = ServerPhase.RESPONDED
        return ProtocolMessage(MSG_M2, {"M2": m2, "C": sealed}, uuid=m1_msg.reply_uuid)

    @property
    def reply_uuid(self) -> str | None:
        return self._reply

    def _forget(self) -> None:
        self._expected_m1 = None


# -- drivers over a live channel ------------------------------------------

def run_new_device(
    store: StorageChannel,
    authorizer_id: bytes,
    show_passcode: Callable[[str], None],
    timeout: float = DEFAULT_TIMEOUT,
    group: SrpGroup = RFC5054_2048,
) -> bytes:
    machine = SrpNewDevice(authorizer_id, group)
    msg, passcode = machine.round1()
    store.send_message(msg)
    show_passcode(passcode)
    beta_msg = store.await_message(msg.reply_uuid, timeout)
    m1_msg = machine.round2(beta_msg)
    store.send_message(m1_msg)
    return machine.finish(store.await_message(m1_msg.reply_uuid, timeout))


def run_authorizer(
    store: StorageChannel,
    root_key: bytes,
    own_id: bytes,
    read_passcode: Callable[[], str],
    timeout: float = DEFAULT_TIMEOUT,
    first: ProtocolMessage | None = None,
    group: SrpGroup = RFC5054_2048,
) -> SrpAuthorizer:
    machine = SrpAuthorizer(root_key, group)
    alpha_msg = first or store.await_addressed(own_id, timeout)
    beta_msg = machine.round1(alpha_msg, read_passcode())
    store.send_message(beta_msg)
    store.send_message(machine.round2(store.await_message(beta_msg.reply_uuid, timeout)))
    return machine
