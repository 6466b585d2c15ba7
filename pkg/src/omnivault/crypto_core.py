"""Cryptographic primitives with every parameter pinned.

AES-128-GCM (96-bit random nonce, 128-bit tag) for symmetric sealing,
SHA-256 and HMAC-SHA256, RSA-2048 with OAEP(SHA-256) for wrapping one
symmetric key to a device public key.

Randomness goes through :func:`random_bytes`, whose source can be swapped
for a seeded generator inside :func:`seeded_randomness`. That exists for
reproducible simulation runs only.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import hmac as _hmac
import os
import random
from dataclasses import dataclass
from typing import Callable, Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthFailure, MalformedBlob, UnwrapFailure

KEY_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
DIGEST_SIZE = 32
AEAD_OVERHEAD = NONCE_SIZE + TAG_SIZE
RSA_BITS = 2048
PASSCODE_DIGITS = 6

# AES-256 keys are accepted for the 256-bit peer key used in sharing.
_AEAD_KEY_SIZES = (16, 32)

_OAEP = padding.OAEP(
    mgf=padding.MGF1(algorithm=hashes.SHA256()),
    algorithm=hashes.SHA256(),
    label=None,
)

_source: contextvars.ContextVar[Callable[[int], bytes]] = contextvars.ContextVar(
    "omnivault_rng", default=os.urandom
)


# -- randomness -------------------------------------------------------------

def random_bytes(n: int) -> bytes:
    if n < 0:
        raise ValueError("n must be non-negative")
    return _source.get()(n)


def random_below(n: int) -> int:
    """Uniform integer in [0, n) by rejection sampling."""
    if n <= 0:
        raise ValueError("n must be positive")
    bits = n.bit_length()
    nbytes = (bits + 7) // 8
    shift = nbytes * 8 - bits
    while True:
        r = int.from_bytes(random_bytes(nbytes), "big") >> shift
        if r < n:
            return r


def random_passcode() -> str:
    return f"{random_below(10 ** PASSCODE_DIGITS):0{PASSCODE_DIGITS}d}"


def generate_key() -> bytes:
    return random_bytes(KEY_SIZE)


@contextlib.contextmanager
def seeded_randomness(seed: int) -> Iterator[random.Random]:
    """Route :func:`random_bytes` through ``random.Random(seed)``.

    Not cryptographically secure. Simulation and tests only.
    """
    rnd = random.Random(seed)
    token = _source.set(rnd.randbytes)
    try:
        yield rnd
    finally:
        _source.reset(token)


# -- AEAD ---------------------------------------------------------------------

@dataclass(frozen=True)
class AeadBlob:
    iv: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.iv + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "AeadBlob":
        if len(data) < AEAD_OVERHEAD:
            raise MalformedBlob(f"AEAD blob needs at least {AEAD_OVERHEAD} bytes, got {len(data)}")
        return cls(
            iv=bytes(data[:NONCE_SIZE]),
            ciphertext=bytes(data[NONCE_SIZE:-TAG_SIZE]),
            tag=bytes(data[-TAG_SIZE:]),
        )

    def __len__(self) -> int:
        return NONCE_SIZE + len(self.ciphertext) + TAG_SIZE


def _check_key(key: bytes) -> None:
    if len(key) not in _AEAD_KEY_SIZES:
        raise ValueError(f"AEAD key must be 16 or 32 bytes, got {len(key)}")


def _seal_with_nonce(key: bytes, nonce: bytes, plaintext: bytes, associated_data: bytes) -> AeadBlob:
    # Test hook for known-answer vectors; production callers go through aead_seal.
    _check_key(key)
    if len(nonce) != NONCE_SIZE:
        raise ValueError("nonce must be 12 bytes")
    sealed = AESGCM(key).encrypt(nonce, plaintext, associated_data)
    return AeadBlob(iv=nonce, ciphertext=sealed[:-TAG_SIZE], tag=sealed[-TAG_SIZE:])


def aead_seal(key: bytes, plaintext: bytes, associated_data: bytes = b"") -> AeadBlob:
    return _seal_with_nonce(key, random_bytes(NONCE_SIZE), plaintext, associated_data)


def aead_open(key: bytes, blob: AeadBlob | bytes, associated_data: bytes = b"") -> bytes:
    _check_key(key)
    if not isinstance(blob, AeadBlob):
        blob = AeadBlob.from_bytes(blob)
    try:
        return AESGCM(key).decrypt(blob.iv, blob.ciphertext + blob.tag, associated_data)
    except InvalidTag:
        raise AuthFailure("AEAD authentication failed") from None


# -- hashing ----------------------------------------------------------------

def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hmac_tag(key: bytes, data: bytes) -> bytes:
    return _hmac.new(key, data, hashlib.sha256).digest()


def hmac_verify(key: bytes, data: bytes, tag: bytes) -> bool:
    return _hmac.compare_digest(hmac_tag(key, data), tag)


# -- asymmetric wrapping --------------------------------------------------

@dataclass(frozen=True)
class DeviceKeypair:
    private: rsa.RSAPrivateKey

    @property
    def public(self) -> bytes:
        """DER SubjectPublicKeyInfo; this is the byte string that gets hashed and sent."""
        return self.private.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    def private_pem(self) -> bytes:
        return self.private.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    @classmethod
    def from_pem(cls, pem: bytes) -> "DeviceKeypair":
        key = serialization.load_pem_private_key(pem, password=None)
        if not isinstance(key, rsa.RSAPrivateKey):
            raise ValueError("device key must be RSA")
        return cls(key)


def asym_keygen() -> DeviceKeypair:
    return DeviceKeypair(rsa.generate_private_key(public_exponent=65537, key_size=RSA_BITS))


def load_public_key(der: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(der)
    except (ValueError, TypeError) as exc:
        raise UnwrapFailure(f"not a public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey) or key.key_size < RSA_BITS:
        raise UnwrapFailure("public key must be RSA with at least 2048 bits")
    return key


def asym_wrap(public_key: bytes | rsa.RSAPublicKey, key: bytes) -> bytes:
    if len(key) != KEY_SIZE:
        raise ValueError("asym_wrap carries exactly one 16-byte key")
    if isinstance(public_key, bytes):
        public_key = load_public_key(public_key)
    return public_key.encrypt(key, _OAEP)


def asym_unwrap(private: DeviceKeypair | rsa.RSAPrivateKey, wrapped: bytes) -> bytes:
    if isinstance(private, DeviceKeypair):
        private = private.private
    try:
        key = private.decrypt(wrapped, _OAEP)
    except ValueError:
        raise UnwrapFailure("could not unwrap key") from None
    if len(key) != KEY_SIZE:
        raise UnwrapFailure("unwrapped payload is not a 16-byte key")
    return key
