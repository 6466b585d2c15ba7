"""Typed failures raised across omnivault.

Every error carries a stable ``exit_code`` used by the CLI. Codes are
grouped by layer: 10-19 crypto, 20-29 key hierarchy, 30-39 domain,
40-49 storage, 50-59 out-of-band, 60-69 authorization protocols,
70-79 sharing, 80 harness.
"""

from __future__ import annotations


class OmniError(Exception):
    exit_code = 1


# crypto_core

class AuthFailure(OmniError):
    """AEAD tag did not verify."""

    exit_code = 10


class MalformedBlob(OmniError):
    exit_code = 11


class UnwrapFailure(OmniError):
    exit_code = 12


# key_hierarchy

class WrongKeyType(OmniError):
    exit_code = 20


class PathMismatch(OmniError):
    """Envelope is bound to a different directory path (moved or renamed)."""

    exit_code = 21


class BodyDigestMismatch(OmniError):
    exit_code = 22


class MissingEnvelope(OmniError):
    exit_code = 23

    def __init__(self, depth: int, path: str = ""):
        self.depth = depth
        self.path = path
        super().__init__(f"no envelope for directory {path!r} (depth {depth})")


class InvalidPath(OmniError, ValueError):
    exit_code = 24


# domain

class DomainExists(OmniError):
    exit_code = 30


class DuplicateDeviceId(OmniError):
    exit_code = 31


class RecordNotFound(OmniError):
    exit_code = 32


class MacMismatch(OmniError):
    exit_code = 33


class NoViableChannel(OmniError):
    exit_code = 34


class MalformedDescriptor(OmniError):
    exit_code = 35


class NoDomain(OmniError):
    exit_code = 36


# storage_channel

class NotFound(OmniError, KeyError):
    exit_code = 40

    def __str__(self) -> str:
        return Exception.__str__(self)


class TimedOut(OmniError):
    exit_code = 41


class MalformedMessage(OmniError):
    exit_code = 42


class InvalidLink(OmniError):
    exit_code = 43


class InvalidKey(OmniError, ValueError):
    exit_code = 44


# oob_channel

class BadLength(OmniError):
    exit_code = 50


class CapacityExceeded(OmniError):
    exit_code = 51


class PipeFailure(OmniError):
    exit_code = 52


# authorization protocols

class ProtocolStateError(OmniError):
    """A state machine was driven out of order or after it terminated."""

    exit_code = 60


class DigestMismatch(OmniError):
    """Public key received via storage does not match the OOB digest."""

    exit_code = 61


class DegenerateAlpha(OmniError):
    exit_code = 62


class DegenerateBeta(OmniError):
    exit_code = 63


class M1Mismatch(OmniError):
    exit_code = 64


class M2Mismatch(OmniError):
    exit_code = 65


class UnexpectedMessage(OmniError):
    exit_code = 66


# sharing

class BodyMismatch(AuthFailure):
    """Shared body failed to open under its file key (modified in storage)."""

    exit_code = 70


class UnknownPeer(OmniError):
    exit_code = 71


class UnknownShare(OmniError):
    exit_code = 72


# adversary harness

class ClaimViolated(OmniError):
    """A simulated attack broke secrecy or agreement."""

    exit_code = 80
