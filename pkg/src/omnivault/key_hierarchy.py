"""Directory-keyed encryption tree.

Each directory below the root has a 16-byte directory key, sealed under
its parent's key in a ``.omnishare.envelope`` object together with a key
type tag and the SHA-256 of the directory's path. Each file is sealed
under a fresh file key; the file key, tagged and bound to the digest of
the sealed body, is sealed under the directory key and prepended to the
body. The root directory has no envelope: the root key plays that role.

Layouts (``seal`` = iv || ciphertext || tag)::

    envelope    = seal(parent_key, DIRKEY  || H(path)      || dir_key)   77 bytes
    file object = seal(dir_key,    FILEKEY || H(body)      || file_key)  77 bytes
                  || seal(file_key, plaintext)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import crypto_core as cc
from .crypto_core import AeadBlob
from .errors import (
    BodyDigestMismatch,
    InvalidPath,
    MalformedBlob,
    MissingEnvelope,
    NotFound,
    OmniError,
    PathMismatch,
    WrongKeyType,
)
from .storage import RESERVED_TOP, StorageChannel

ENVELOPE_NAME = ".omnishare.envelope"
DESCRIPTOR_NAME = "omnishare.domain"

KEY_RECORD_SIZE = 1 + cc.DIGEST_SIZE + cc.KEY_SIZE
SEALED_KEY_SIZE = KEY_RECORD_SIZE + cc.AEAD_OVERHEAD


class KeyTag(enum.IntEnum):
    DIRKEY = 0x01
    FILEKEY = 0x02


@dataclass(frozen=True)
class HierarchyPath:
    components: tuple[str, ...] = ()

    def __post_init__(self):
        for c in self.components:
            if not c or "/" in c or c in (".", "..") or "\x00" in c:
                raise InvalidPath(f"illegal path component {c!r}")

    @classmethod
    def parse(cls, text: str | "HierarchyPath") -> "HierarchyPath":
        if isinstance(text, HierarchyPath):
            return text
        stripped = text.strip("/")
        return cls(tuple(stripped.split("/")) if stripped else ())

    def encode(self) -> bytes:
        return "/".join(self.components).encode("utf-8")

    def __str__(self) -> str:
        return "/".join(self.components)

    def __truediv__(self, name: str) -> "HierarchyPath":
        return HierarchyPath(self.components + (name,))

    @property
    def is_root(self) -> bool:
        return not self.components

    @property
    def parent(self) -> "HierarchyPath":
        if self.is_root:
            raise InvalidPath("root has no parent")
        return HierarchyPath(self.components[:-1])

    @property
    def name(self) -> str:
        if self.is_root:
            raise InvalidPath("root has no name")
        return self.components[-1]

    def storage_key(self, name: str | None = None) -> str:
        parts = self.components + ((name,) if name else ())
        return "/".join(parts)

    def envelope_key(self) -> str:
        return self.storage_key(ENVELOPE_NAME)

    def startswith(self, other: "HierarchyPath") -> bool:
        return self.components[: len(other.components)] == other.components


def _seal_key_record(wrapping_key: bytes, tag: int, bound_digest: bytes, key: bytes) -> AeadBlob:
    # Tests use this directly to forge records with a mismatched tag.
    return cc.aead_seal(wrapping_key, bytes([tag]) + bound_digest + key)


def _open_key_record(wrapping_key: bytes, blob: AeadBlob, expected: KeyTag) -> tuple[bytes, bytes]:
    record = cc.aead_open(wrapping_key, blob)
    if len(record) != KEY_RECORD_SIZE:
        raise MalformedBlob("key record has the wrong length")
    if record[0] != expected:
        raise WrongKeyType(f"expected {expected.name}, found tag 0x{record[0]:02x}")
    return record[1 : 1 + cc.DIGEST_SIZE], record[1 + cc.DIGEST_SIZE :]


@dataclass(frozen=True)
class Envelope:
    blob: AeadBlob

    def to_bytes(self) -> bytes:
        return self.blob.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        if len(data) != SEALED_KEY_SIZE:
            raise MalformedBlob(f"envelope must be {SEALED_KEY_SIZE} bytes, got {len(data)}")
        return cls(AeadBlob.from_bytes(data))


@dataclass(frozen=True)
class EncryptedFileBlob:
    key_header: AeadBlob
    body: AeadBlob

    def to_bytes(self) -> bytes:
        return self.key_header.to_bytes() + self.body.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedFileBlob":
        if len(data) < SEALED_KEY_SIZE + cc.AEAD_OVERHEAD:
            raise MalformedBlob("encrypted file is too short")
        return cls(
            key_header=AeadBlob.from_bytes(data[:SEALED_KEY_SIZE]),
            body=AeadBlob.from_bytes(data[SEALED_KEY_SIZE:]),
        )


def _dir_path(path: HierarchyPath | str) -> HierarchyPath:
    return HierarchyPath.parse(path)


def wrap_dir_key(parent_key: bytes, dir_path: HierarchyPath | str, dir_key: bytes) -> Envelope:
    dir_path = _dir_path(dir_path)
    if dir_path.is_root:
        raise InvalidPath("the root directory has no envelope")
    if len(dir_key) != cc.KEY_SIZE:
        raise ValueError("directory key must be 16 bytes")
    return Envelope(_seal_key_record(parent_key, KeyTag.DIRKEY, cc.digest(dir_path.encode()), dir_key))


def unwrap_dir_key(parent_key: bytes, dir_path: HierarchyPath | str, envelope: Envelope | bytes) -> bytes:
    if not isinstance(envelope, Envelope):
        envelope = Envelope.from_bytes(envelope)
    bound, key = _open_key_record(parent_key, envelope.blob, KeyTag.DIRKEY)
    dir_path = _dir_path(dir_path)
    if bound != cc.digest(dir_path.encode()):
        raise PathMismatch(f"envelope is not bound to {str(dir_path)!r}; re-wrap required after a move or rename")
    return key


def encrypt_file(dir_key: bytes, plaintext: bytes) -> EncryptedFileBlob:
    file_key = cc.generate_key()
    body = cc.aead_seal(file_key, plaintext)
    header = _seal_key_record(dir_key, KeyTag.FILEKEY, cc.digest(body.to_bytes()), file_key)
    return EncryptedFileBlob(header, body)


def open_file_key(dir_key: bytes, blob: EncryptedFileBlob | bytes) -> bytes:
    """Verify the key header against the body and return the file key."""
    if not isinstance(blob, EncryptedFileBlob):
        blob = EncryptedFileBlob.from_bytes(blob)
    bound, file_key = _open_key_record(dir_key, blob.key_header, KeyTag.FILEKEY)
    if bound != cc.digest(blob.body.to_bytes()):
        raise BodyDigestMismatch("file body does not match the digest in its key header")
    return file_key


def decrypt_file(dir_key: bytes, blob: EncryptedFileBlob | bytes) -> bytes:
    if not isinstance(blob, EncryptedFileBlob):
        blob = EncryptedFileBlob.from_bytes(blob)
    return cc.aead_open(open_file_key(dir_key, blob), blob.body)


def decrypt_body(file_key: bytes, blob: EncryptedFileBlob | bytes) -> bytes:
    """Open only the body. This is all a share receiver can check."""
    if not isinstance(blob, EncryptedFileBlob):
        blob = EncryptedFileBlob.from_bytes(blob)
    return cc.aead_open(file_key, blob.body)


def resolve_key(
    root_key: bytes,
    path: HierarchyPath | str,
    store: StorageChannel,
    *,
    base: HierarchyPath | str = HierarchyPath(),
) -> bytes:
    """Chain-unwrap from ``root_key`` (the key of ``base``) down to ``path``.

    ``depth`` on raised errors counts path components of the directory
    whose envelope failed, so ``d1`` is depth 1.
    """
    path, base = _dir_path(path), _dir_path(base)
    if not path.startswith(base):
        raise InvalidPath(f"{path} is outside {base}")
    key = root_key
    for depth in range(len(base.components) + 1, len(path.components) + 1):
        current = HierarchyPath(path.components[:depth])
        try:
            raw = store.get(current.envelope_key())
        except NotFound:
            raise MissingEnvelope(depth, str(current)) from None
        try:
            key = unwrap_dir_key(key, current, raw)
        except OmniError as exc:
            exc.depth = depth
            raise
    return key


class Hierarchy:
    """An encrypted tree in ``store`` rooted at ``base``, opened with ``key``.

    ``base`` is the root for a full member. A device given only a directory
    key (selective synchronization) opens the subtree at that directory.
    """

    def __init__(self, store: StorageChannel, key: bytes, base: HierarchyPath | str = HierarchyPath()):
        self.store = store
        self.key = key
        self.base = HierarchyPath.parse(base)

    def _check_name(self, path: HierarchyPath) -> None:
        if not path.startswith(self.base):
            raise InvalidPath(f"{path} is outside {self.base or '/'}")
        if path.components and path.components[0] in RESERVED_TOP:
            raise InvalidPath(f"top-level name {path.components[0]!r} is reserved")
        if path.components[:1] == (DESCRIPTOR_NAME,) or ENVELOPE_NAME in path.components:
            raise InvalidPath("name collides with omnivault metadata")

    def dir_key(self, path: HierarchyPath | str) -> bytes:
        return resolve_key(self.key, path, self.store, base=self.base)

    def mkdir(self, path: HierarchyPath | str, *, parents: bool = True) -> bytes:
        path = HierarchyPath.parse(path)
        self._check_name(path)
        key = self.key
        for depth in range(len(self.base.components) + 1, len(path.components) + 1):
            current = HierarchyPath(path.components[:depth])
            if self.store.exists(current.envelope_key()):
                key = unwrap_dir_key(key, current, self.store.get(current.envelope_key()))
                continue
            if not parents and depth != len(path.components):
                raise MissingEnvelope(depth, str(current))
            new_key = cc.generate_key()
            self.store.put(current.envelope_key(), wrap_dir_key(key, current, new_key).to_bytes())
            key = new_key
        return key

    def write_file(self, path: HierarchyPath | str, plaintext: bytes, *, create_dirs: bool = False) -> None:
        path = HierarchyPath.parse(path)
        self._check_name(path)
        if path == self.base:
            raise InvalidPath("a file needs a name")
        kd = self.mkdir(path.parent) if create_dirs else self.dir_key(path.parent)
        self.store.put(path.storage_key(), encrypt_file(kd, plaintext).to_bytes())

    def read_blob(self, path: HierarchyPath | str) -> bytes:
        path = HierarchyPath.parse(path)
        self._check_name(path)
        return self.store.get(path.storage_key())

    def read_file(self, path: HierarchyPath | str) -> bytes:
        path = HierarchyPath.parse(path)
        return decrypt_file(self.dir_key(path.parent), self.read_blob(path))

    def file_key(self, path: HierarchyPath | str) -> bytes:
        path = HierarchyPath.parse(path)
        return open_file_key(self.dir_key(path.parent), self.read_blob(path))

    def listdir(self, path: HierarchyPath | str = HierarchyPath()) -> list[str]:
        """Immediate children; directories carry a trailing slash."""
        path = HierarchyPath.parse(path)
        self._check_name(path)
        if not path.is_root and not self.store.exists(path.envelope_key()):
            raise MissingEnvelope(len(path.components), str(path))
        prefix = path.storage_key()
        keys = self.store.list(prefix) if prefix else self.store.list()
        depth = len(path.components)
        entries = set()
        for key in keys:
            parts = key.split("/")
            if depth == 0 and parts[0] in RESERVED_TOP + (DESCRIPTOR_NAME,):
                continue
            rest = parts[depth:]
            if rest == [ENVELOPE_NAME]:
                continue
            if len(rest) == 1:
                entries.add(rest[0])
            elif self.store.exists("/".join(parts[: depth + 1] + [ENVELOPE_NAME])):
                entries.add(rest[0] + "/")
        return sorted(entries)

    def subtree(self, path: HierarchyPath | str) -> "Hierarchy":
        path = HierarchyPath.parse(path)
        return Hierarchy(self.store, self.dir_key(path), path)
