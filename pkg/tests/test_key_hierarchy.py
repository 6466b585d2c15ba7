import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnivault import crypto_core as cc
from omnivault import key_hierarchy as kh
from omnivault.errors import (
    AuthFailure,
    BodyDigestMismatch,
    InvalidPath,
    MalformedBlob,
    MissingEnvelope,
    OmniError,
    PathMismatch,
    WrongKeyType,
)
from omnivault.storage import MemoryStorage

P = kh.HierarchyPath.parse


class TestPaths:
    def test_parse_and_encode(self):
        assert P("d1/d2").components == ("d1", "d2")
        assert P("/d1/d2/").encode() == b"d1/d2"
        assert P("").is_root and P("/").is_root

    def test_case_sensitive(self):
        assert P("D1") != P("d1")
        assert cc.digest(P("D1").encode()) != cc.digest(P("d1").encode())

    @pytest.mark.parametrize("bad", [("a/b",), ("",), ("..",)])
    def test_rejects_bad_components(self, bad):
        with pytest.raises(InvalidPath):
            kh.HierarchyPath(bad)

    def test_utf8(self):
        assert P("répertoire/ファイル").encode() == "répertoire/ファイル".encode("utf-8")


class TestEnvelopes:
    def test_round_trip(self):
        rk, kd1 = cc.generate_key(), cc.generate_key()
        env = kh.wrap_dir_key(rk, "d1", kd1)
        assert kh.unwrap_dir_key(rk, "d1", env) == kd1
        assert len(env.to_bytes()) == 77

    def test_moved_between_siblings(self):
        rk, kd1 = cc.generate_key(), cc.generate_key()
        env = kh.wrap_dir_key(rk, "d1", kd1)
        with pytest.raises(PathMismatch):
            kh.unwrap_dir_key(rk, "d2", env)

    def test_wrong_parent_key(self):
        env = kh.wrap_dir_key(cc.generate_key(), "d1", cc.generate_key())
        with pytest.raises(AuthFailure):
            kh.unwrap_dir_key(cc.generate_key(), "d1", env)

    def test_filekey_tag_rejected(self):
        rk = cc.generate_key()
        forged = kh._seal_key_record(rk, kh.KeyTag.FILEKEY, cc.digest(b"d1"), cc.generate_key())
        with pytest.raises(WrongKeyType):
            kh.unwrap_dir_key(rk, "d1", forged.to_bytes())

    def test_truncated(self):
        env = kh.wrap_dir_key(cc.generate_key(), "d1", cc.generate_key()).to_bytes()
        with pytest.raises(MalformedBlob):
            kh.unwrap_dir_key(cc.generate_key(), "d1", env[:-1])

    def test_layout(self):
        rk, kd = cc.generate_key(), cc.generate_key()
        env = kh.wrap_dir_key(rk, "a/b", kd)
        record = cc.aead_open(rk, env.blob)
        assert record == b"\x01" + cc.digest(b"a/b") + kd

    def test_root_has_no_envelope(self):
        with pytest.raises(InvalidPath):
            kh.wrap_dir_key(cc.generate_key(), "", cc.generate_key())

    @settings(max_examples=200)
    @given(st.binary(min_size=16, max_size=16), st.binary(min_size=16, max_size=16))
    def test_parse_serialize_identity(self, parent, kd):
        env = kh.wrap_dir_key(parent, "x/y", kd)
        assert kh.Envelope.from_bytes(env.to_bytes()) == env


class TestFiles:
    @pytest.mark.parametrize("size", [0, 1, 1 << 20])
    def test_round_trip(self, size):
        kd = cc.generate_key()
        m = os.urandom(size)
        assert kh.decrypt_file(kd, kh.encrypt_file(kd, m).to_bytes()) == m

    def test_splice_body(self):
        kd = cc.generate_key()
        a, b = kh.encrypt_file(kd, b"file a"), kh.encrypt_file(kd, b"file b")
        spliced = kh.EncryptedFileBlob(a.key_header, b.body)
        with pytest.raises(BodyDigestMismatch):
            kh.decrypt_file(kd, spliced)

    def test_fresh_key_per_encryption(self):
        kd = cc.generate_key()
        a, b = kh.encrypt_file(kd, b"same"), kh.encrypt_file(kd, b"same")
        assert kh.open_file_key(kd, a) != kh.open_file_key(kd, b)
        assert a.body != b.body

    def test_header_digest_matches_body(self):
        kd = cc.generate_key()
        blob = kh.encrypt_file(kd, b"payload")
        record = cc.aead_open(kd, blob.key_header)
        assert record[0] == kh.KeyTag.FILEKEY
        assert record[1:33] == cc.digest(blob.body.to_bytes())
        assert len(blob.key_header.to_bytes()) == 77

    def test_dirkey_tag_in_header_rejected(self):
        kd = cc.generate_key()
        blob = kh.encrypt_file(kd, b"x")
        fk = kh.open_file_key(kd, blob)
        forged = kh.EncryptedFileBlob(
            kh._seal_key_record(kd, kh.KeyTag.DIRKEY, cc.digest(blob.body.to_bytes()), fk), blob.body
        )
        with pytest.raises(WrongKeyType):
            kh.decrypt_file(kd, forged)

    @settings(max_examples=200)
    @given(st.binary(max_size=2000))
    def test_parse_serialize_identity(self, m):
        blob = kh.encrypt_file(bytes(16), m)
        assert kh.EncryptedFileBlob.from_bytes(blob.to_bytes()) == blob

    def test_forgery_with_file_key_only(self):
        kd = cc.generate_key()
        blob = kh.encrypt_file(kd, b"original content")
        fk = kh.open_file_key(kd, blob)
        forged = kh.EncryptedFileBlob(blob.key_header, cc.aead_seal(fk, b"modified content"))
        with pytest.raises(BodyDigestMismatch):
            kh.decrypt_file(kd, forged)


@pytest.fixture
def tree():
    store = MemoryStorage()
    rk = cc.generate_key()
    h = kh.Hierarchy(store, rk)
    keys = {"d1": h.mkdir("d1")}
    keys["d1/d2"] = h.mkdir("d1/d2")
    return store, rk, h, keys


class TestResolve:
    def test_root_resolves_to_itself(self, tree):
        store, rk, _, _ = tree
        assert kh.resolve_key(rk, "", store) == rk

    def test_three_level_chain(self, tree):
        store, rk, _, keys = tree
        assert kh.resolve_key(rk, "d1", store) == keys["d1"]
        assert kh.resolve_key(rk, "d1/d2", store) == keys["d1/d2"]
        kd1 = kh.unwrap_dir_key(rk, "d1", store.get("d1/.omnishare.envelope"))
        assert kh.unwrap_dir_key(kd1, "d1/d2", store.get("d1/d2/.omnishare.envelope")) == keys["d1/d2"]

    def test_missing_mid_chain(self, tree):
        store, rk, _, _ = tree
        store.delete("d1/.omnishare.envelope")
        with pytest.raises(MissingEnvelope) as info:
            kh.resolve_key(rk, "d1/d2", store)
        assert info.value.depth == 1

    def test_error_carries_depth(self, tree):
        store, rk, _, _ = tree
        store.put("d1/d2/.omnishare.envelope", store.get("d1/.omnishare.envelope"))
        with pytest.raises(AuthFailure) as info:
            kh.resolve_key(rk, "d1/d2", store)
        assert info.value.depth == 2

    def test_renamed_directory_needs_rewrap(self, tree):
        store, rk, _, _ = tree
        store.put("renamed/.omnishare.envelope", store.get("d1/.omnishare.envelope"))
        with pytest.raises(PathMismatch):
            kh.resolve_key(rk, "renamed", store)


class TestHierarchy:
    def test_write_read_list(self, tree):
        store, rk, h, _ = tree
        h.write_file("d1/d2/f", b"secret")
        h.write_file("top.txt", b"t")
        assert h.read_file("d1/d2/f") == b"secret"
        assert h.listdir() == ["d1/", "top.txt"]
        assert h.listdir("d1") == ["d2/"]
        assert h.listdir("d1/d2") == ["f"]

    def test_other_device_with_same_root_key(self, tree):
        store, rk, h, _ = tree
        h.write_file("d1/f", b"shared across devices")
        assert kh.Hierarchy(store, rk).read_file("d1/f") == b"shared across devices"

    def test_write_into_missing_dir(self, tree):
        _, _, h, _ = tree
        with pytest.raises(MissingEnvelope):
            h.write_file("nope/f", b"x")

    def test_create_dirs(self, tree):
        _, _, h, _ = tree
        h.write_file("a/b/c/f", b"deep", create_dirs=True)
        assert h.read_file("a/b/c/f") == b"deep"

    @pytest.mark.parametrize("bad", ["messages/x", "peers/x", "omnishare.domain", "d1/.omnishare.envelope"])
    def test_reserved_names(self, tree, bad):
        _, _, h, _ = tree
        with pytest.raises(InvalidPath):
            h.write_file(bad, b"x")

    def test_empty_listing(self):
        h = kh.Hierarchy(MemoryStorage(), cc.generate_key())
        assert h.listdir() == []

    def test_selective_sync_subtree(self, tree):
        store, rk, h, keys = tree
        h.write_file("d1/d2/f", b"in subtree")
        h.write_file("top.txt", b"outside")
        partial = kh.Hierarchy(store, keys["d1"], base="d1")
        assert partial.read_file("d1/d2/f") == b"in subtree"
        assert partial.listdir("d1") == ["d2/"]
        with pytest.raises(InvalidPath):
            partial.read_file("top.txt")
        with pytest.raises(AuthFailure):
            kh.Hierarchy(store, keys["d1"]).read_file("top.txt")


def _read_chain(path):
    parts = path.split("/")
    envelopes = {"/".join(parts[:i] + [kh.ENVELOPE_NAME]) for i in range(1, len(parts))}
    return envelopes | {path}


def test_exhaustive_bit_flips_never_yield_wrong_plaintext():
    store = MemoryStorage()
    rk = cc.generate_key()
    h = kh.Hierarchy(store, rk)
    files = {"d1/d2/f": os.urandom(300), "d1/g": b"g" * 40, "top": b"t"}
    for path, data in files.items():
        h.write_file(path, data, create_dirs=True)
    originals = store.snapshot()
    assert sum(len(v) for v in originals.values()) <= 10 * 1024

    flips = 0
    for key, raw in originals.items():
        for bit in range(len(raw) * 8):
            mutated = bytearray(raw)
            mutated[bit // 8] ^= 1 << (bit % 8)
            store.raw_put(key, bytes(mutated))
            flips += 1
            for path, expected in files.items():
                if key in _read_chain(path):
                    with pytest.raises(OmniError):
                        kh.Hierarchy(store, rk).read_file(path)
                else:
                    assert kh.Hierarchy(store, rk).read_file(path) == expected
            store.raw_put(key, raw)
    assert flips == sum(len(v) * 8 for v in originals.values())
