import os
import threading

import pytest

from omnivault import crypto_core as cc
from omnivault import key_hierarchy as kh
from omnivault import oob
from omnivault import sharing as sh
from omnivault.errors import AuthFailure, BodyMismatch, MissingEnvelope, OmniError, PipeFailure


class User:
    def __init__(self, tmp_path, name):
        from omnivault.storage import LocalDirStorage

        self.store = LocalDirStorage(tmp_path / name)
        self.id = cc.random_bytes(16)
        self.rk = cc.generate_key()
        self.tree = kh.Hierarchy(self.store, self.rk)


@pytest.fixture
def pair(tmp_path):
    alice, bob = User(tmp_path, "alice"), User(tmp_path, "bob")
    pipe = oob.peering_pipe()
    result = {}
    t = threading.Thread(target=lambda: result.setdefault("bob", sh.peer_establish(pipe, "b", bob.store, bob.id, 5)))
    t.start()
    result["alice"] = sh.peer_establish(pipe, "a", alice.store, alice.id, 5)
    t.join()
    return alice, bob, result["alice"], result["bob"]


class TestPeering:
    def test_agreement(self, pair):
        alice, bob, ca, cb = pair
        assert ca.peer_key == cb.peer_key and len(ca.peer_key) == 32
        assert ca.peer_id == bob.id and cb.peer_id == alice.id
        assert ca.peer_control_link == cb.own_control_link
        assert alice.store.exists(f"peers/{bob.id.hex()}/control")

    def test_sequential_is_fine(self, tmp_path):
        pipe = oob.peering_pipe()
        x, y = User(tmp_path, "x"), User(tmp_path, "y")
        sx, sy = sh.PeeringSession(x.store, x.id), sh.PeeringSession(y.store, y.id)
        pipe.send(sx.hello(), "a")
        pipe.send(sy.hello(), "b")
        sx.receive_hello(pipe.receive("a", 1))
        sy.receive_hello(pipe.receive("b", 1))
        assert sx.peer_key == sy.peer_key

    def test_fresh_keys(self, tmp_path):
        keys = set()
        for i in range(5):
            x, y = User(tmp_path, f"x{i}"), User(tmp_path, f"y{i}")
            sx, sy = sh.PeeringSession(x.store, x.id), sh.PeeringSession(y.store, y.id)
            sx.receive_hello(sy.hello())
            sy.receive_hello(sx.hello())
            assert sx.peer_key == sy.peer_key
            keys.add(sx.peer_key)
        assert len(keys) == 5

    def test_garbage_hello(self, tmp_path):
        with pytest.raises(PipeFailure):
            sh.PeeringSession(User(tmp_path, "x").store, bytes(16)).receive_hello(b"{}")

    def test_context_persists(self, pair):
        ctx = pair[2]
        assert sh.PeerContext.from_json(ctx.to_json()) == ctx


class TestSharing:
    def test_round_trip(self, pair):
        alice, bob, ca, cb = pair
        alice.tree.write_file("docs/report.txt", b"quarterly numbers", create_dirs=True)
        share_id = sh.share_file(ca, "docs/report.txt", alice.tree)
        got = sh.scan_and_receive(cb, bob.store, alice.store)
        assert got == [(share_id, b"quarterly numbers")]
        sh.store_received(bob.tree, "inbox.txt", got[0][1])
        assert bob.tree.read_file("inbox.txt") == b"quarterly numbers"
        assert bob.tree.file_key("inbox.txt") != alice.tree.file_key("docs/report.txt")

    def test_copy_is_verbatim(self, pair):
        alice, _, ca, _ = pair
        alice.tree.write_file("f", b"x" * 100)
        share_id = sh.share_file(ca, "f", alice.tree)
        assert alice.store.get(f"{ca.peer_dir}/{share_id.hex()}") == alice.store.get("f")

    def test_two_shares_and_idempotent_rescan(self, pair):
        alice, bob, ca, cb = pair
        alice.tree.write_file("a", b"A")
        ids = [sh.share_file(ca, "a", alice.tree) for _ in range(2)]
        assert ids[0] != ids[1]
        assert len(sh.scan_and_receive(cb, bob.store, alice.store)) == 2
        assert sh.scan_and_receive(cb, bob.store, alice.store) == []
        assert sh.acknowledged(bob.store, cb.control_key) == set(ids)

    def test_modified_copy_rejected(self, pair):
        alice, bob, ca, cb = pair
        alice.tree.write_file("f", b"original")
        share_id = sh.share_file(ca, "f", alice.tree)
        key = f"{ca.peer_dir}/{share_id.hex()}"
        blob = bytearray(alice.store.get(key))
        blob[-1] ^= 1
        alice.store.put(key, bytes(blob))
        with pytest.raises(BodyMismatch):
            sh.scan_and_receive(cb, bob.store, alice.store)
        assert sh.acknowledged(bob.store, cb.control_key) == set()

    def test_tampered_record(self, pair):
        alice, bob, ca, cb = pair
        alice.tree.write_file("f", b"data")
        sh.share_file(ca, "f", alice.tree)
        records = sh.decode_control(alice.store.get(ca.control_key))
        rec = records[0]
        wrapped = bytearray(rec.wrapped_key)
        wrapped[20] ^= 4
        forged = sh.ShareRecord(rec.share_id, bytes(wrapped), rec.link)
        alice.store.put(ca.control_key, sh.encode_control([forged]))
        with pytest.raises(AuthFailure):
            sh.scan_and_receive(cb, bob.store, alice.store)

    def test_store_into_missing_dir(self, pair):
        _, bob, _, _ = pair
        with pytest.raises(MissingEnvelope):
            sh.store_received(bob.tree, "nope/x", b"1")

    def test_reencryption_terminates_share(self, pair):
        alice, bob, ca, cb = pair
        alice.tree.write_file("f", b"v1")
        sh.share_file(ca, "f", alice.tree)
        record = sh.list_shares(cb, alice.store)[0]
        old_key, _ = sh.open_share(cb, record, alice.store)
        alice.tree.write_file("f", b"v2")
        with pytest.raises(AuthFailure):
            kh.decrypt_body(old_key, alice.store.get("f"))


def test_receiver_cannot_forge_accepted_blob(pair):
    alice, bob, ca, cb = pair
    alice.tree.write_file("d/f", os.urandom(64), create_dirs=True)
    sh.share_file(ca, "d/f", alice.tree)
    record = sh.list_shares(cb, alice.store)[0]
    file_key, _ = sh.open_share(cb, record, alice.store)
    shared = kh.EncryptedFileBlob.from_bytes(alice.store.fetch_link(record.link))
    kd = alice.tree.dir_key("d")
    accepted = 0
    for i in range(1000):
        if i % 2:
            forged = kh.EncryptedFileBlob(shared.key_header, cc.aead_seal(file_key, os.urandom(64)))
        else:
            header = bytearray(shared.key_header.to_bytes())
            header[i % len(header)] ^= 1 << (i % 8)
            forged = kh.EncryptedFileBlob(
                cc.AeadBlob.from_bytes(bytes(header)), cc.aead_seal(file_key, os.urandom(64))
            )
        try:
            kh.decrypt_file(kd, forged)
            accepted += 1
        except OmniError:
            pass
    assert accepted == 0
