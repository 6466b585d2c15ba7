import re

import gmpy2
import pytest

import srp_oracle
from omnivault import auth_pake as srp
from omnivault import crypto_core as cc
from omnivault.errors import (
    AuthFailure,
    DegenerateAlpha,
    DegenerateBeta,
    M1Mismatch,
    M2Mismatch,
    ProtocolStateError,
)
from omnivault.storage import MemoryStorage, ProtocolMessage

B_ID = bytes(16)


class PinnedGroup(srp.SrpGroup):
    """Toy group whose hash-derived k, x, u are fixed by the test."""

    def __init__(self, N, g, k, x, u):
        super().__init__(N, g, test_only=True)
        object.__setattr__(self, "_pins", (k, x, u))

    def k(self):
        return self._pins[0]

    def x(self, salt, passcode):
        return self._pins[1]

    def u(self, alpha, beta):
        return self._pins[2]


class TestGroups:
    def test_production_group_is_safe_prime(self):
        N = srp.RFC5054_2048.N
        assert N.bit_length() == 2048
        assert gmpy2.is_prime(N, 40) and gmpy2.is_prime((N - 1) // 2, 40)

    @pytest.mark.parametrize("group", [srp.TOY_23, srp.TOY_47])
    def test_toy_generator_is_primitive(self, group):
        srp_oracle.power_table(group.N, group.g)

    def test_toy_groups_need_test_mode(self):
        with pytest.raises(ValueError):
            srp.SrpNewDevice(B_ID, srp.TOY_23)
        with pytest.raises(ValueError):
            srp.SrpAuthorizer(cc.generate_key(), srp.TOY_23)

    def test_padding(self):
        assert srp.TOY_23.pad(8) == b"\x08"
        assert len(srp.RFC5054_2048.pad(2)) == 256


class TestWorkedExample:
    def test_oracle(self):
        assert srp_oracle.expected(23, 5, a=6, b=3, x=4, u=2, k=7) == (8, 4, 15, 12)

    def test_algebra(self):
        g = srp.TOY_23
        assert srp.powmod(5, 6, 23) == 8
        v = srp.verifier(g, 4)
        assert v == 4
        beta = srp.server_public(g, 3, v, 7)
        assert beta == 15
        assert srp.client_premaster(g, 6, 4, 2, beta, 7) == 12
        assert srp.server_premaster(g, 3, v, 2, 8) == 12

    def test_state_machines(self):
        group = PinnedGroup(23, 5, k=7, x=4, u=2)
        rk = cc.generate_key()
        a = srp.SrpNewDevice(B_ID, group, test_mode=True, _a=6)
        b = srp.SrpAuthorizer(rk, group, test_mode=True, _b=3)
        alpha_msg, passcode = a.round1()
        assert alpha_msg.payload["alpha"] == 8
        beta_msg = b.round1(alpha_msg, passcode)
        assert beta_msg.payload["beta"] == 15
        m1_msg = a.round2(beta_msg)
        assert a.session_key == b.session_key == group.session_key(12)
        assert a.finish(b.round2(m1_msg)) == rk


@pytest.mark.parametrize("N", [23, 47])
def test_exhaustive_toy_identity(N):
    group = srp.SrpGroup(N, 5, test_only=True)
    k = 7
    count = 0
    for a, b, x, u, alpha, v, beta, sigma in srp_oracle.sweep(N, 5, k):
        assert srp.powmod(5, a, N) == alpha
        assert srp.verifier(group, x) == v
        assert srp.server_public(group, b, v, k) == beta
        assert srp.client_premaster(group, a, x, u, beta, k) == sigma
        assert srp.server_premaster(group, b, v, u, alpha) == sigma
        count += 1
    assert count == (N - 2) ** 3 * 5


def run(rk=None, group=srp.RFC5054_2048, passcode_override=None, **kw):
    rk = rk or cc.generate_key()
    a = srp.SrpNewDevice(B_ID, group, **kw)
    b = srp.SrpAuthorizer(rk, group, **kw)
    alpha_msg, passcode = a.round1()
    beta_msg = b.round1(alpha_msg, passcode_override or passcode)
    m1_msg = a.round2(beta_msg)
    return rk, a, b, m1_msg


class TestProtocol:
    def test_end_to_end(self):
        rk, a, b, m1 = run()
        assert a.finish(b.round2(m1)) == rk
        assert a.phase is srp.ClientPhase.DONE and b.phase is srp.ServerPhase.RESPONDED
        assert a.view == b.view

    def test_alpha_never_trivial_toy(self):
        for _ in range(10_000):
            a = srp.SrpNewDevice(B_ID, srp.TOY_47, test_mode=True)
            msg, _ = a.round1()
            assert msg.payload["alpha"] % 47 not in (0, 1, 46)

    def test_alpha_never_trivial_production(self):
        N = srp.RFC5054_2048.N
        for _ in range(200):
            msg, _ = srp.SrpNewDevice(B_ID).round1()
            assert msg.payload["alpha"] % N not in (0, 1, N - 1)

    def test_passcode_fresh_with_leading_zeros(self):
        codes = [srp.SrpNewDevice(B_ID).round1()[1] for _ in range(300)]
        assert all(re.fullmatch(r"[0-9]{6}", c) for c in codes)
        assert len(set(codes)) > 290
        assert any(c.startswith("0") for c in codes)

    @pytest.mark.parametrize("alpha", [0, srp.RFC5054_2048.N, 2 * srp.RFC5054_2048.N])
    def test_degenerate_alpha(self, alpha):
        b = srp.SrpAuthorizer(cc.generate_key())
        msg = ProtocolMessage(srp.MSG_ALPHA, {"alpha": alpha}, reply_uuid="00000000-0000-4000-8000-000000000000")
        with pytest.raises(DegenerateAlpha):
            b.round1(msg, "123456")
        assert b.failed

    def test_degenerate_beta(self):
        a = srp.SrpNewDevice(B_ID)
        msg, _ = a.round1()
        bad = ProtocolMessage(srp.MSG_BETA, {"beta": 0, "s": bytes(16)}, uuid=msg.reply_uuid, reply_uuid=msg.reply_uuid)
        with pytest.raises(DegenerateBeta):
            a.round2(bad)
        assert a.passcode is None

    def test_salt_fresh_16_bytes(self):
        salts = set()
        for _ in range(20):
            _, _, b, _ = run()
            salt = b.view["s"]
            assert len(salt) == 16
            salts.add(salt)
        assert len(salts) == 20

    def test_wrong_passcode_changes_premaster(self):
        g = srp.RFC5054_2048
        k = g.k()
        for _ in range(1000):
            a, b = g.random_exponent(), g.random_exponent()
            x, x_wrong = g.x(cc.random_bytes(16), "000001"), g.x(cc.random_bytes(16), "000002")
            alpha = srp.powmod(g.g, a, g.N)
            v_wrong = srp.verifier(g, x_wrong)
            beta = srp.server_public(g, b, v_wrong, k)
            u = g.u(alpha, beta)
            assert srp.client_premaster(g, a, x, u, beta, k) != srp.server_premaster(g, b, v_wrong, u, alpha)

    def test_wrong_passcode_rejected_at_m1(self):
        rk = cc.generate_key()
        for i in range(100):
            a = srp.SrpNewDevice(B_ID)
            b = srp.SrpAuthorizer(rk)
            alpha_msg, passcode = a.round1()
            guess = f"{(int(passcode) + 1 + i) % 10**6:06d}"
            m1 = a.round2(b.round1(alpha_msg, guess))
            with pytest.raises(M1Mismatch):
                b.round2(m1)
            assert b.failed and b.session_key is not None

    def test_tampered_m1(self):
        _, _, b, m1 = run()
        bits = bytearray(m1.payload["M1"])
        bits[0] ^= 0x80
        with pytest.raises(M1Mismatch):
            b.round2(ProtocolMessage(m1.msg_type, {"M1": bytes(bits)}, m1.uuid, m1.reply_uuid))

    def test_rk_sealed_under_other_key(self):
        _, a, b, m1 = run()
        resp = b.round2(m1)
        forged_c = cc.aead_seal(cc.generate_key(), cc.generate_key(), resp.payload["M2"]).to_bytes()
        with pytest.raises(AuthFailure):
            a.finish(ProtocolMessage(resp.msg_type, dict(resp.payload, C=forged_c), resp.uuid))

    def test_m2_from_parallel_session(self):
        _, a1, b1, m1_1 = run()
        _, a2, b2, m1_2 = run()
        r1, r2 = b1.round2(m1_1), b2.round2(m1_2)
        with pytest.raises(M2Mismatch):
            a1.finish(ProtocolMessage(r1.msg_type, r2.payload, r1.uuid))

    def test_passcode_is_one_shot(self):
        rk, a, b, m1 = run()
        a.finish(b.round2(m1))
        assert a.passcode is None
        with pytest.raises(ProtocolStateError):
            a.round1()

    def test_finish_before_round2(self):
        a = srp.SrpNewDevice(B_ID)
        with pytest.raises(ProtocolStateError):
            a.finish(ProtocolMessage(srp.MSG_M2, {}))


def test_drivers_leave_no_passcode_in_storage():
    import threading

    store = MemoryStorage()
    written = []
    base_put = store._write

    def recording_write(key, data):
        written.append(data)
        base_put(key, data)

    store._write = recording_write
    rk = cc.generate_key()
    shown, ready = [], threading.Event()

    def show(code):
        shown.append(code)
        ready.set()

    def read():
        ready.wait(5)
        return shown[0]

    t = threading.Thread(target=srp.run_authorizer, args=(store, rk, B_ID, read, 5))
    t.start()
    assert srp.run_new_device(store, B_ID, show, timeout=5) == rk
    t.join()
    assert len(written) == 4
    assert all(shown[0].encode() not in blob for blob in written)
    assert store.list("messages") == []
