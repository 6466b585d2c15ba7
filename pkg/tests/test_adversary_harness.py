import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnivault import adversary_harness as ah
from omnivault import auth_pake as srp
from omnivault import crypto_core as cc
from omnivault import key_hierarchy as kh
from omnivault.adversary_harness import KnowledgeSet, Protocol, Strategy

ATTACKS = [s for s in Strategy if s is not Strategy.PASSIVE]


class TestKnowledgeSet:
    def test_sealed_needs_key(self):
        key, secret = cc.generate_key(), cc.generate_key()
        k = KnowledgeSet()
        k.learn_sealed(cc.aead_seal(key, secret).to_bytes())
        assert secret not in k.close()
        k.learn(key)
        assert secret in k.close()

    def test_associated_data_hint(self):
        key, secret, ad = cc.generate_key(), cc.generate_key(), b"bound"
        k = KnowledgeSet()
        k.learn(key)
        k.learn_sealed(cc.aead_seal(key, secret, ad).to_bytes())
        assert secret not in k.close()
        k.learn_sealed(cc.aead_seal(key, secret, ad).to_bytes(), [ad])
        assert secret in k.close()

    def test_asym_needs_private_key(self, keypair, other_keypair):
        secret = cc.generate_key()
        k = KnowledgeSet()
        k.learn(cc.asym_wrap(keypair.public, secret))
        k.learn_private_key(other_keypair)
        assert secret not in k.close()
        k.learn_private_key(keypair)
        assert secret in k.close()

    def test_key_record_split_and_chain(self):
        root, child, grandchild = (cc.generate_key() for _ in range(3))
        k = KnowledgeSet()
        k.learn_object("a/.omnishare.envelope", kh.wrap_dir_key(root, "a", child).to_bytes())
        k.learn_object("a/b/.omnishare.envelope", kh.wrap_dir_key(child, "a/b", grandchild).to_bytes())
        assert child not in k.close()
        k.learn(root)
        k.close()
        assert child in k and grandchild in k
        assert child in k.atoms

    def test_hash_is_one_level(self):
        k = KnowledgeSet()
        k.learn(b"seed")
        k.close()
        assert cc.digest(b"seed") in k.atoms
        assert cc.digest(cc.digest(b"seed")) not in k.atoms

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.binary(min_size=1, max_size=40), max_size=8), st.binary(min_size=1, max_size=40))
    def test_monotone(self, first, extra):
        k = KnowledgeSet()
        for item in first:
            k.learn(item)
        before = set(k.close().atoms)
        k.learn(extra)
        assert before <= k.close().atoms


class TestHonestRuns:
    @pytest.mark.parametrize("protocol", list(Protocol))
    def test_reachable(self, protocol):
        assert ah.assert_reachable(protocol)

    @pytest.mark.parametrize("protocol", list(Protocol))
    def test_threaded_passive(self, protocol):
        outcome = ah.run_threaded(protocol, seed=5)
        assert outcome.main.a_success and outcome.main.root_key_a == outcome.domain_rk
        assert ah.assert_secrecy(outcome)

    def test_passive_view_agreement(self):
        outcome = ah.run_authorization(Protocol.PAKE, Strategy.PASSIVE, 2)
        assert outcome.main.views["A"] == outcome.main.views["B"]
        assert ah.assert_agreement(outcome)

    @pytest.mark.parametrize("protocol", list(Protocol))
    def test_deterministic_outcome(self, protocol):
        runs = [ah.run_authorization(protocol, Strategy.TAMPER_RANDOM, 11) for _ in range(2)]
        assert runs[0].to_dict() == runs[1].to_dict()

    def test_oob_not_in_transcript(self):
        outcome = ah.run_authorization(Protocol.SINGLE, Strategy.PASSIVE, 0)
        (payload,) = outcome.oob_transfers
        assert all(payload[32:] not in data for _, data in outcome.transcript)


@pytest.mark.parametrize("protocol", list(Protocol))
@pytest.mark.parametrize("strategy", ATTACKS)
def test_attacks_fail_closed(protocol, strategy):
    for seed in range(8):
        outcome = ah.run_authorization(protocol, strategy, seed)
        assert ah.leaked(outcome) == []
        assert ah.assert_agreement(outcome)
        for session in outcome.attacked:
            assert not session.a_success
            assert session.error is not None


def test_splice_uses_two_authorizers():
    outcome = ah.run_authorization(Protocol.SINGLE, Strategy.CROSS_SESSION_SPLICE, 0)
    assert [s.label for s in outcome.sessions] == ["main", "parallel"]


def test_replay_has_honest_prior():
    outcome = ah.run_authorization(Protocol.PAKE, Strategy.REPLAY, 0)
    assert outcome.sessions[0].label == "prior" and outcome.sessions[0].a_success


def test_passcode_guess_stops_at_m1():
    outcome = ah.run_authorization(Protocol.PAKE, Strategy.PASSCODE_GUESS, 4)
    assert outcome.main.error == "M1Mismatch" and outcome.main.failed_role == "B"
    assert not outcome.rk_material_sent()
    assert outcome.guess is not None


class TestCanaries:
    """Each weakened variant must be caught, proving the checks have teeth."""

    def test_missing_digest_check_leaks_root_key(self):
        outcome = ah.run_authorization(Protocol.SINGLE, Strategy.PK_SUBSTITUTE, 0, variant="no_digest_check")
        assert "RK" in ah.leaked(outcome)

    def test_missing_mac_check_breaks_agreement(self):
        outcome = ah.run_authorization(Protocol.SINGLE, Strategy.RK_INJECT, 0, variant="no_mac_check")
        assert outcome.main.a_success
        assert not ah.assert_agreement(outcome)

    def test_missing_alpha_guard_leaks_root_key(self):
        leaks = 0
        for seed in range(8):
            outcome = ah.run_authorization(Protocol.PAKE, Strategy.PK_SUBSTITUTE, seed, variant="no_alpha_guard")
            leaks += "RK" in ah.leaked(outcome)
        assert leaks > 0

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            ah.run_authorization(Protocol.SINGLE, Strategy.PASSIVE, 0, variant="nope")

    def test_guard_holds_on_zero_alpha(self):
        for seed in range(8):
            outcome = ah.run_authorization(Protocol.PAKE, Strategy.PK_SUBSTITUTE, seed)
            assert outcome.main.error in ("DegenerateAlpha", "M1Mismatch")


class TestSharingExposure:
    def test_colluding_receiver(self):
        e = ah.run_sharing_exposure(3, colluding_receiver=True)
        assert e.shared_file_key in e.knowledge
        assert e.dir_key not in e.knowledge
        assert e.root_key not in e.knowledge
        assert e.sibling_file_key not in e.knowledge

    def test_storage_only_adversary(self):
        e = ah.run_sharing_exposure(3, colluding_receiver=False)
        assert e.peer_key not in e.knowledge
        assert e.shared_file_key not in e.knowledge


def test_toy_group_is_never_used_by_harness():
    assert ah.run_authorization(Protocol.PAKE, Strategy.PASSIVE, 1).main.views["A"]["alpha"].bit_length() > 1000
    assert srp.RFC5054_2048.test_only is False
