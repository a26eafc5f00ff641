import hashlib
import random

import pytest

from fdd.ledger import (
    Action,
    Behavior,
    Block,
    Consortium,
    IntegrityViolation,
    LedgerTransaction,
    ReputationSnapshot,
    SignedTx,
    SubmissionRefused,
    TxRejected,
    WorldState,
    apply_acl,
    create_tx,
    decode_chain,
    encode_chain,
    load_chain,
    merkle_root,
    replay_world_state,
    save_chain,
    verify_chain,
)
from fdd.ledger.codec import DecodeError
from fdd.ledger.consortium import EPOCH_MS
from fdd.ledger.state import SKEW_MS
from fdd.sim import NetworkModel, Partition


def ads(i) -> bytes:
    return hashlib.sha256(f"payload-{i}".encode()).digest()


@pytest.fixture
def net():
    c = Consortium(seed=11)
    for name in ("alice", "bob"):
        c.register(name)
    return c


def commit_all(c, envs, limit=30_000):
    recs = [c.submit(e) for e in envs]
    c.wait(recs, limit)
    return recs


# -- transactions -------------------------------------------------------------

def test_create_tx_examples():
    tx = create_tx("a", [("b", "access")], "store", ads(1), b"ptr", timestamp=5)
    assert tx.action is Action.STORE and ("a", "owner") in tx.acl
    assert tx.encode() == create_tx("a", [("b", "access")], "store", ads(1), b"ptr", timestamp=5).encode()
    assert LedgerTransaction.decode(tx.encode()) == tx
    with pytest.raises(TxRejected):
        create_tx("a", [], "access", ads(1), timestamp=1)
    with pytest.raises(TxRejected):
        create_tx("a", [], "delete", ads(1), timestamp=1)
    with pytest.raises(TxRejected):
        create_tx("a", [], "store", b"short", timestamp=1)
    with pytest.raises(TxRejected):
        create_tx("a", [("b", "root")], "store", ads(1), timestamp=1)
    with pytest.raises(TxRejected):
        create_tx("a", [], "store", ads(1), reputation=(1.5, 0, False), timestamp=1)
    assert create_tx("a", [("a", "access")], "access", ads(1), timestamp=1).action is Action.ACCESS


def test_acl_order_is_canonical():
    t1 = create_tx("a", [("c", "access"), ("b", "update")], "store", ads(1), timestamp=1)
    t2 = create_tx("a", [("b", "update"), ("c", "access"), ("c", "access")], "store", ads(1), timestamp=1)
    assert t1.encode() == t2.encode()


def test_tx_decode_is_strict():
    raw = create_tx("a", [], "store", ads(1), b"p", timestamp=1).encode()
    for bad in [raw[:-1], raw + b"\0", b"XXXX" + raw[4:]]:
        with pytest.raises(DecodeError):
            LedgerTransaction.decode(bad)


def test_submission_refused_for_unregistered_or_quarantined(net):
    st = net.peers[0].state
    with pytest.raises(SubmissionRefused):
        create_tx("mallory", [], "store", ads(1), timestamp=1, state=st)
    low = ReputationSnapshot(0.1, 90.0, True)
    recs = commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(1), reputation=low)])
    assert recs[0].status == "committed"
    st = net.peers[0].state
    assert st.devices["alice"].quarantined
    with pytest.raises(SubmissionRefused):
        create_tx("alice", [], "store", ads(2), timestamp=1, state=st)


# -- verification flags ---------------------------------------------------------

def test_v1_identity_binding(net):
    v = net.peers[0].verifier
    st = net.peers[0].state
    alice, bob = net.keys["alice"].pk, net.keys["bob"].pk
    assert v.verify_identity(st, "alice", alice)
    assert not v.verify_identity(st, "alice", bob)
    assert not v.verify_identity(st, "carol", alice)
    assert not v.verify_identity(WorldState(), "alice", alice)


def test_v2_signature_and_freshness(net):
    v = net.peers[0].verifier
    st = net.peers[0].state
    now = net.now_ms()
    env = net.data_tx(net.keys["alice"], "store", ads(3))
    assert v.check(st, env, now).passes()
    tx = env.tx
    mutated = [
        LedgerTransaction(tx.id, tx.timestamp + 1, tx.action, tx.ads, tx.acl, tx.payload_pointer, tx.reputation),
        LedgerTransaction(tx.id, tx.timestamp, tx.action, ads(4), tx.acl, tx.payload_pointer, tx.reputation),
        LedgerTransaction(tx.id, tx.timestamp, tx.action, tx.ads, tx.acl + (("zed", "access"),), tx.payload_pointer, tx.reputation),
        LedgerTransaction(tx.id, tx.timestamp, tx.action, tx.ads, tx.acl, b"other", tx.reputation),
        LedgerTransaction(tx.id, tx.timestamp, tx.action, tx.ads, tx.acl, tx.payload_pointer, ReputationSnapshot(0.9)),
    ]
    for m in mutated:
        f = v.check(st, SignedTx(m.encode(), env.sig, env.pk), now)
        assert f.V1 and not f.V2 and not f.passes()
    old = net.data_tx(net.keys["alice"], "store", ads(5), timestamp=now - SKEW_MS - 1)
    f = v.check(st, old, now)
    assert not f.V2 and f.reason == "stale"
    edge = net.data_tx(net.keys["alice"], "store", ads(6), timestamp=now - SKEW_MS)
    assert v.check(st, edge, now).V2


def test_pk_substitution_fails_v1(net):
    v = net.peers[0].verifier
    env = net.data_tx(net.keys["alice"], "store", ads(7))
    swapped = SignedTx(env.tx_bytes, env.sig, net.keys["bob"].pk.encode(net.public.group))
    f = v.check(net.peers[0].state, swapped, net.now_ms())
    assert not f.V1 and not f.V2


def test_stale_tx_excluded_and_logged(net):
    env = net.data_tx(net.keys["alice"], "store", ads(8), timestamp=net.now_ms() - 40_000)
    (rec,) = commit_all(net, [env])
    assert rec.status == "rejected" and rec.flags.reason == "stale"
    assert all(env.digest not in p.state.tx_index for p in net.peers)


def test_and_versus_or_flags():
    for strict_or, expect in [(False, "rejected"), (True, "committed")]:
        c = Consortium(seed=5, or_flags=strict_or)
        keys, _ = c.register("dev")
        good = c.data_tx(keys, "store", ads(1))
        forged = SignedTx(good.tx_bytes, bytes(len(good.sig)), good.pk)
        (rec,) = commit_all(c, [forged])
        assert rec.status == expect
        assert rec.flags.V1 and not rec.flags.V2


# -- ordering ------------------------------------------------------------------

def test_ten_valid_txs_make_one_block(net):
    h0 = net.peers[0].height
    envs = [net.data_tx(net.keys["alice"], "store", ads(100 + i)) for i in range(10)]
    recs = commit_all(net, envs)
    assert all(r.status == "committed" for r in recs)
    assert {r.height for r in recs} == {h0 + 1}
    for p in net.peers:
        assert p.height == h0 + 1
        assert verify_chain(p.chain, net.genesis).encode() == p.state.encode()
    blk = net.peers[0].chain[-1]
    assert len(blk.txs) == 10 and len(blk.tx_pointers) == 10
    assert blk.qc.verify(net.public, 1, blk.height, blk.digest) and len(blk.qc.signers) >= 3


def test_healthy_network_confirms_all_peers(net):
    (rec,) = commit_all(net, [net.data_tx(net.keys["bob"], "store", ads(9))])
    assert rec.status == "committed" and rec.delivered == 4 and rec.attempts == 1


def test_one_peer_down_still_commits(net):
    net.net.crash(2)
    (rec,) = commit_all(net, [net.data_tx(net.keys["bob"], "store", ads(10))])
    assert rec.status == "committed" and rec.delivered == 3


def test_lagging_peer_catches_up(net):
    net.net.crash(3)
    commit_all(net, [net.data_tx(net.keys["bob"], "store", ads(20 + i)) for i in range(3)])
    net.settle(100)
    commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(30))])
    assert net.peers[3].height < net.peers[0].height
    net.net.recover(3)
    commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(31))])
    net.settle(2_000)
    assert net.peers[3].height == net.peers[0].height
    assert net.peers[3].state.encode() == net.peers[0].state.encode()


def test_all_peers_down_times_out_after_five_attempts(net):
    for i in range(4):
        net.net.crash(i)
    (rec,) = commit_all(net, [net.data_tx(net.keys["bob"], "store", ads(11))])
    assert rec.status == "submission-timeout" and rec.attempts == 5


def test_partition_then_retry_succeeds():
    severed = frozenset(frozenset(("client", i)) for i in range(4))
    model = NetworkModel(partitions=(Partition(0.0, 400.0, severed),))
    c = Consortium(seed=2, model=model)
    keys, env = c.registration_tx("dev")
    rec = c.submit(env)
    c.wait([rec])
    assert rec.status == "committed" and rec.attempts > 1


def test_byzantine_counts():
    for beh, ok in [({0: Behavior.SILENT}, True), ({0: Behavior.EQUIVOCATE}, True),
                    ({1: Behavior.SILENT, 2: Behavior.SILENT}, False)]:
        c = Consortium(seed=3, behaviors=beh)
        keys, env = c.registration_tx("dev")
        rec = c.submit(env)
        c.wait([rec], 20_000)
        assert (rec.status == "committed") is ok
        assert not c.divergence()
        if not ok:
            assert all(p.height == 0 for p in c.peers)


def test_equivocating_leader_is_safe_over_seeds():
    view_changes = 0
    for seed in range(12):
        c = Consortium(seed=seed, behaviors={0: Behavior.EQUIVOCATE}, model=NetworkModel(2.0, 3.0))
        keys = [c.registration_tx(f"d{i}") for i in range(3)]
        commit_all(c, [e for _, e in keys])
        envs = [c.data_tx(k, "store", ads(seed * 100 + j)) for j, (k, _) in enumerate(keys)]
        recs = commit_all(c, envs)
        c.settle(2_000)
        assert all(r.status == "committed" for r in recs)
        assert not c.divergence()
        view_changes += sum(p.view_changes for p in c.honest)
        for p in c.honest:
            assert verify_chain(p.chain, c.genesis).encode() == p.state.encode()
    assert view_changes > 0  # the adversary did force some view changes


# -- ACL -----------------------------------------------------------------------

def test_acl_examples(net):
    envs = [net.data_tx(net.keys["alice"], "store", ads(40), acl=[("bob", "access")]),
            net.data_tx(net.keys["alice"], "store", ads(41))]
    commit_all(net, envs)
    st = net.peers[0].state
    assert apply_acl(st, ads(40), "bob").permit
    assert apply_acl(st, ads(40), "alice").permit
    d = apply_acl(st, ads(41), "bob")
    assert not d.permit and d.reason == "deny"
    assert apply_acl(st, ads(99), "bob").reason == "not-found"


def test_access_tx_records_decision(net):
    commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(50))])
    env = net.data_tx(net.keys["bob"], "access", ads(50), acl=[("bob", "access")])
    (rec,) = commit_all(net, [env])
    assert rec.status == "committed"
    assert net.peers[0].state.events[-1][1] == "access-deny"


def test_update_requires_owner_or_update_permission(net):
    commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(60), acl=[("bob", "access")])])
    commit_all(net, [net.data_tx(net.keys["bob"], "update", ads(60), pointer=b"evil")])
    st = net.peers[0].state
    assert st.records[ads(60)].version == 1 and st.events[-1][1] == "rejected-acl"
    commit_all(net, [net.data_tx(net.keys["alice"], "update", ads(60), pointer=b"v2")])
    assert net.peers[0].state.records[ads(60)].pointer == b"v2"


def test_acl_soundness_random():
    rng = random.Random(4)
    ids = [f"u{i}" for i in range(6)]
    for _ in range(300):
        acl = [(rng.choice(ids), rng.choice(["access", "update", "owner"])) for _ in range(rng.randrange(0, 5))]
        owner = rng.choice(ids)
        tx = create_tx(owner, acl, "store", ads(0), timestamp=0)
        st = WorldState()
        from fdd.ledger.state import AdsEntry

        st.records[ads(0)] = AdsEntry(owner, tx.acl, b"", 1, tx.digest)
        for r in ids:
            granted = apply_acl(st, ads(0), r).permit
            listed = r == owner or any(i == r and p in ("access", "owner") for i, p in tx.acl)
            assert granted == listed


# -- chain integrity -------------------------------------------------------------

def test_empty_and_genesis_replay():
    c = Consortium(seed=1)
    assert replay_world_state([], c.genesis).encode() == WorldState().encode()
    assert replay_world_state(c.peers[0].chain, c.genesis).encode() == WorldState().encode()


def test_merkle_root_examples():
    h = lambda b: hashlib.sha256(b).digest()
    a, b, c = b"a", b"b", b"c"
    la, lb, lc = h(b"\0a"), h(b"\0b"), h(b"\0c")
    assert merkle_root([a]) == la
    assert merkle_root([a, b]) == h(b"\1" + la + lb)
    assert merkle_root([a, b, c]) == h(b"\1" + h(b"\1" + la + lb) + lc)
    assert merkle_root([a, b, c]) != merkle_root([a, b, c, c])


def build_chain(seed=7, blocks=6):
    c = Consortium(seed=seed)
    keys = []
    for i in range(2):
        k, rec = c.register(f"d{i}")
        keys.append(k)
    for b in range(blocks - 2):
        commit_all(c, [c.data_tx(keys[b % 2], "store", ads(1000 * seed + b), pointer=b"x")])
    return c


def test_replay_equals_live_after_many_blocks():
    c = Consortium(seed=8)
    keys = [c.register(f"d{i}")[0] for i in range(3)]
    for b in range(100):
        rep = ReputationSnapshot(round(0.2 + 0.6 * (b % 7) / 6, 3), float(b % 100), b % 5 == 0)
        commit_all(c, [c.data_tx(keys[b % 3], "store", ads(b), reputation=rep)])
    assert c.peers[0].height >= 100
    for p in c.peers:
        assert replay_world_state(p.chain, c.genesis).encode() == p.state.encode()


def block_spans(chain):
    """(start, end, height) byte ranges of each block inside the encoded chain."""
    spans, pos = [], 4
    for b in chain:
        n = 4 + len(b.encode())
        spans.append((pos, pos + n, b.height))
        pos += n
    return spans


def detect(raw, genesis):
    try:
        verify_chain(decode_chain(raw), genesis)
    except IntegrityViolation as exc:
        return exc.height
    return None


def test_tamper_detected_at_correct_height(tmp_path):
    c = build_chain()
    chain = c.peers[0].chain
    raw = encode_chain(chain)
    save_chain(chain, tmp_path / "chain.bin")
    assert [b.digest for b in load_chain(tmp_path / "chain.bin")] == [b.digest for b in chain]
    assert detect(raw, c.genesis) is None
    rng = random.Random(1)
    spans = block_spans(chain)
    for start, end, h in spans:
        positions = rng.sample(range(start, end), min(60, end - start))
        for pos in positions:
            bad = bytearray(raw)
            bad[pos] ^= 1 << rng.randrange(8)
            assert detect(bytes(bad), c.genesis) == h, (pos, h)
    bad = bytearray(raw)
    bad[0] ^= 1
    assert detect(bytes(bad), c.genesis) == 0


def test_block_decode_roundtrip_and_json():
    c = build_chain(seed=9, blocks=3)
    blk = c.peers[0].chain[-1]
    assert Block.decode(blk.encode()) == blk
    js = blk.to_json()
    assert js["height"] == blk.height and js["hash"] == blk.digest.hex()


def test_genesis_json_roundtrip():
    from fdd.ledger import GenesisConfig

    c = Consortium(seed=1)
    again = GenesisConfig.from_json(c.genesis.to_json())
    assert again.encode() == c.genesis.encode()
    with pytest.raises(ValueError):
        GenesisConfig(c.system, c.genesis.cosigner_publics[:3], f=1)


def test_peer_reads(net):
    commit_all(net, [net.data_tx(net.keys["alice"], "store", ads(70))])
    got = {}
    q1 = net.client.query(1, "record", ads(70), lambda rep, t: got.setdefault(rep.qid, rep))
    q2 = net.client.query(1, "device", "alice", lambda rep, t: got.setdefault(rep.qid, rep))
    q3 = net.client.query(1, "record", ads(71), lambda rep, t: got.setdefault(rep.qid, rep))
    net.settle(100)
    assert [got[q].found for q in (q1, q2, q3)] == [True, True, False]
    assert got[q1].value.owner == "alice"
    assert EPOCH_MS <= net.now_ms()
