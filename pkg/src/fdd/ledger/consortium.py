"""Client-side submission and a ready-made n-peer consortium on the simulator."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from ..certless import (
    KGD,
    DeviceKeyPair,
    derive_keys,
    gen_device_secret,
    gen_partial_secret,
    setup,
    sign_tx,
)
from ..sim import Network, NetworkModel, Simulator
from .block import GenesisConfig
from .pbft import Behavior, CommitReply, Peer, PeerCosts, Query, QueryReply, SubmitTx, TxAck
from .state import Flags, WorldState, encode_registration
from .tx import Action, LedgerTransaction, ReputationSnapshot, SignedTx, create_tx

EPOCH_MS = 1_700_000_000_000


@dataclass
class Receipt:
    digest: bytes
    submitted_at: float
    status: str = "pending"  # committed | rejected | submission-timeout | commit-timeout
    attempts: int = 0
    acks: dict = field(default_factory=dict)
    replies: dict = field(default_factory=dict)
    height: int | None = None
    committed_at: float | None = None
    flags: Flags | None = None
    stored: bool = False

    @property
    def done(self) -> bool:
        return self.status != "pending"

    @property
    def latency_ms(self) -> float | None:
        return None if self.committed_at is None else self.committed_at - self.submitted_at

    @property
    def delivered(self) -> int:
        return len(self.acks)


class Client:
    """Broadcasts signed transactions and waits for f+1 matching commit replies."""

    def __init__(self, name: str, net: Network, sim: Simulator, n: int, f: int,
                 ack_timeout_ms: float = 150.0, backoff_ms: float = 50.0, max_attempts: int = 5,
                 commit_timeout_ms: float = 10_000.0, resend_ms: float = 1_000.0):
        self.name = name
        self.net, self.sim = net, sim
        self.n, self.f = n, f
        self.ack_timeout_ms, self.backoff_ms = ack_timeout_ms, backoff_ms
        self.max_attempts, self.commit_timeout_ms = max_attempts, commit_timeout_ms
        self.resend_ms = resend_ms
        self.receipts: dict[bytes, Receipt] = {}
        self._envs: dict[bytes, SignedTx] = {}
        self._callbacks: dict[bytes, Callable[[Receipt], None]] = {}
        self._queries: dict[int, Callable[[QueryReply, float], None]] = {}
        self._qid = 0
        net.register(name, self.receive)

    def submit(self, env: SignedTx, callback: Callable[[Receipt], None] | None = None) -> Receipt:
        d = env.digest
        rec = Receipt(d, self.sim.now)
        self.receipts[d] = rec
        self._envs[d] = env
        if callback:
            self._callbacks[d] = callback
        self._attempt(d)
        self.sim.schedule(self.commit_timeout_ms, self._commit_deadline, d)
        return rec

    def _attempt(self, d: bytes) -> None:
        rec = self.receipts[d]
        if rec.done:
            return
        rec.attempts += 1
        self.net.broadcast(self.name, range(self.n), SubmitTx(self._envs[d], rec.attempts))
        self.sim.schedule(self.ack_timeout_ms, self._check_acks, d, rec.attempts)

    def _check_acks(self, d: bytes, attempt: int) -> None:
        rec = self.receipts[d]
        if rec.done or rec.attempts != attempt:
            return
        if len(rec.acks) >= self.f + 1:
            self.sim.schedule(self.resend_ms, self._resend, d)
            return
        if rec.attempts >= self.max_attempts:
            self._finish(rec, "submission-timeout")
            return
        self.sim.schedule(self.backoff_ms * 2 ** (rec.attempts - 1), self._attempt, d)

    def _resend(self, d: bytes) -> None:
        # delivered but unconfirmed: replies may have been lost, ask again
        rec = self.receipts[d]
        if rec.done:
            return
        self.net.broadcast(self.name, range(self.n), SubmitTx(self._envs[d], rec.attempts))
        self.sim.schedule(self.resend_ms, self._resend, d)

    def _commit_deadline(self, d: bytes) -> None:
        rec = self.receipts[d]
        if not rec.done:
            self._finish(rec, "commit-timeout" if len(rec.acks) >= self.f + 1 else "submission-timeout")

    def _finish(self, rec: Receipt, status: str) -> None:
        rec.status = status
        if status == "committed":
            rec.committed_at = self.sim.now
        self._envs.pop(rec.digest, None)
        cb = self._callbacks.pop(rec.digest, None)
        if cb:
            cb(rec)

    def receive(self, src, msg) -> None:
        if isinstance(msg, TxAck):
            rec = self.receipts.get(msg.digest)
            if rec is None or rec.done:
                return
            rec.acks[src] = msg
            if rec.flags is None or msg.accepted:
                rec.flags = msg.flags
            if sum(not a.accepted for a in rec.acks.values()) >= self.f + 1:
                self._finish(rec, "rejected")
        elif isinstance(msg, CommitReply):
            rec = self.receipts.get(msg.digest)
            if rec is None or rec.done:
                return
            rec.replies[src] = (msg.height, msg.block)
            same = sum(1 for v in rec.replies.values() if v == (msg.height, msg.block))
            if same >= self.f + 1:
                rec.height = msg.height
                self._finish(rec, "committed")
        elif isinstance(msg, QueryReply):
            cb = self._queries.pop(msg.qid, None)
            if cb:
                cb(msg, self.sim.now)

    def query(self, peer: int, kind: str, key, callback: Callable[[QueryReply, float], None],
              requester: str = "") -> int:
        self._qid += 1
        self._queries[self._qid] = callback
        self.net.send(self.name, peer, Query(self._qid, kind, key, requester))
        return self._qid

    def forget_query(self, qid: int) -> None:
        self._queries.pop(qid, None)


class Consortium:
    """n PBFT peers that double as the KGD cosigners, plus one client."""

    def __init__(self, n: int = 4, f: int = 1, seed: int = 0, level: str = "toy",
                 model: NetworkModel | None = None, behaviors: dict[int, Behavior] | None = None,
                 timeout_ms: float = 400.0, or_flags: bool = False, costs: PeerCosts | None = None,
                 slowdown=None, batch_ms: float = 5.0, max_batch: int = 256, client_kwargs: dict | None = None):
        self.seed = seed
        self.rng = random.Random(seed)
        self.sim = Simulator(seed)
        self.system = setup(level, seed)
        self.kgd = KGD.create(self.system, n, self.rng)
        self.genesis = GenesisConfig(self.system, self.kgd.public.cosigner_publics, f,
                                     or_flags=or_flags, epoch_ms=EPOCH_MS)
        self.net = Network(self.sim, model or NetworkModel(), seed + 1)
        behaviors = behaviors or {}
        self.peers = [Peer(i, self.genesis, self.kgd.cosigners[i], self.net, self.sim,
                           behaviors.get(i, Behavior.HONEST), timeout_ms, batch_ms, max_batch,
                           costs, slowdown, seed) for i in range(n)]
        self.client = Client("client", self.net, self.sim, n, f, **(client_kwargs or {}))
        self.keys: dict[str, DeviceKeyPair] = {}

    @property
    def public(self):
        return self.genesis.public

    @property
    def honest(self) -> list[Peer]:
        return [p for p in self.peers if p.behavior is Behavior.HONEST]

    def now_ms(self) -> int:
        return int(EPOCH_MS + self.sim.now)

    def sign(self, keys: DeviceKeyPair, tx: LedgerTransaction) -> SignedTx:
        raw = tx.encode()
        return SignedTx(raw, sign_tx(self.public, keys, raw, self.rng), keys.pk.encode(self.public.group))

    def registration_tx(self, device_id: str) -> tuple[DeviceKeyPair, SignedTx]:
        """Run key issuance with the peers' cosigner halves and wrap it as a REGISTER tx."""
        secret = gen_device_secret(self.system, device_id, self.rng)
        partial = gen_partial_secret(self.kgd, device_id, secret.commitment)
        keys = derive_keys(self.public, partial, secret)
        body = encode_registration(self.public, partial.message, partial.sigma)
        tx = create_tx(device_id, (), Action.REGISTER, body=body, timestamp=self.now_ms())
        return keys, self.sign(keys, tx)

    def data_tx(self, keys: DeviceKeyPair, action, ads: bytes = b"", acl=(), pointer: bytes = b"",
                reputation: ReputationSnapshot | None = None, timestamp: int | None = None,
                state: WorldState | None = None) -> SignedTx:
        ts = self.now_ms() if timestamp is None else timestamp
        tx = create_tx(keys.id, acl, action, ads, pointer, reputation, timestamp=ts, state=state)
        return self.sign(keys, tx)

    def submit(self, env: SignedTx, callback=None) -> Receipt:
        return self.client.submit(env, callback)

    def run(self, until_ms: float | None = None, max_events: int | None = None) -> None:
        self.sim.run(until=until_ms, max_events=max_events)

    def wait(self, receipts, limit_ms: float = 60_000.0) -> None:
        """Advance simulated time until every receipt is final or ``limit_ms`` passes."""
        receipts = list(receipts)
        end = self.sim.now + limit_ms
        while any(not r.done for r in receipts) and self.sim.now < end:
            if not self.sim.step():
                break

    def register(self, device_id: str) -> tuple[DeviceKeyPair, Receipt]:
        keys, env = self.registration_tx(device_id)
        rec = self.submit(env)
        self.wait([rec])
        if rec.status == "committed":
            self.keys[device_id] = keys
        return keys, rec

    def settle(self, quiet_ms: float = 5_000.0) -> None:
        """Let in-flight protocol traffic finish (timers included)."""
        self.sim.run(until=self.sim.now + quiet_ms)

    def divergence(self) -> list[int]:
        """Heights at which two honest peers hold different blocks."""
        bad = []
        chains = [p.chain for p in self.honest]
        top = max(len(c) for c in chains)
        for h in range(top):
            digests = {c[h].digest for c in chains if len(c) > h}
            if len(digests) > 1:
                bad.append(h)
        return bad
